#pragma once

// Local optimizer building blocks. All updates are value-in/value-out so that
// clients can be stepped independently.

#include <string>
#include <utility>

#include "fedlab/linalg.hpp"
#include "fedlab/lmo.hpp"
#include "fedlab/mat.hpp"
#include "fedlab/params.hpp"

namespace fedlab {

// Exponential moving average of stochastic gradients: m <- (1 - alpha) m + alpha g.
struct MomentumState {
  Mat m;
  double alpha = 1.0;
};

MomentumState momentum_update(const MomentumState& state, const Mat& grad);

// Maps a (corrected) momentum to an update direction.
class DirectionMap {
 public:
  enum class Mode { Exact, NewtonSchulz, Identity };

  static DirectionMap exact(NormKind kind) { return DirectionMap(Mode::Exact, kind, {}); }
  static DirectionMap newton_schulz(NsConfig cfg) {
    return DirectionMap(Mode::NewtonSchulz, NormKind::spectral(), cfg);
  }
  // "No LMO": the direction is -v itself, which turns the Muon step into an SGD step.
  static DirectionMap identity() { return DirectionMap(Mode::Identity, NormKind::frobenius(), {}); }

  Mode mode() const noexcept { return mode_; }
  // Norm whose unit ball contains every output (Exact, NewtonSchulz).
  const NormKind& ball() const noexcept { return kind_; }
  const NsConfig& ns() const noexcept { return ns_; }
  bool is_lmo() const noexcept { return mode_ != Mode::Identity; }

  Mat operator()(const Mat& v) const;
  std::string describe() const;

 private:
  DirectionMap(Mode m, NormKind k, NsConfig ns) : mode_(m), kind_(k), ns_(ns) {}
  Mode mode_;
  NormKind kind_;
  NsConfig ns_;
};

// lmo(m - c_local + c_global) under the configured map.
Mat muon_corrected_direction(const Mat& m, const Mat& c_local, const Mat& c_global,
                             const DirectionMap& map);

// Heavy-ball momentum: buf <- beta * buf + g; x <- x - eta * buf. beta = 0 is plain SGD.
struct SgdMomentumState {
  Mat buf;
  double beta = 0.0;
};

std::pair<SgdMomentumState, Mat> sgd_momentum_step(const SgdMomentumState& state, const Mat& param,
                                                    const Mat& grad, double eta);

struct AdamState {
  Mat m;
  Mat v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
};

// Bias-corrected Adam.
std::pair<AdamState, Mat> adam_step(const AdamState& state, const Mat& param, const Mat& grad,
                                    double eta);

enum class StepScaling { None, SqrtMaxDim };

// Matrix layers: eta * sqrt(max(rows, cols)); vector and scalar layers: eta.
double per_layer_stepsize(double eta, const LayerSpec& spec,
                          StepScaling rule = StepScaling::SqrtMaxDim);

}  // namespace fedlab
