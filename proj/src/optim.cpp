#include "fedlab/optim.hpp"

#include <algorithm>
#include <cmath>

#include "fedlab/error.hpp"

namespace fedlab {

MomentumState momentum_update(const MomentumState& state, const Mat& grad) {
  require_same_shape(state.m, grad, "momentum_update");
  MomentumState next{state.m, state.alpha};
  auto m = next.m.data();
  const auto g = grad.data();
  const double keep = 1.0 - state.alpha;
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = keep * m[i] + state.alpha * g[i];
  return next;
}

Mat DirectionMap::operator()(const Mat& v) const {
  switch (mode_) {
    case Mode::Exact: return lmo_exact(v, kind_);
    case Mode::NewtonSchulz: return lmo_newton_schulz(v, ns_);
    case Mode::Identity: return -v;
  }
  return -v;
}

std::string DirectionMap::describe() const {
  switch (mode_) {
    case Mode::Exact: return "exact:" + kind_.name();
    case Mode::NewtonSchulz: return "newton_schulz:T=" + std::to_string(ns_.iters);
    case Mode::Identity: return "identity";
  }
  return "?";
}

Mat muon_corrected_direction(const Mat& m, const Mat& c_local, const Mat& c_global,
                             const DirectionMap& map) {
  require_same_shape(m, c_local, "muon_corrected_direction");
  require_same_shape(m, c_global, "muon_corrected_direction");
  Mat v = m;
  v -= c_local;
  v += c_global;
  return map(v);
}

std::pair<SgdMomentumState, Mat> sgd_momentum_step(const SgdMomentumState& state, const Mat& param,
                                                    const Mat& grad, double eta) {
  require_same_shape(param, grad, "sgd_momentum_step");
  require_same_shape(state.buf, grad, "sgd_momentum_step");
  if (!(eta > 0.0)) throw ConfigError("sgd_momentum_step: eta must be positive");
  SgdMomentumState next{state.buf * state.beta, state.beta};
  next.buf += grad;
  Mat x = param;
  x.axpy(-eta, next.buf);
  return {std::move(next), std::move(x)};
}

std::pair<AdamState, Mat> adam_step(const AdamState& state, const Mat& param, const Mat& grad,
                                    double eta) {
  require_same_shape(param, grad, "adam_step");
  require_same_shape(state.m, grad, "adam_step");
  require_same_shape(state.v, grad, "adam_step");
  if (!(eta > 0.0)) throw ConfigError("adam_step: eta must be positive");
  AdamState next = state;
  next.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(next.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(next.t));
  Mat x = param;
  auto m = next.m.data();
  auto v = next.v.data();
  auto xs = x.data();
  const auto g = grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    xs[i] -= eta * mhat / (std::sqrt(vhat) + state.eps);
  }
  return {std::move(next), std::move(x)};
}

double per_layer_stepsize(double eta, const LayerSpec& spec, StepScaling rule) {
  if (!(eta > 0.0)) throw ConfigError("per_layer_stepsize: eta must be positive");
  if (rule == StepScaling::None || spec.role != LayerRole::Matrix) return eta;
  return eta * std::sqrt(static_cast<double>(std::max(spec.rows, spec.cols)));
}

}  // namespace fedlab
