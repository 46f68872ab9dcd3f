#pragma once

// Federated objectives f(X) = (1/n) sum_i f_i(X) with exact loss/gradient
// oracles and an additive-noise stochastic gradient channel.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedlab/params.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

// Zero-mean Gaussian noise with E||noise||_F^2 = sigma^2 spread evenly over all
// entries of the parameter (entrywise variance sigma^2 / total entries).
class NoiseChannel {
 public:
  NoiseChannel(double sigma, Rng rng);
  double sigma() const noexcept { return sigma_; }
  Params draw(const Params& like);

 private:
  double sigma_;
  Rng rng_;
};

struct Heterogeneity {
  double zeta = 0.0;
  // True when the value is the gradient-dispersion proxy at the supplied point
  // rather than the exact value at the global minimizer.
  bool proxy = false;
};

class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::string name() const = 0;
  virtual std::size_t num_clients() const = 0;
  virtual const std::vector<LayerSpec>& layers() const = 0;
  virtual Params initial_point() const = 0;

  // Throw ProtocolError for an unknown client and DimensionError for a bad shape.
  virtual double loss(std::size_t client, const Params& x) const = 0;
  virtual Params grad(std::size_t client, const Params& x) const = 0;

  // grad + one draw of the channel.
  Params stoch_grad(std::size_t client, const Params& x, NoiseChannel& channel) const;

  double global_loss(const Params& x) const;
  Params global_grad(const Params& x) const;

  // Default: proxy sqrt((1/n) sum_i ||grad f_i(x) - grad f(x)||_F^2) at `at`.
  virtual Heterogeneity heterogeneity(const Params& at) const;

  virtual std::optional<double> accuracy(const Params&) const { return std::nullopt; }

  // rho = sup ||X||_trace / ||X||_F over the parameter space, block-diagonal view:
  // sqrt(sum of min(rows, cols) over layers). Bridges Frobenius noise bounds to the dual norm.
  double dual_frobenius_ratio() const;

 protected:
  void check_client(std::size_t client) const;
  void check_point(const Params& x) const;
};

// Two clients, f_1(x) = x^2/2 and f_2(x) = (x + a)^2/2, scalar parameter.
class CounterexampleProblem final : public Problem {
 public:
  explicit CounterexampleProblem(double a = 1.0, double x0 = -0.25);

  std::string name() const override { return "counterexample"; }
  std::size_t num_clients() const override { return 2; }
  const std::vector<LayerSpec>& layers() const override { return layers_; }
  Params initial_point() const override;
  double loss(std::size_t client, const Params& x) const override;
  Params grad(std::size_t client, const Params& x) const override;
  Heterogeneity heterogeneity(const Params& at) const override;

  double a() const noexcept { return a_; }
  double minimizer() const noexcept { return -a_ / 2.0; }
  // ||grad f(x0)||^2 at the stagnation point x0 = -a/4: a^2/16.
  double stagnation_floor() const noexcept { return a_ * a_ / 16.0; }

 private:
  double a_;
  double x0_;
  std::vector<LayerSpec> layers_;
};

struct MatrixQuadraticOptions {
  std::size_t clients = 8;
  std::size_t k = 12;   // rows of A_i and B_i
  std::size_t d1 = 8;   // X is d1 x d2
  std::size_t d2 = 6;
  // Per-client minimizers are X_c + heterogeneity * Z_i; 0 gives a shared stationary point.
  double heterogeneity = 1.0;
  // A_i = A_c + a_spread * E_i / sqrt(k).
  double a_spread = 0.3;
  // If > 0, A_c has this rank (approximately low-rank Hessians).
  std::size_t low_rank = 0;
  double b_scale = 1.0;
  double init_scale = 0.0;
  // Identical A_i and B_i for every client.
  bool identical_clients = false;
  std::uint64_t seed = 0;
};

// f_i(X) = 1/2 ||A_i X - B_i||_F^2.
class MatrixQuadraticProblem final : public Problem {
 public:
  explicit MatrixQuadraticProblem(const MatrixQuadraticOptions& opts);
  MatrixQuadraticProblem(std::vector<Mat> a, std::vector<Mat> b, Mat x0);

  std::string name() const override { return "matrix_quadratic"; }
  std::size_t num_clients() const override { return a_.size(); }
  const std::vector<LayerSpec>& layers() const override { return layers_; }
  Params initial_point() const override { return {x0_}; }
  double loss(std::size_t client, const Params& x) const override;
  Params grad(std::size_t client, const Params& x) const override;
  Heterogeneity heterogeneity(const Params& at) const override;

  // argmin of the average objective (minimum-norm if not unique).
  const Mat& minimizer() const noexcept { return x_star_; }
  // Frobenius-geometry smoothness: max_i s_1(A_i)^2.
  double smoothness() const noexcept { return lipschitz_; }
  // Constant with ||grad_i(X) - grad_i(Y)||_trace <= bound * ||X - Y||_sp.
  double trace_spectral_smoothness_bound() const noexcept;
  const Mat& a(std::size_t i) const { return a_.at(i); }
  const Mat& b(std::size_t i) const { return b_.at(i); }

 private:
  void finalize();

  std::vector<Mat> a_;
  std::vector<Mat> b_;
  Mat x0_;
  Mat x_star_;
  double lipschitz_ = 0.0;
  std::vector<LayerSpec> layers_;
};

struct Dataset {
  Mat features;             // samples x feature_dim
  std::vector<int> labels;  // in [0, num_classes)
  int num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::vector<std::size_t> label_counts() const;
};

struct SyntheticDataOptions {
  std::size_t samples = 2000;
  std::size_t feature_dim = 16;
  int classes = 10;
  double class_separation = 2.0;
  std::uint64_t seed = 0;
};

// Gaussian class clusters with random means.
Dataset make_synthetic_dataset(const SyntheticDataOptions& opts);

// Binary container: `<stem>.bin` holds features (f64 little-endian, row-major)
// followed by labels (i32 little-endian); `<stem>.json` is the sidecar with
// shapes, byte offsets and per-label counts.
void write_dataset(const Dataset& d, const std::filesystem::path& stem);
Dataset read_dataset(const std::filesystem::path& stem);

// Per label, proportions ~ Dirichlet(beta * 1_n) decide how that label's items
// are split across clients. Empty shards take one item from the largest shard.
// Throws ConfigError if beta <= 0, n == 0 or there are fewer items than clients.
std::vector<std::vector<std::size_t>> dirichlet_partition(const std::vector<int>& labels,
                                                          std::size_t n, double beta, Rng& rng);

// Shannon entropy (nats) of a shard's label histogram.
double label_entropy(const std::vector<int>& labels, const std::vector<std::size_t>& shard,
                     int num_classes);

struct ToyClassificationOptions {
  std::size_t clients = 16;
  std::size_t hidden = 32;
  double beta = 0.1;
  SyntheticDataOptions data;
  std::uint64_t seed = 0;
  // When set, load the dataset from here if present, otherwise generate and write it.
  std::optional<std::filesystem::path> dataset_path;
};

// One-hidden-layer tanh perceptron with softmax cross-entropy.
// Layers: W1 (hidden x in), b1 (hidden), W2 (classes x hidden), b2 (classes).
class ToyClassificationProblem final : public Problem {
 public:
  explicit ToyClassificationProblem(const ToyClassificationOptions& opts);
  ToyClassificationProblem(Dataset data, std::vector<std::vector<std::size_t>> shards,
                           std::size_t hidden, std::uint64_t seed);

  std::string name() const override { return "toy_classification"; }
  std::size_t num_clients() const override { return shards_.size(); }
  const std::vector<LayerSpec>& layers() const override { return layers_; }
  Params initial_point() const override { return x0_; }
  double loss(std::size_t client, const Params& x) const override;
  Params grad(std::size_t client, const Params& x) const override;
  // Training-set accuracy of the global model.
  std::optional<double> accuracy(const Params& x) const override;

  const Dataset& data() const noexcept { return data_; }
  const std::vector<std::vector<std::size_t>>& shards() const noexcept { return shards_; }

 private:
  void init(std::uint64_t seed);
  // Returns the mean loss; writes the gradient when `g` is non-null.
  double evaluate(const std::vector<std::size_t>& rows, const Params& x, Params* g) const;

  Dataset data_;
  std::vector<std::vector<std::size_t>> shards_;
  std::size_t hidden_;
  std::vector<LayerSpec> layers_;
  Params x0_;
};

}  // namespace fedlab
