#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "json.hpp"

#include "fedlab/error.hpp"
#include "fedlab/harness/invariants.hpp"
#include "fedlab/problems.hpp"

using namespace fedlab;
namespace fs = std::filesystem;

namespace {

// Two clients with hand-picked 3x2 data; reference values from numpy.
MatrixQuadraticProblem hand_quadratic() {
  std::vector<Mat> a = {Mat{{1.0, 0.0}, {0.0, 2.0}, {1.0, 1.0}},
                        Mat{{2.0, 1.0}, {0.0, 1.0}, {1.0, 0.0}}};
  std::vector<Mat> b = {Mat{{1.0, 0.0}, {0.0, 1.0}, {1.0, 2.0}},
                        Mat{{0.0, 1.0}, {1.0, 1.0}, {2.0, 0.0}}};
  return MatrixQuadraticProblem(std::move(a), std::move(b), Mat(2, 2));
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fedlab_test_problems_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Counterexample, AnalyticQuantities) {
  const CounterexampleProblem p(1.0, -0.25);
  EXPECT_EQ(p.num_clients(), 2u);
  EXPECT_EQ(p.minimizer(), -0.5);
  EXPECT_EQ(p.stagnation_floor(), 0.0625);
  const double z = p.heterogeneity(p.initial_point()).zeta;
  EXPECT_EQ(z * z, 0.25);
  EXPECT_FALSE(p.heterogeneity(p.initial_point()).proxy);
  EXPECT_EQ(p.global_grad(p.initial_point())[0](0, 0), 0.25);
  EXPECT_EQ(p.global_loss(p.initial_point()), 0.5 * (0.5 * 0.0625 + 0.5 * 0.5625));
  EXPECT_EQ(CounterexampleProblem(2.0, -0.5).stagnation_floor(), 0.25);
  const auto c = harness::check_counterexample_analytics();
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Counterexample, Validation) {
  EXPECT_THROW(CounterexampleProblem(0.0), ConfigError);
  const CounterexampleProblem p;
  EXPECT_THROW(p.loss(2, p.initial_point()), ProtocolError);
  EXPECT_THROW(p.grad(0, {Mat(2, 1)}), DimensionError);
  EXPECT_THROW(p.grad(0, {}), DimensionError);
}

TEST(MatrixQuadratic, HandComputedValues) {
  const MatrixQuadraticProblem p = hand_quadratic();
  EXPECT_NEAR(p.global_loss(p.initial_point()), 3.5, 1e-14);
  const Mat g = p.global_grad(p.initial_point())[0];
  EXPECT_LT(max_abs(g - Mat{{-2.0, -2.0}, {-1.0, -3.0}}), 1e-14);
  EXPECT_LT(max_abs(p.minimizer() - Mat{{0.55, 0.25}, {0.05, 0.75}}), 1e-14);
  EXPECT_NEAR(p.smoothness(), 6.0, 1e-13);
  EXPECT_LT(frobenius_norm(p.global_grad({p.minimizer()})), 1e-13);
}

TEST(MatrixQuadratic, GeneratedHomogeneousHasZeroHeterogeneity) {
  MatrixQuadraticOptions o;
  o.heterogeneity = 0.0;
  o.seed = 5;
  const MatrixQuadraticProblem p(o);
  EXPECT_LT(p.heterogeneity(p.initial_point()).zeta, 1e-10);
  o.heterogeneity = 1.0;
  const MatrixQuadraticProblem q(o);
  EXPECT_GT(q.heterogeneity(q.initial_point()).zeta, 1.0);
}

TEST(MatrixQuadratic, SmoothnessBoundsGradientDifferences) {
  MatrixQuadraticOptions o;
  o.seed = 9;
  const MatrixQuadraticProblem p(o);
  Rng rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    Mat x(o.d1, o.d2), y(o.d1, o.d2);
    for (double& v : x.data()) v = g(rng);
    for (double& v : y.data()) v = g(rng);
    for (std::size_t i = 0; i < p.num_clients(); ++i) {
      const double lhs = frobenius_norm(p.grad(i, {x})[0] - p.grad(i, {y})[0]);
      EXPECT_LE(lhs, p.smoothness() * frobenius_norm(x - y) * (1.0 + 1e-12));
      const double tr = norm(p.grad(i, {x})[0] - p.grad(i, {y})[0], NormKind::trace());
      EXPECT_LE(tr, p.trace_spectral_smoothness_bound() * norm(x - y, NormKind::spectral()) *
                        (1.0 + 1e-12));
    }
  }
}

TEST(MatrixQuadratic, SeedDeterminism) {
  MatrixQuadraticOptions o;
  o.seed = 77;
  const MatrixQuadraticProblem a(o), b(o);
  for (std::size_t i = 0; i < a.num_clients(); ++i) {
    EXPECT_EQ(a.a(i), b.a(i));
    EXPECT_EQ(a.b(i), b.b(i));
  }
}

TEST(Problems, GradientsMatchFiniteDifferences) {
  const auto c = harness::check_gradients(41, 1e-5);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(NoiseChannel, MomentsAndValidation) {
  const auto c = harness::check_noise_channel(20000, 43);
  EXPECT_TRUE(c.pass) << c.detail;
  EXPECT_THROW(NoiseChannel(-1.0, Rng(1)), ConfigError);
}

TEST(Toy, ZeroWeightsGiveLogClasses) {
  ToyClassificationOptions o;
  o.clients = 4;
  o.data.samples = 200;
  const ToyClassificationProblem p(o);
  Params zero = zeros_like(p.layers());
  EXPECT_NEAR(p.global_loss(zero), std::log(10.0), 1e-12);
  ASSERT_EQ(p.layers().size(), 4u);
  EXPECT_EQ(p.layers()[0].role, LayerRole::Matrix);
  EXPECT_EQ(p.layers()[1].role, LayerRole::Vector);
  const auto acc = p.accuracy(p.initial_point());
  ASSERT_TRUE(acc.has_value());
  EXPECT_GE(*acc, 0.0);
  EXPECT_LE(*acc, 1.0);
}

TEST(Dirichlet, PartitionProperties) {
  const auto c = harness::check_dirichlet_partition(47);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Dirichlet, SmallBetaConcentratesLabels) {
  std::vector<int> labels(2000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  auto mean_entropy = [&](double beta) {
    Rng rng(8);
    const auto shards = dirichlet_partition(labels, 16, beta, rng);
    double s = 0.0;
    for (const auto& sh : shards) s += label_entropy(labels, sh, 10);
    return s / 16.0;
  };
  EXPECT_LT(mean_entropy(0.1), mean_entropy(100.0));
  EXPECT_GT(mean_entropy(100.0), 0.9 * std::log(10.0));
}

TEST(Dirichlet, Validation) {
  std::vector<int> labels = {0, 1, 0};
  Rng rng(1);
  EXPECT_THROW(dirichlet_partition(labels, 2, 0.0, rng), ConfigError);
  EXPECT_THROW(dirichlet_partition(labels, 4, 1.0, rng), ConfigError);
  EXPECT_THROW(dirichlet_partition(labels, 0, 1.0, rng), ConfigError);
}

TEST(Dataset, BinaryRoundTrip) {
  const fs::path dir = scratch("roundtrip");
  SyntheticDataOptions o;
  o.samples = 37;
  o.feature_dim = 5;
  o.classes = 4;
  const Dataset d = make_synthetic_dataset(o);
  write_dataset(d, dir / "toy");
  EXPECT_EQ(fs::file_size(dir / "toy.bin"), 37u * 5u * 8u + 37u * 4u);
  const Dataset r = read_dataset(dir / "toy");
  EXPECT_EQ(r.features, d.features);
  EXPECT_EQ(r.labels, d.labels);
  EXPECT_EQ(r.num_classes, 4);

  std::ifstream side(dir / "toy.json");
  const auto j = nlohmann::json::parse(side);
  EXPECT_EQ(j.at("format"), "fedlab-tensor-v1");
  const auto counts = j.at("label_counts").get<std::vector<std::size_t>>();
  EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), std::size_t{0}), 37u);
  EXPECT_EQ(counts, d.label_counts());
}

TEST(Dataset, TruncatedFileRejected) {
  const fs::path dir = scratch("truncated");
  SyntheticDataOptions o;
  o.samples = 10;
  write_dataset(make_synthetic_dataset(o), dir / "toy");
  fs::resize_file(dir / "toy.bin", 100);
  EXPECT_THROW(read_dataset(dir / "toy"), Error);
}

TEST(Toy, DatasetPathIsReused) {
  const fs::path dir = scratch("reuse");
  ToyClassificationOptions o;
  o.clients = 4;
  o.data.samples = 100;
  o.dataset_path = dir / "data";
  const ToyClassificationProblem first(o);
  EXPECT_TRUE(fs::exists(dir / "data.bin"));
  o.data.seed = 999;  // ignored: the file on disk wins
  const ToyClassificationProblem second(o);
  EXPECT_EQ(first.data().features, second.data().features);
}

TEST(Problem, DualFrobeniusRatio) {
  EXPECT_EQ(CounterexampleProblem(1.0).dual_frobenius_ratio(), 1.0);
  MatrixQuadraticOptions q;
  q.clients = 2;
  q.d1 = 4;
  q.d2 = 3;
  EXPECT_DOUBLE_EQ(MatrixQuadraticProblem(q).dual_frobenius_ratio(), std::sqrt(3.0));
  // W1 32x16, b1, W2 10x32, b2: 16 + 1 + 10 + 1.
  ToyClassificationOptions o;
  o.clients = 4;
  o.data.samples = 200;
  EXPECT_DOUBLE_EQ(ToyClassificationProblem(o).dual_frobenius_ratio(), std::sqrt(28.0));
}
