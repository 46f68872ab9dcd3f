#include "fedlab/problems.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "fedlab/error.hpp"
#include "fedlab/linalg.hpp"

namespace fedlab {

// ---------------------------------------------------------------- noise

NoiseChannel::NoiseChannel(double sigma, Rng rng) : sigma_(sigma), rng_(std::move(rng)) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma))
    throw ConfigError("noise channel: sigma must be finite and >= 0");
}

Params NoiseChannel::draw(const Params& like) {
  Params out = zeros_like(like);
  if (sigma_ == 0.0) return out;
  const double sd = sigma_ / std::sqrt(static_cast<double>(total_size(like)));
  std::normal_distribution<double> gauss(0.0, sd);
  for (auto& m : out)
    for (double& v : m.data()) v = gauss(rng_);
  return out;
}

// ---------------------------------------------------------------- problem base

Params Problem::stoch_grad(std::size_t client, const Params& x, NoiseChannel& channel) const {
  Params g = grad(client, x);
  if (channel.sigma() > 0.0) axpy(g, 1.0, channel.draw(g));
  return g;
}

double Problem::global_loss(const Params& x) const {
  double s = 0.0;
  for (std::size_t i = 0; i < num_clients(); ++i) s += loss(i, x);
  return s / static_cast<double>(num_clients());
}

Params Problem::global_grad(const Params& x) const {
  Params g = zeros_like(layers());
  const double w = 1.0 / static_cast<double>(num_clients());
  for (std::size_t i = 0; i < num_clients(); ++i) axpy(g, w, grad(i, x));
  return g;
}

double Problem::dual_frobenius_ratio() const {
  std::size_t rank = 0;
  for (const LayerSpec& l : layers()) rank += std::min(l.rows, l.cols);
  return std::sqrt(static_cast<double>(rank));
}

Heterogeneity Problem::heterogeneity(const Params& at) const {
  const Params mean = global_grad(at);
  double s = 0.0;
  for (std::size_t i = 0; i < num_clients(); ++i) {
    const double d = frobenius_norm(sub(grad(i, at), mean));
    s += d * d;
  }
  return {std::sqrt(s / static_cast<double>(num_clients())), true};
}

void Problem::check_client(std::size_t client) const {
  if (client >= num_clients())
    throw ProtocolError("unknown client id " + std::to_string(client) + " (problem has " +
                        std::to_string(num_clients()) + " clients)");
}

void Problem::check_point(const Params& x) const {
  const auto& ls = layers();
  if (x.size() != ls.size())
    throw DimensionError(name() + ": expected " + std::to_string(ls.size()) + " parameter blocks");
  for (std::size_t i = 0; i < ls.size(); ++i)
    if (x[i].rows() != ls[i].rows || x[i].cols() != ls[i].cols)
      throw DimensionError(name() + ": block " + std::to_string(i) + " has shape " +
                           shape_str(x[i]) + ", expected " + std::to_string(ls[i].rows) + "x" +
                           std::to_string(ls[i].cols));
}

// ---------------------------------------------------------------- counterexample

CounterexampleProblem::CounterexampleProblem(double a, double x0) : a_(a), x0_(x0) {
  if (!(a > 0.0)) throw ConfigError("counterexample: a must be positive");
  layers_.push_back(LayerSpec{LayerRole::Matrix, 1, 1, "x"});
}

Params CounterexampleProblem::initial_point() const { return {Mat::scalar(x0_)}; }

double CounterexampleProblem::loss(std::size_t client, const Params& x) const {
  check_client(client);
  check_point(x);
  const double v = x[0](0, 0) + (client == 0 ? 0.0 : a_);
  return 0.5 * v * v;
}

Params CounterexampleProblem::grad(std::size_t client, const Params& x) const {
  check_client(client);
  check_point(x);
  return {Mat::scalar(x[0](0, 0) + (client == 0 ? 0.0 : a_))};
}

Heterogeneity CounterexampleProblem::heterogeneity(const Params&) const {
  // grad f_1(x*) = -a/2, grad f_2(x*) = a/2.
  return {a_ / 2.0, false};
}

// ---------------------------------------------------------------- matrix quadratic

namespace {

Mat gaussian(std::size_t r, std::size_t c, double sd, Rng& rng) {
  std::normal_distribution<double> g(0.0, sd);
  Mat m(r, c);
  for (double& v : m.data()) v = g(rng);
  return m;
}

}  // namespace

MatrixQuadraticProblem::MatrixQuadraticProblem(const MatrixQuadraticOptions& o) {
  if (o.clients == 0 || o.k == 0 || o.d1 == 0 || o.d2 == 0)
    throw ConfigError("matrix_quadratic: clients, k, d1, d2 must be positive");
  if (o.heterogeneity < 0.0 || o.a_spread < 0.0)
    throw ConfigError("matrix_quadratic: heterogeneity and a_spread must be >= 0");
  Rng rng = make_rng({o.seed, static_cast<std::uint64_t>(Stream::Data)});
  const double sk = 1.0 / std::sqrt(static_cast<double>(o.k));
  Mat a_common = o.low_rank > 0
                     ? matmul(gaussian(o.k, o.low_rank, sk, rng),
                              gaussian(o.low_rank, o.d1,
                                       1.0 / std::sqrt(static_cast<double>(o.low_rank)), rng)) *
                           std::sqrt(static_cast<double>(o.low_rank) /
                                     static_cast<double>(std::min(o.k, o.d1)))
                     : gaussian(o.k, o.d1, sk, rng);
  const Mat x_common = gaussian(o.d1, o.d2, 1.0, rng);
  for (std::size_t i = 0; i < o.clients; ++i) {
    if (o.identical_clients && i > 0) {
      a_.push_back(a_.front());
      b_.push_back(b_.front());
      continue;
    }
    Mat ai = a_common;
    if (o.a_spread > 0.0) ai.axpy(o.a_spread, gaussian(o.k, o.d1, sk, rng));
    Mat target = x_common;
    if (o.heterogeneity > 0.0) target.axpy(o.heterogeneity, gaussian(o.d1, o.d2, 1.0, rng));
    b_.push_back(matmul(ai, target) * o.b_scale);
    a_.push_back(std::move(ai));
  }
  Rng init = make_rng({o.seed, static_cast<std::uint64_t>(Stream::Init)});
  x0_ = o.init_scale > 0.0 ? gaussian(o.d1, o.d2, o.init_scale, init) : Mat(o.d1, o.d2);
  finalize();
}

MatrixQuadraticProblem::MatrixQuadraticProblem(std::vector<Mat> a, std::vector<Mat> b, Mat x0)
    : a_(std::move(a)), b_(std::move(b)), x0_(std::move(x0)) {
  if (a_.empty() || a_.size() != b_.size())
    throw ConfigError("matrix_quadratic: need matching non-empty A and B lists");
  for (std::size_t i = 0; i < a_.size(); ++i) {
    require_same_shape(a_[0], a_[i], "matrix_quadratic A");
    require_same_shape(b_[0], b_[i], "matrix_quadratic B");
  }
  if (a_[0].rows() != b_[0].rows() || x0_.rows() != a_[0].cols() || x0_.cols() != b_[0].cols())
    throw DimensionError("matrix_quadratic: incompatible A, B, X0 shapes");
  finalize();
}

void MatrixQuadraticProblem::finalize() {
  const std::size_t d1 = a_[0].cols();
  const std::size_t d2 = b_[0].cols();
  layers_ = {LayerSpec{LayerRole::Matrix, d1, d2, "X"}};
  Mat h(d1, d1);
  Mat rhs(d1, d2);
  lipschitz_ = 0.0;
  for (std::size_t i = 0; i < a_.size(); ++i) {
    h += matmul_tn(a_[i], a_[i]);
    rhs += matmul_tn(a_[i], b_[i]);
    const double s1 = singular_values(a_[i]).front();
    lipschitz_ = std::max(lipschitz_, s1 * s1);
  }
  x_star_ = psd_solve(h, rhs);
}

double MatrixQuadraticProblem::loss(std::size_t client, const Params& x) const {
  check_client(client);
  check_point(x);
  Mat r = matmul(a_[client], x[0]);
  r -= b_[client];
  const double n = frobenius_norm(r);
  return 0.5 * n * n;
}

Params MatrixQuadraticProblem::grad(std::size_t client, const Params& x) const {
  check_client(client);
  check_point(x);
  Mat r = matmul(a_[client], x[0]);
  r -= b_[client];
  return {matmul_tn(a_[client], r)};
}

Heterogeneity MatrixQuadraticProblem::heterogeneity(const Params&) const {
  double s = 0.0;
  const Params xs{x_star_};
  for (std::size_t i = 0; i < a_.size(); ++i) {
    const double g = frobenius_norm(grad(i, xs));
    s += g * g;
  }
  return {std::sqrt(s / static_cast<double>(a_.size())), false};
}

double MatrixQuadraticProblem::trace_spectral_smoothness_bound() const noexcept {
  // ||A^T A D||_trace <= ||A^T A||_sp * rank(D) * ||D||_sp, and rank(A^T A D) <= k.
  const std::size_t r = std::min({a_[0].rows(), a_[0].cols(), b_[0].cols()});
  return static_cast<double>(r) * lipschitz_;
}

// ---------------------------------------------------------------- datasets

std::vector<std::size_t> Dataset::label_counts() const {
  std::vector<std::size_t> c(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (int y : labels) ++c.at(static_cast<std::size_t>(y));
  return c;
}

Dataset make_synthetic_dataset(const SyntheticDataOptions& o) {
  if (o.samples == 0 || o.feature_dim == 0 || o.classes < 2)
    throw ConfigError("synthetic data: need samples > 0, feature_dim > 0, classes >= 2");
  Rng rng = make_rng({o.seed, static_cast<std::uint64_t>(Stream::Data)});
  const double sd = o.class_separation / std::sqrt(static_cast<double>(o.feature_dim));
  const Mat means = gaussian(static_cast<std::size_t>(o.classes), o.feature_dim, sd, rng);
  Dataset d{Mat(o.samples, o.feature_dim), std::vector<int>(o.samples), o.classes};
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < o.samples; ++i) {
    const int y = static_cast<int>(i % static_cast<std::size_t>(o.classes));
    d.labels[i] = y;
    for (std::size_t j = 0; j < o.feature_dim; ++j)
      d.features(i, j) = means(static_cast<std::size_t>(y), j) + unit(rng);
  }
  return d;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "dataset container is little-endian; add byte swapping for this host");

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

}  // namespace

void write_dataset(const Dataset& d, const std::filesystem::path& stem) {
  const std::size_t n = d.size();
  const std::size_t dim = d.features.cols();
  if (d.features.rows() != n) throw DimensionError("write_dataset: features/labels length mismatch");
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());

  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("write_dataset: cannot open " + with_suffix(stem, ".bin").string());
  const auto f = d.features.data();
  bin.write(reinterpret_cast<const char*>(f.data()),
            static_cast<std::streamsize>(f.size() * sizeof(double)));
  std::vector<std::int32_t> labels(d.labels.begin(), d.labels.end());
  bin.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size() * sizeof(std::int32_t)));
  if (!bin) throw Error("write_dataset: short write");

  nlohmann::json side = {
      {"format", "fedlab-tensor-v1"},
      {"num_samples", n},
      {"num_classes", d.num_classes},
      {"tensors",
       {{{"name", "features"}, {"dtype", "f64le"}, {"shape", {n, dim}}, {"offset", 0}},
        {{"name", "labels"},
         {"dtype", "i32le"},
         {"shape", {n}},
         {"offset", n * dim * sizeof(double)}}}},
      {"label_counts", d.label_counts()},
  };
  std::ofstream js(with_suffix(stem, ".json"), std::ios::trunc);
  js << side.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& stem) {
  std::ifstream js(with_suffix(stem, ".json"));
  if (!js) throw ConfigError("read_dataset: missing sidecar " + with_suffix(stem, ".json").string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("read_dataset: bad sidecar: ") + e.what());
  }
  if (side.value("format", "") != "fedlab-tensor-v1")
    throw ConfigError("read_dataset: unsupported container format");
  const auto& tf = side.at("tensors").at(0);
  const auto& tl = side.at("tensors").at(1);
  if (tf.at("dtype") != "f64le" || tl.at("dtype") != "i32le")
    throw ConfigError("read_dataset: unexpected dtypes");
  const std::size_t n = tf.at("shape").at(0).get<std::size_t>();
  const std::size_t dim = tf.at("shape").at(1).get<std::size_t>();

  std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw ConfigError("read_dataset: missing " + with_suffix(stem, ".bin").string());
  Dataset d{Mat(n, dim), std::vector<int>(n), side.at("num_classes").get<int>()};
  auto f = d.features.data();
  bin.seekg(static_cast<std::streamoff>(tf.at("offset").get<std::size_t>()));
  bin.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(double)));
  std::vector<std::int32_t> labels(n);
  bin.seekg(static_cast<std::streamoff>(tl.at("offset").get<std::size_t>()));
  bin.read(reinterpret_cast<char*>(labels.data()),
           static_cast<std::streamsize>(n * sizeof(std::int32_t)));
  if (!bin) throw ConfigError("read_dataset: truncated tensor file");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= d.num_classes)
      throw ConfigError("read_dataset: label out of range at row " + std::to_string(i));
    d.labels[i] = labels[i];
  }
  if (d.label_counts() != side.at("label_counts").get<std::vector<std::size_t>>())
    throw ConfigError("read_dataset: label counts disagree with sidecar");
  return d;
}

// ---------------------------------------------------------------- partitioning

std::vector<std::vector<std::size_t>> dirichlet_partition(const std::vector<int>& labels,
                                                          std::size_t n, double beta, Rng& rng) {
  if (!(beta > 0.0)) throw ConfigError("dirichlet_partition: beta must be positive");
  if (n == 0) throw ConfigError("dirichlet_partition: need at least one client");
  if (labels.size() < n)
    throw ConfigError("dirichlet_partition: " + std::to_string(labels.size()) +
                      " items cannot fill " + std::to_string(n) + " clients");

  const int num_labels = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(num_labels));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw ConfigError("dirichlet_partition: negative label");
    by_label[static_cast<std::size_t>(labels[i])].push_back(i);
  }

  std::vector<std::vector<std::size_t>> shards(n);
  std::gamma_distribution<double> gamma(beta, 1.0);
  for (auto& items : by_label) {
    std::shuffle(items.begin(), items.end(), rng);
    std::vector<double> p(n);
    double total = 0.0;
    for (double& v : p) total += (v = gamma(rng));
    if (!(total > 0.0)) {
      // Every draw underflowed (tiny beta): the limit puts all mass on one client.
      std::fill(p.begin(), p.end(), 0.0);
      p[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;
      total = 1.0;
    }
    double cum = 0.0;
    std::size_t begin = 0;
    for (std::size_t j = 0; j < n; ++j) {
      cum += p[j] / total;
      const std::size_t end =
          j + 1 == n ? items.size()
                     : std::min(items.size(), static_cast<std::size_t>(
                                                  std::floor(cum * static_cast<double>(items.size()))));
      for (std::size_t t = begin; t < std::max(begin, end); ++t) shards[j].push_back(items[t]);
      begin = std::max(begin, end);
    }
  }

  for (std::size_t j = 0; j < n; ++j) {
    if (!shards[j].empty()) continue;
    auto largest = std::max_element(shards.begin(), shards.end(),
                                     [](const auto& x, const auto& y) { return x.size() < y.size(); });
    shards[j].push_back(largest->back());
    largest->pop_back();
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return shards;
}

double label_entropy(const std::vector<int>& labels, const std::vector<std::size_t>& shard,
                     int num_classes) {
  if (shard.empty()) return 0.0;
  std::vector<double> hist(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t i : shard) hist.at(static_cast<std::size_t>(labels.at(i))) += 1.0;
  double h = 0.0;
  for (double c : hist) {
    if (c == 0.0) continue;
    const double p = c / static_cast<double>(shard.size());
    h -= p * std::log(p);
  }
  return h;
}

// ---------------------------------------------------------------- toy classification

ToyClassificationProblem::ToyClassificationProblem(const ToyClassificationOptions& o)
    : hidden_(o.hidden) {
  if (o.dataset_path && std::filesystem::exists(o.dataset_path->string() + ".json")) {
    data_ = read_dataset(*o.dataset_path);
  } else {
    data_ = make_synthetic_dataset(o.data);
    if (o.dataset_path) write_dataset(data_, *o.dataset_path);
  }
  Rng part = make_rng({o.seed, static_cast<std::uint64_t>(Stream::Partition)});
  shards_ = dirichlet_partition(data_.labels, o.clients, o.beta, part);
  init(o.seed);
}

ToyClassificationProblem::ToyClassificationProblem(Dataset data,
                                                   std::vector<std::vector<std::size_t>> shards,
                                                   std::size_t hidden, std::uint64_t seed)
    : data_(std::move(data)), shards_(std::move(shards)), hidden_(hidden) {
  if (shards_.empty()) throw ConfigError("toy_classification: need at least one shard");
  for (const auto& s : shards_) {
    if (s.empty()) throw ConfigError("toy_classification: empty shard");
    for (std::size_t i : s)
      if (i >= data_.size()) throw ConfigError("toy_classification: shard index out of range");
  }
  init(seed);
}

void ToyClassificationProblem::init(std::uint64_t seed) {
  if (hidden_ == 0) throw ConfigError("toy_classification: hidden width must be positive");
  const std::size_t in = data_.features.cols();
  const auto classes = static_cast<std::size_t>(data_.num_classes);
  layers_ = {LayerSpec{LayerRole::Matrix, hidden_, in, "W1"},
             LayerSpec{LayerRole::Vector, hidden_, 1, "b1"},
             LayerSpec{LayerRole::Matrix, classes, hidden_, "W2"},
             LayerSpec{LayerRole::Vector, classes, 1, "b2"}};
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::Init)});
  x0_ = {gaussian(hidden_, in, 1.0 / std::sqrt(static_cast<double>(in)), rng), Mat(hidden_, 1),
         gaussian(classes, hidden_, 1.0 / std::sqrt(static_cast<double>(hidden_)), rng),
         Mat(classes, 1)};
}

double ToyClassificationProblem::evaluate(const std::vector<std::size_t>& rows, const Params& x,
                                          Params* g) const {
  const Mat& w1 = x[0];
  const Mat& b1 = x[1];
  const Mat& w2 = x[2];
  const Mat& b2 = x[3];
  const std::size_t in = w1.cols();
  const std::size_t hid = w1.rows();
  const std::size_t cls = w2.rows();
  if (g) *g = zeros_like(layers_);
  const double inv_n = 1.0 / static_cast<double>(rows.size());

  std::vector<double> h(hid), z(cls), dz(cls), dh(hid);
  double total = 0.0;
  for (std::size_t r : rows) {
    const auto feat = data_.features.data().subspan(r * in, in);
    for (std::size_t j = 0; j < hid; ++j) {
      double s = b1(j, 0);
      for (std::size_t t = 0; t < in; ++t) s += w1(j, t) * feat[t];
      h[j] = std::tanh(s);
    }
    double zmax = -INFINITY;
    for (std::size_t c = 0; c < cls; ++c) {
      double s = b2(c, 0);
      for (std::size_t j = 0; j < hid; ++j) s += w2(c, j) * h[j];
      z[c] = s;
      zmax = std::max(zmax, s);
    }
    double denom = 0.0;
    for (std::size_t c = 0; c < cls; ++c) denom += std::exp(z[c] - zmax);
    const auto y = static_cast<std::size_t>(data_.labels[r]);
    total += zmax + std::log(denom) - z[y];
    if (!g) continue;

    for (std::size_t c = 0; c < cls; ++c)
      dz[c] = (std::exp(z[c] - zmax) / denom - (c == y ? 1.0 : 0.0)) * inv_n;
    std::fill(dh.begin(), dh.end(), 0.0);
    Mat& gw2 = (*g)[2];
    Mat& gb2 = (*g)[3];
    for (std::size_t c = 0; c < cls; ++c) {
      gb2(c, 0) += dz[c];
      for (std::size_t j = 0; j < hid; ++j) {
        gw2(c, j) += dz[c] * h[j];
        dh[j] += dz[c] * w2(c, j);
      }
    }
    Mat& gw1 = (*g)[0];
    Mat& gb1 = (*g)[1];
    for (std::size_t j = 0; j < hid; ++j) {
      const double d = dh[j] * (1.0 - h[j] * h[j]);
      gb1(j, 0) += d;
      for (std::size_t t = 0; t < in; ++t) gw1(j, t) += d * feat[t];
    }
  }
  return total * inv_n;
}

double ToyClassificationProblem::loss(std::size_t client, const Params& x) const {
  check_client(client);
  check_point(x);
  return evaluate(shards_[client], x, nullptr);
}

Params ToyClassificationProblem::grad(std::size_t client, const Params& x) const {
  check_client(client);
  check_point(x);
  Params g;
  evaluate(shards_[client], x, &g);
  return g;
}

std::optional<double> ToyClassificationProblem::accuracy(const Params& x) const {
  check_point(x);
  const std::size_t in = x[0].cols();
  const std::size_t hid = x[0].rows();
  const std::size_t cls = x[2].rows();
  std::vector<double> h(hid);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < data_.size(); ++r) {
    const auto feat = data_.features.data().subspan(r * in, in);
    for (std::size_t j = 0; j < hid; ++j) {
      double s = x[1](j, 0);
      for (std::size_t t = 0; t < in; ++t) s += x[0](j, t) * feat[t];
      h[j] = std::tanh(s);
    }
    std::size_t best = 0;
    double best_z = -INFINITY;
    for (std::size_t c = 0; c < cls; ++c) {
      double s = x[3](c, 0);
      for (std::size_t j = 0; j < hid; ++j) s += x[2](c, j) * h[j];
      if (s > best_z) {
        best_z = s;
        best = c;
      }
    }
    if (static_cast<int>(best) == data_.labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data_.size());
}

}  // namespace fedlab
