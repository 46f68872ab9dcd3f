#include "fedlab/harness/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "fedlab/error.hpp"

namespace fedlab::harness {
namespace {

using nlohmann::json;

// Reads keys out of one JSON object, remembering which were consumed and which
// were malformed, so that every problem can be reported in one message.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {
    if (!obj_.is_object()) errors_.push_back(path_.empty() ? "<root>: expected an object"
                                                           : path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return obj_.is_object() && obj_.contains(key); }

  template <typename T>
  std::optional<T> get(const std::string& key) {
    if (!has(key)) return std::nullopt;
    seen_.insert(key);
    try {
      return obj_.at(key).get<T>();
    } catch (const json::exception&) {
      errors_.push_back(qualified(key) + ": wrong type");
      return std::nullopt;
    }
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (auto v = get<T>(key)) out = *v;
  }

  // Positive integer stored into a size_t.
  void read_count(const std::string& key, std::size_t& out, bool allow_zero = false) {
    if (!has(key)) return;
    seen_.insert(key);
    const json& v = obj_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < (allow_zero ? 0 : 1)) {
      errors_.push_back(qualified(key) + (allow_zero ? ": expected a non-negative integer"
                                                     : ": expected a positive integer"));
      return;
    }
    out = v.get<std::size_t>();
  }

  const json* child(const std::string& key) {
    if (!has(key)) return nullptr;
    seen_.insert(key);
    return &obj_.at(key);
  }

  std::string qualified(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() {
    if (!obj_.is_object()) return;
    for (const auto& [k, _] : obj_.items())
      if (!seen_.count(k)) errors_.push_back(qualified(k) + ": unknown key");
  }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

void parse_problem(const json& j, ExperimentConfig& cfg, std::vector<std::string>& errors) {
  ObjectReader r(j, "problem", errors);
  ProblemSpec& p = cfg.problem;
  if (!r.has("type")) {
    errors.push_back("problem.type: missing");
    r.finish();
    return;
  }
  r.read("type", p.type);
  if (auto s = r.get<std::uint64_t>("seed")) p.seed = *s;
  if (p.type == "counterexample") {
    r.read("a", p.a);
    if (auto x0 = r.get<double>("x0")) p.x0 = *x0;
    if (!(p.a > 0.0)) errors.push_back("problem.a: must be positive");
  } else if (p.type == "matrix_quadratic") {
    auto& q = p.quadratic;
    r.read_count("k", q.k);
    r.read_count("d1", q.d1);
    r.read_count("d2", q.d2);
    r.read("heterogeneity", q.heterogeneity);
    r.read("a_spread", q.a_spread);
    r.read_count("low_rank", q.low_rank, true);
    r.read("b_scale", q.b_scale);
    r.read("init_scale", q.init_scale);
    r.read("identical_clients", q.identical_clients);
    if (q.heterogeneity < 0.0) errors.push_back("problem.heterogeneity: must be >= 0");
    if (q.a_spread < 0.0) errors.push_back("problem.a_spread: must be >= 0");
  } else if (p.type == "toy_classification") {
    auto& t = p.toy;
    r.read_count("samples", t.data.samples);
    r.read_count("feature_dim", t.data.feature_dim);
    if (auto c = r.get<int>("classes")) {
      if (*c < 2) errors.push_back("problem.classes: must be >= 2");
      t.data.classes = *c;
    }
    r.read("class_separation", t.data.class_separation);
    r.read_count("hidden", t.hidden);
    r.read("beta", t.beta);
    if (auto d = r.get<std::string>("dataset")) t.dataset_path = *d;
    if (!(t.beta > 0.0)) errors.push_back("problem.beta: must be positive");
  } else {
    errors.push_back("problem.type: unknown problem '" + p.type +
                     "' (expected counterexample, matrix_quadratic, toy_classification)");
  }
  r.finish();
}

void parse_lmo(const json& j, RoundConfig& rc, std::vector<std::string>& errors) {
  ObjectReader r(j, "lmo", errors);
  std::string mode = "exact";
  std::string norm = "spectral";
  NsConfig ns;
  r.read("mode", mode);
  r.read("norm", norm);
  if (auto it = r.get<int>("iters")) ns.iters = *it;
  if (auto co = r.get<std::vector<double>>("coefficients")) {
    if (co->size() != 3) {
      errors.push_back("lmo.coefficients: expected [a, b, c]");
    } else {
      ns.a = (*co)[0];
      ns.b = (*co)[1];
      ns.c = (*co)[2];
    }
  }
  if (ns.iters < 0) errors.push_back("lmo.iters: must be >= 0");
  r.finish();
  try {
    if (mode == "exact") {
      rc.direction = DirectionMap::exact(NormKind::parse(norm));
    } else if (mode == "newton_schulz") {
      if (norm != "spectral") errors.push_back("lmo.norm: newton_schulz approximates the spectral ball");
      rc.direction = DirectionMap::newton_schulz(ns);
    } else if (mode == "identity") {
      rc.direction = DirectionMap::identity();
    } else {
      errors.push_back("lmo.mode: unknown mode '" + mode + "' (expected exact, newton_schulz, identity)");
    }
  } catch (const ConfigError& e) {
    errors.push_back(std::string("lmo.norm: ") + e.what());
  }
}

void parse_base_optimizer(const json& j, RoundConfig& rc, std::vector<std::string>& errors) {
  ObjectReader r(j, "base_optimizer", errors);
  if (auto t = r.get<std::string>("type")) {
    try {
      rc.base_optimizer = fedlab::parse_base_optimizer(*t);
    } catch (const ConfigError& e) {
      errors.push_back(std::string("base_optimizer.type: ") + e.what());
    }
  }
  r.read("momentum", rc.momentum_beta);
  r.read("beta1", rc.adam_beta1);
  r.read("beta2", rc.adam_beta2);
  r.read("eps", rc.adam_eps);
  r.finish();
}

void parse_grid(const json& j, ExperimentConfig& cfg, std::vector<std::string>& errors) {
  ObjectReader r(j, "grid", errors);
  GridSpec g;
  r.read("eta", g.eta);
  r.read("eta_vector", g.eta_vector);
  r.read("alpha", g.alpha);
  r.read("ns_iters", g.ns_iters);
  r.finish();
  for (const auto* list : {&g.eta, &g.eta_vector})
    for (double v : *list)
      if (!(v > 0.0)) errors.push_back("grid: stepsizes must be positive");
  for (double a : g.alpha)
    if (!(a > 0.0 && a <= 1.0)) errors.push_back("grid.alpha: values must lie in (0, 1]");
  for (int t : g.ns_iters)
    if (t < 0) errors.push_back("grid.ns_iters: values must be >= 0");
  if (g.eta.empty() && g.eta_vector.empty() && g.alpha.empty() && g.ns_iters.empty())
    errors.push_back("grid: at least one non-empty list is required");
  if (!g.ns_iters.empty() && cfg.round.direction.mode() != DirectionMap::Mode::NewtonSchulz)
    errors.push_back("grid.ns_iters: requires lmo.mode newton_schulz");
  cfg.grid = g;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  std::vector<std::string> errors;
  ExperimentConfig cfg;
  RoundConfig& rc = cfg.round;
  ObjectReader r(j, "", errors);

  if (const json* p = r.child("problem")) {
    parse_problem(*p, cfg, errors);
  } else {
    errors.push_back("problem: missing");
  }
  // The counterexample is defined for two clients taking one local step each.
  if (cfg.problem.type == "counterexample") {
    rc.clients = 2;
    rc.sampled = 2;
    rc.local_steps = 1;
  }

  if (auto a = r.get<std::string>("algorithm")) {
    try {
      rc.algorithm = parse_algorithm(*a);
    } catch (const ConfigError& e) {
      errors.push_back(std::string("algorithm: ") + e.what());
    }
  }
  r.read_count("clients", rc.clients);
  r.read_count("sampled", rc.sampled);
  r.read_count("local_steps", rc.local_steps);
  r.read_count("rounds", cfg.rounds, true);
  r.read("eta", rc.eta);
  if (auto ev = r.get<double>("eta_vector")) rc.eta_vector = *ev;
  r.read("alpha", rc.alpha);
  r.read("noise_sigma", rc.noise_sigma);
  r.read("seed", rc.seed);
  r.read_count("workers", rc.workers);
  if (auto o = r.get<std::string>("output")) cfg.output = *o;
  if (const json* l = r.child("lmo")) parse_lmo(*l, rc, errors);
  if (const json* b = r.child("base_optimizer")) parse_base_optimizer(*b, rc, errors);
  if (auto s = r.get<std::string>("step_scaling")) {
    if (*s == "sqrt_max_dim") rc.scaling = StepScaling::SqrtMaxDim;
    else if (*s == "none") rc.scaling = StepScaling::None;
    else errors.push_back("step_scaling: expected sqrt_max_dim or none");
  }
  if (auto s = r.get<std::string>("momentum_init")) {
    if (*s == "zero") rc.momentum_init = MomentumInit::Zero;
    else if (*s == "stochastic_gradient") rc.momentum_init = MomentumInit::StochasticGradient;
    else errors.push_back("momentum_init: expected zero or stochastic_gradient");
  }
  if (const json* m = r.child("metrics")) {
    ObjectReader mr(*m, "metrics", errors);
    mr.read_count("cadence", cfg.cadence);
    mr.read("track_kappa", cfg.track_kappa);
    mr.read("wallclock", cfg.wallclock);
    mr.finish();
  }
  r.read("seeds", cfg.seeds);
  if (const json* g = r.child("grid")) parse_grid(*g, cfg, errors);
  r.finish();

  if (errors.empty()) {
    try {
      rc.validate();
    } catch (const ConfigError& e) {
      errors.push_back(e.what());
    }
  }
  if (cfg.problem.type == "counterexample" && rc.clients != 2)
    errors.push_back("clients: the counterexample has exactly 2 clients");
  if (cfg.seeds.empty()) cfg.seeds.push_back(rc.seed);

  if (!errors.empty()) {
    std::ostringstream os;
    os << "invalid config (" << errors.size() << " problem" << (errors.size() > 1 ? "s" : "")
       << "):";
    for (const auto& e : errors) os << "\n  - " << e;
    throw ConfigError(os.str());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

std::unique_ptr<Problem> make_problem(const ProblemSpec& spec, std::size_t clients,
                                      std::uint64_t run_seed) {
  const std::uint64_t seed = spec.seed.value_or(run_seed);
  if (spec.type == "counterexample")
    return std::make_unique<CounterexampleProblem>(spec.a, spec.x0.value_or(-spec.a / 4.0));
  if (spec.type == "matrix_quadratic") {
    MatrixQuadraticOptions o = spec.quadratic;
    o.clients = clients;
    o.seed = seed;
    return std::make_unique<MatrixQuadraticProblem>(o);
  }
  if (spec.type == "toy_classification") {
    ToyClassificationOptions o = spec.toy;
    o.clients = clients;
    o.seed = seed;
    o.data.seed = seed;
    return std::make_unique<ToyClassificationProblem>(o);
  }
  throw ConfigError("problem.type: unknown problem '" + spec.type + "'");
}

NormKind dual_metric_norm(const RoundConfig& cfg) {
  if (cfg.algorithm == Algorithm::FedAvg || cfg.algorithm == Algorithm::Scaffold)
    return NormKind::frobenius();
  switch (cfg.direction.mode()) {
    case DirectionMap::Mode::Identity: return NormKind::frobenius();
    case DirectionMap::Mode::NewtonSchulz: return NormKind::trace();
    case DirectionMap::Mode::Exact: {
      const NormKind d = dual_norm_kind(cfg.direction.ball());
      return d.tag() == NormKind::Tag::EuclideanVec ? NormKind::frobenius() : d;
    }
  }
  return NormKind::frobenius();
}

}  // namespace fedlab::harness
