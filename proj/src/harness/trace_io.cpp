#include "fedlab/harness/trace_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fedlab/error.hpp"

namespace fedlab::harness {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("trace record: missing field ") + key);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("trace record: field ") + key + " has the wrong type");
  }
}

std::optional<double> optional_real(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return field<double>(j, key);
}

}  // namespace

ordered_json to_json(const RoundTrace& t) {
  ordered_json j;
  j["round"] = t.round;
  j["step"] = t.step;
  j["loss"] = t.loss;
  j["grad_frobenius"] = t.grad_frobenius;
  j["grad_trace"] = t.grad_trace;
  j["grad_spectral"] = t.grad_spectral;
  j["grad_schatten_phat"] = t.grad_schatten_phat;
  j["phat"] = t.phat;
  j["running_kappa"] = t.running_kappa ? ordered_json(*t.running_kappa) : ordered_json(nullptr);
  j["accuracy"] = t.accuracy ? ordered_json(*t.accuracy) : ordered_json(nullptr);
  j["wallclock_ns"] = t.wallclock_ns;
  return j;
}

RoundTrace trace_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("trace record: expected an object");
  RoundTrace t;
  t.round = field<std::int64_t>(j, "round");
  t.step = field<std::int64_t>(j, "step");
  t.loss = field<double>(j, "loss");
  t.grad_frobenius = field<double>(j, "grad_frobenius");
  t.grad_trace = field<double>(j, "grad_trace");
  t.grad_spectral = field<double>(j, "grad_spectral");
  t.grad_schatten_phat = field<double>(j, "grad_schatten_phat");
  t.phat = field<double>(j, "phat");
  t.running_kappa = optional_real(j, "running_kappa");
  t.accuracy = optional_real(j, "accuracy");
  t.wallclock_ns = field<std::int64_t>(j, "wallclock_ns");
  return t;
}

std::string emit_jsonl(const RoundTrace& t) { return to_json(t).dump(); }

RoundTrace parse_jsonl(const std::string& line) {
  try {
    return trace_from_json(json::parse(line));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("trace record: invalid JSON: ") + e.what());
  }
}

std::vector<RoundTrace> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<RoundTrace> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_jsonl(line));
  return out;
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_summary_csv(std::ostream& out, const std::vector<RoundTrace>& traces) {
  out << kSummaryHeader << '\n';
  for (const RoundTrace& t : traces) {
    if (t.step != 0) continue;
    out << t.round << ',' << format_real(t.loss) << ',' << format_real(t.grad_frobenius) << ','
        << format_real(t.grad_trace) << ',' << format_real(t.grad_spectral) << ','
        << format_real(t.grad_schatten_phat) << ',' << format_real(t.phat) << ','
        << (t.running_kappa ? format_real(*t.running_kappa) : "") << ','
        << (t.accuracy ? format_real(*t.accuracy) : "") << '\n';
  }
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<RoundTrace>& traces) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_summary_csv(out, traces);
}

}  // namespace fedlab::harness
