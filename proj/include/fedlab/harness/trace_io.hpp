#pragma once

// Trace serialization. JSONL: one object per RoundTrace, keys in struct order,
// absent optionals as null. CSV summary: one row per recorded round (step 0).

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedlab/trace.hpp"

namespace fedlab::harness {

nlohmann::ordered_json to_json(const RoundTrace& t);
// Throws ConfigError on missing or mistyped fields.
RoundTrace trace_from_json(const nlohmann::json& j);

// Single JSONL line without the trailing newline.
std::string emit_jsonl(const RoundTrace& t);
RoundTrace parse_jsonl(const std::string& line);

std::vector<RoundTrace> read_jsonl(const std::filesystem::path& path);

inline constexpr const char* kSummaryHeader =
    "round,loss,grad_frobenius,grad_trace,grad_spectral,grad_schatten_phat,phat,running_kappa,"
    "accuracy";

void write_summary_csv(std::ostream& out, const std::vector<RoundTrace>& traces);
void write_summary_csv(const std::filesystem::path& path, const std::vector<RoundTrace>& traces);

// Shortest round-trip decimal for a double ("nan"/"inf" for non-finite).
std::string format_real(double v);

}  // namespace fedlab::harness
