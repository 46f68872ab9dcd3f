#pragma once

#include <cstdint>
#include <optional>

namespace fedlab {

// Metrics at the virtual average X(r,k) = X(r) + (1/n) sum_{i in S_r} (X_i(r,k) - X(r)).
// Step 0 is the server model X(r) itself. Gradient norms treat a multi-layer
// model as one block-diagonal matrix.
struct RoundTrace {
  std::int64_t round = 0;
  std::int64_t step = 0;
  double loss = 0.0;
  double grad_frobenius = 0.0;
  double grad_trace = 0.0;
  double grad_spectral = 0.0;
  double grad_schatten_phat = 0.0;
  double phat = 2.0;
  // Running minimum of kappa over Newton-Schulz inputs; empty until one is seen.
  std::optional<double> running_kappa;
  std::optional<double> accuracy;
  std::int64_t wallclock_ns = 0;

  friend bool operator==(const RoundTrace&, const RoundTrace&) = default;
};

}  // namespace fedlab
