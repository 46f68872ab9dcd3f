#include "fedlab/params.hpp"

#include <cmath>

#include "fedlab/error.hpp"

namespace fedlab {

std::string to_string(LayerRole role) {
  switch (role) {
    case LayerRole::Matrix: return "matrix";
    case LayerRole::Vector: return "vector";
    case LayerRole::Scalar: return "scalar";
  }
  return "?";
}

Params zeros_like(const std::vector<LayerSpec>& layers) {
  Params p;
  p.reserve(layers.size());
  for (const auto& l : layers) p.emplace_back(l.rows, l.cols);
  return p;
}

Params zeros_like(const Params& src) {
  Params p;
  p.reserve(src.size());
  for (const auto& m : src) p.emplace_back(m.rows(), m.cols());
  return p;
}

void require_same_layout(const Params& a, const Params& b, const char* op) {
  if (a.size() != b.size())
    throw DimensionError(std::string(op) + ": block count mismatch " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) require_same_shape(a[i], b[i], op);
}

void axpy(Params& a, double s, const Params& b) {
  require_same_layout(a, b, "axpy");
  for (std::size_t i = 0; i < a.size(); ++i) a[i].axpy(s, b[i]);
}

Params add(const Params& a, const Params& b) {
  Params r = a;
  axpy(r, 1.0, b);
  return r;
}

Params sub(const Params& a, const Params& b) {
  require_same_layout(a, b, "sub");
  Params r = a;
  for (std::size_t i = 0; i < a.size(); ++i) r[i] -= b[i];
  return r;
}

Params scaled(const Params& a, double s) {
  Params r = a;
  for (auto& m : r) m *= s;
  return r;
}

double frobenius_norm(const Params& p) {
  double s = 0.0;
  for (const auto& m : p) {
    const double n = frobenius_norm(m);
    s += n * n;
  }
  return std::sqrt(s);
}

double inner(const Params& a, const Params& b) {
  require_same_layout(a, b, "inner");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += inner(a[i], b[i]);
  return s;
}

bool all_finite(const Params& p) {
  for (const auto& m : p)
    if (!m.all_finite()) return false;
  return true;
}

std::size_t total_size(const Params& p) {
  std::size_t n = 0;
  for (const auto& m : p) n += m.size();
  return n;
}

}  // namespace fedlab
