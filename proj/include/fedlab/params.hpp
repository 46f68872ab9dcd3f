#pragma once

// A model is an ordered list of parameter blocks (layers). Each block is a Mat;
// bias vectors are stored as column matrices.

#include <string>
#include <vector>

#include "fedlab/mat.hpp"

namespace fedlab {

enum class LayerRole { Matrix, Vector, Scalar };

struct LayerSpec {
  LayerRole role = LayerRole::Matrix;
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::string name;
};

std::string to_string(LayerRole role);

using Params = std::vector<Mat>;

Params zeros_like(const std::vector<LayerSpec>& layers);
Params zeros_like(const Params& p);

void require_same_layout(const Params& a, const Params& b, const char* op);

// a += s * b, blockwise.
void axpy(Params& a, double s, const Params& b);
Params add(const Params& a, const Params& b);
Params sub(const Params& a, const Params& b);
Params scaled(const Params& a, double s);

// Frobenius norm over all blocks jointly.
double frobenius_norm(const Params& p);
double inner(const Params& a, const Params& b);
bool all_finite(const Params& p);
std::size_t total_size(const Params& p);

}  // namespace fedlab
