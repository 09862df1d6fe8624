#pragma once

#include "refblend/rng.hpp"
#include "refblend/tensor.hpp"

namespace refblend {

// Throws NumericError if any element is NaN or infinite.
void check_finite(const Tensor& t, const char* what);

// Numerically stable softmax along `axis` (per-slice max subtraction).
Tensor softmax(const Tensor& logits, int axis);

// Plain matrix product, a: (n,k), b: (k,m) -> (n,m).
Tensor matmul(const Tensor& a, const Tensor& b);

// a: (n,k), b: (m,k) -> a * b^T, (n,m).
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Bilinear resize of a (h,w) map to (H,W) with half-pixel centers
// (align-corners-false). Exact at identity size and on constant maps.
Tensor resize_bilinear(const Tensor& map, int out_h, int out_w);

// Divide each row of a nonnegative (r,c) matrix by its sum.
// Throws NumericError("degenerate_row") on an all-zero row.
Tensor row_normalize(const Tensor& map);

// Seeded standard-normal tensor; consumes numel counters from rng.
Tensor gaussian(Rng& rng, std::vector<int> shape);

} // namespace refblend
