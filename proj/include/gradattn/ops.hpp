#pragma once

#include <vector>

#include "gradattn/tensor.hpp"

namespace gradattn {

// Elementwise ops. Shapes must match exactly (no implicit broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
// Identical math to add(); recorded under its own op id so residual
// connections are distinguishable on the tape.
Tensor skip_add(const Tensor& a, const Tensor& b);
// b's shape must be a trailing suffix of a's shape; b is broadcast over the
// leading axes (used for positional encodings and biases).
Tensor add_broadcast(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// Full reduction to a scalar (rank-0 tensor).
Tensor sum(const Tensor& a);
// Mean over one axis; the axis is removed from the shape. Negative axes
// count from the end.
Tensor mean_axis(const Tensor& a, int axis);

// Batched matrix product. Both operands need rank >= 2 and identical leading
// (batch) dims; the trailing two dims contract as [m,k]x[k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// dims must be a permutation of 0..rank-1.
Tensor permute(const Tensor& a, const std::vector<int>& dims);
// numel must be preserved; data order is unchanged.
Tensor reshape(const Tensor& a, const Shape& shape);
// T tensors of identical shape [B,d] stacked into [B,T,d].
Tensor stack_tokens(const std::vector<Tensor>& tokens);

Tensor relu(const Tensor& a);
// Numerically stable softmax along `axis` (max-subtraction). Rejects
// non-finite inputs.
Tensor softmax(const Tensor& a, int axis);

// Resolves a possibly-negative axis against `rank`; throws on out-of-range.
int normalize_axis(int axis, int rank);

}  // namespace gradattn
