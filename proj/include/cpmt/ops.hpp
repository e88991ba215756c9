#pragma once

// Differentiable tensor operations. Broadcasting is limited to adding a
// rank-1 row vector to every row of a rank-2 tensor; anything else must match
// shapes exactly and raises DimensionError otherwise.

#include <vector>

#include "cpmt/rng.hpp"
#include "cpmt/tensor.hpp"

namespace cpmt {

Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k] * [k x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m x k] * [n x k]^T
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);  // equal shapes, or [m x n] + [n]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);  // per row, or one [d] vector
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Concatenation along the feature axis. Rank-2 inputs must share the row
// count; rank-1 inputs produce a rank-1 result.
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);
Tensor reshape(const Tensor& x, Shape shape);

Tensor mean_rows(const Tensor& x);  // [n x d] -> [d]
Tensor sum(const Tensor& x);        // -> [1]
Tensor row_normalize(const Tensor& x);  // each row divided by its L2 norm

}  // namespace cpmt
