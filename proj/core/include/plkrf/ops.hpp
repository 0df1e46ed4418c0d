#pragma once

#include <array>
#include <vector>

#include "plkrf/tape.hpp"
#include "plkrf/tensor.hpp"

namespace plkrf::ops {

// Elementwise. Operands must share a shape unless noted. Every op records a
// backward closure on the active tape when any input can carry gradient.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // [..., c] + [c]

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor gelu_tanh(const Tensor& a);

// Row-stable softmax over the last extent (max subtraction).
Tensor softmax_lastdim(const Tensor& x);

// Normalization over the last extent, then affine with gain/bias of that size.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// a[...,i,j] * b[...,j,k]. Supports 2x2, 3x3 with equal batch, and 3x2
// (shared right operand).
Tensor matmul(const Tensor& a, const Tensor& b);
// a[...,i,j] * transpose(b[...,k,j]) without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Stride-2 2x2 transposed convolution: x[C_in,N,N], kernel[C_in,C_out,2,2]
// -> [C_out,2N,2N]. Each input pixel expands into a disjoint 2x2 block.
Tensor transposed_conv_2x(const Tensor& x, const Tensor& kernel);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute3(const Tensor& a, int p0, int p1, int p2);
Tensor concat_rows(const std::vector<Tensor>& parts);          // rank 2, dim 0
Tensor concat_lastdim(const Tensor& a, const Tensor& b);       // rank 2, dim 1
Tensor slice_lastdim(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);  // rank 2, dim 0

// Copy of `canvas` with canvas[row_indices[i], :] replaced by rows[i, :].
// Gradient flows into `rows` only; the canvas is a constant base.
Tensor scatter_rows(const Tensor& canvas, const Tensor& rows,
                    const std::vector<std::size_t>& row_indices);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_lastdim(const Tensor& a);
Tensor cumsum_exclusive_lastdim(const Tensor& a);

// Mean over all elements of (pred - target)^2.
Tensor mse(const Tensor& pred, const Tensor& target);

// scores[..., q, k] - gamma * dist[q, k], broadcasting dist over any leading
// (head) extent. gamma is a single-element tensor; dist is a constant bias.
Tensor sub_scaled_matrix(const Tensor& scores, const Tensor& dist, const Tensor& gamma);

// Bilinear interpolation of grid[M,M,C] at in-plane coords in [-1,1]^2.
// Grid node i sits at -1 + 2(i+0.5)/M; queries outside the node-center range
// clamp to the edge. Differentiable w.r.t. the grid only (coords are fixed).
Tensor sample_plane(const Tensor& grid, const std::vector<std::array<double, 2>>& coords);

// out[r,:] = sum_s weights[r,s]*colors[r,s,:] + t_final[r]*background.
Tensor composite_colors(const Tensor& weights, const Tensor& colors, const Tensor& t_final,
                        const std::array<double, 3>& background);

}  // namespace plkrf::ops
