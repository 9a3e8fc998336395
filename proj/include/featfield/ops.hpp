#pragma once

#include <vector>

#include "featfield/tensor.hpp"

namespace ff::ops {

// Elementwise binary. Shapes must match exactly, or b's shape must be a
// suffix of a's shape (bias-style broadcast; the gradient for b sums over
// the leading dimensions).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor add_scalar(const Tensor& x, double c);
Tensor scale(const Tensor& x, double c);

// Row scaling: x is [..., L], s matches x's shape minus the last axis;
// row r of the output is s[r] * x[r, :].
Tensor mul_prefix(const Tensor& x, const Tensor& s);

// Unary.
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor vexp(const Tensor& x);
Tensor vsin(const Tensor& x);
Tensor vcos(const Tensor& x);
Tensor square(const Tensor& x);

// 2D matrix product [M,K]x[K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& x);

// 3D convolution on channels-last volumes: x [D,H,W,Cin], w [k,k,k,Cin,Cout],
// optional bias [Cout] (pass a default-constructed Tensor for none).
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

// Trilinear resize of x [D,H,W,C] to [od,oh,ow,C], half-pixel centers.
Tensor upsample_trilinear3d(const Tensor& x, size_t od, size_t oh, size_t ow);

// Trilinear point sampling: grid [N0,N1,N2,C], points [M,3] with coordinates
// in [0,1]^3 where (i+0.5)/N is the center of cell i. Queries clamp to the
// boundary cell centers. Differentiable in both grid and points.
Tensor grid_sample_trilinear(const Tensor& grid, const Tensor& points);

// Softmax family along one axis.
Tensor softmax(const Tensor& x, size_t axis);
Tensor log_softmax(const Tensor& x, size_t axis);

// Reductions.
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, size_t axis);
Tensor max_axis(const Tensor& x, size_t axis);  // gradient flows to the first argmax

// Shape plumbing (all copy; no views).
Tensor reshape(const Tensor& x, std::vector<size_t> shape);
Tensor concat(const std::vector<Tensor>& xs, size_t axis);
Tensor slice(const Tensor& x, size_t axis, size_t start, size_t len);
Tensor repeat_rows(const Tensor& x, size_t rows);  // [C] -> [rows,C]

// out[r] = x[r, idx[r]] for x [R,C] -> [R].
Tensor take_per_row(const Tensor& x, const std::vector<size_t>& idx);

// y_i = sum_{j<i} x_j along the axis.
Tensor exclusive_cumsum(const Tensor& x, size_t axis);

// Normalization cores (no affine; compose with mul/add for gamma/beta).
// norm_lastdim: per-row mean/var over the last axis.
// norm_per_channel: per-channel mean/var over all leading positions.
Tensor norm_lastdim(const Tensor& x, double eps);
Tensor norm_per_channel(const Tensor& x, double eps);

}  // namespace ff::ops
