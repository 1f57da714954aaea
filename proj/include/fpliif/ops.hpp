#pragma once

#include <span>
#include <vector>

#include "fpliif/tensor.hpp"

// Differentiable operations over Tensor<Scalar>. Every function here is
// instantiated for float and double.
namespace fpliif {

/// 2-D cross-correlation (no kernel flip) plus bias.
/// input N x Cin x H x W, weight Cout x Cin x k x k, bias Cout (may be
/// undefined). Output extent is floor((H + 2*padding - k) / stride) + 1.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, int stride, int padding);

/// Affine map along the last axis: y = x W^T + b with W Dout x Din.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

/// Per-sample per-channel standardization over H x W, then gamma/beta.
template <typename Scalar>
Tensor<Scalar> instance_norm(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma,
                             const Tensor<Scalar>& beta, Scalar eps = Scalar(1e-5));

// Subgradient at 0 is 0.
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input);

/// softmax(x / temperature) along the last axis, max-subtracted.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& input, Scalar temperature = Scalar(1));

// N x C x H x W -> N x C
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input);

/// 3x3 feature unfolding: N x C x H x W -> N x 9C x H x W.
/// Channel block k = 3*(dy+1) + (dx+1) for offsets dy, dx in {-1, 0, 1}
/// (row-major, top-left first) holds input[n, c, y+dy, x+dx]; out-of-bounds
/// neighbours are zero. Block 4 is the input itself.
template <typename Scalar>
Tensor<Scalar> unfold3x3(const Tensor<Scalar>& input);

/// Bilinear resize with cell-center alignment (align_corners = false):
/// source coordinate (d + 0.5) * in / out - 0.5, clamped to the edge.
template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& input, Index out_h, Index out_w);

/// Nearest-cell lookup. coords is M x 2 of (x, y) in [-1, 1] where x runs
/// along W and y along H. Cell i of an n-cell axis has center
/// -1 + (2i + 1) / n; at exact midpoints the lower index wins and
/// coordinates outside the centers clamp to the border cell.
/// Returns N x M x C. coords carries no gradient.
template <typename Scalar>
Tensor<Scalar> grid_sample_nearest(const Tensor<Scalar>& input, const Tensor<Scalar>& coords);

// Index of the cell whose center is nearest to coord on an n-cell axis.
Index nearest_cell(double coord, Index n);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, int axis);
// Concatenation along axis 1 of two N x C x ... tensors.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& input, int axis, Index begin, Index end);

// N x C -> N x M x C
template <typename Scalar>
Tensor<Scalar> repeat_rows(const Tensor<Scalar>& input, Index m);

// N x C x H x W -> N x (H*W) x C
template <typename Scalar>
Tensor<Scalar> to_channels_last(const Tensor<Scalar>& input);
// N x (H*W) x C -> N x C x H x W
template <typename Scalar>
Tensor<Scalar> to_channels_first(const Tensor<Scalar>& input, Index h, Index w);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& input, Shape shape);
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& input);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return mul(a, b);
}

}  // namespace fpliif
