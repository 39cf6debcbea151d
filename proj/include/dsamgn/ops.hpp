#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dsamgn/tensor.hpp"

// Differentiable tensor operations. Every op records a backward rule on the
// active tape when any input requires grad.
namespace dsamgn {

// 2-D linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// elementwise, shapes must match exactly
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// m×n plus a length-n vector broadcast over rows.
Tensor add_row_vector(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& x);

/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

// reductions
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean of a 2-D tensor over `axis` (0 averages rows, 1 averages columns).
Tensor mean_over_axis(const Tensor& x, std::size_t axis);

// layout
Tensor reshape(const Tensor& x, Shape shape);
/// Concatenates 2-D tensors along axis 0 (rows) or 1 (channels).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits an N×C tensor into `parts` equal channel groups. C must divide evenly.
std::vector<Tensor> split_channels(const Tensor& x, std::size_t parts);
/// Sub-tensor at `index` along the leading axis.
Tensor select(const Tensor& x, std::size_t index);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

// selection
/// Keeps x where keep[i] != 0, zero elsewhere. The mask is a constant for backward.
Tensor masked(const Tensor& x, std::span<const std::uint8_t> keep);
/// 1-D tensor of x's flat entries at `flat_indices`.
Tensor gather(const Tensor& x, std::span<const std::size_t> flat_indices);

// metric learning
/// B×B Euclidean distances sqrt(|x_i - x_j|^2 + eps).
Tensor pairwise_distance(const Tensor& x, double eps);

// image-like
/// x: B×Cin×H×W, w: Cout×Cin×k×k, b: Cout. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t padding);
/// B×C×H×W -> B×C mean over the spatial extent.
Tensor spatial_mean(const Tensor& x);
/// B×C×H×W -> B×N×C with patch index i = h·W + w.
Tensor reshape_to_patches(const Tensor& f);
/// Inverse of reshape_to_patches.
Tensor patches_to_map(const Tensor& p, std::size_t height, std::size_t width);

}  // namespace dsamgn
