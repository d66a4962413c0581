#pragma once
// Differentiable primitives. Shapes are checked eagerly and reported as ShapeError.

#include <cstddef>
#include <vector>

#include "popmap/tensor.hpp"

namespace popmap::nd {

/// Same-size zero-padded 2-D convolution (cross-correlation), stride 1.
/// input [N,C_in,H,W] or [C_in,H,W]; kernels [C_out,C_in,k,k] with odd k; bias [C_out].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
  bool populated = false;
};

/// Per-channel batch normalization of [N,C,H,W].
/// Train mode normalizes with batch statistics (biased variance) and folds them
/// into `stats` as stats = momentum * stats + (1 - momentum) * batch; eval mode
/// uses `stats` and throws StateError when they were never populated.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                   bool train, double eps = 1e-5, double momentum = 0.9);

/// Affine map along the last axis: input [..., F_in], weight [F_out, F_in], optional bias [F_out].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias = Tensor());

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Concatenates rank-2 tensors [B, f_i] (or rank-1 [f_i]) along the last axis.
Tensor concat_last(const std::vector<Tensor>& parts);
/// Columns [start, start + length) of a rank-2 (or rank-1) tensor.
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length);
/// Same data, new shape with equal element count.
Tensor reshape(const Tensor& x, Shape shape);

/// Mean of squared elementwise differences; scalar [1].
Tensor mse_loss(const Tensor& pred, const Tensor& target);

}  // namespace popmap::nd
