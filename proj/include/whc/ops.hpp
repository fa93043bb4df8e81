#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "whc/tensor.hpp"

// Forward/backward kernels for the layer vocabulary of the counting networks.
// All are instantiated for float (training) and double (gradient checking).
// Backward functions accumulate into parameter gradients and overwrite the
// input gradient.
namespace whc::nn {

/// Same-padded convolution. `weight` is (c_out, c_in, k, k) with k in {1, 3};
/// `bias` is (c_out, 1, 1, 1). Padding is dilation * (k - 1) / 2.
template <typename T>
Tensor<T> conv2d_same(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                      int dilation);

template <typename T>
void conv2d_same_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                          int dilation, Tensor<T>* dx, Tensor<T>& dweight, Tensor<T>& dbias);

/// 3x3 stride-2 transposed convolution, padding 1, output padding 1, so the
/// output is exactly (2h, 2w). `weight` is (c_in, c_out, 3, 3).
template <typename T>
Tensor<T> conv_transpose2d_x2(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
void conv_transpose2d_x2_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                                  Tensor<T>* dx, Tensor<T>& dweight, Tensor<T>& dbias);

/// 2x2 window, stride 2. `argmax` receives, per output element, the flat
/// index of the winning input element (first in row-major order on ties).
template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& x, std::vector<std::uint32_t>* argmax = nullptr);

template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax,
                              const Shape& input_shape);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Gradient of relu given its output `y`.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy);

/// Channel concatenation, `a` first.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Splits along channels at `first_channels`; inverse of concat_channels.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first_channels);

template <typename T>
struct LossValue {
  double value = 0.0;
  Tensor<T> grad;  ///< dL/dpred
};

/// L = 1/(2N) * sum_i ||pred_i - gt_i||^2 over the batch of N maps.
template <typename T>
LossValue<T> euclidean_loss(const Tensor<T>& pred, const Tensor<T>& gt);

}  // namespace whc::nn
