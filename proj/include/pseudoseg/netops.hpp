#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pseudoseg/tensor.hpp"

namespace pseudoseg::nn {

// Differentiable building blocks. Every forward op has a backward that
// returns exact gradients for its inputs and parameters; grad_check
// certifies them against central differences.
//
// Layouts: 2D ops take B x C x H x W, 3D ops B x C x D x H x W.

enum class Padding { same, valid };

struct ConvOptions {
    Padding padding = Padding::same;
    /// Per spatial axis; for 2D ops only the last two entries are used.
    std::array<std::int64_t, 3> dilation{1, 1, 1};
};

/// Gradients of one layer: w.r.t. its input, its weight tensor (kernels,
/// dense weights or norm scale) and its bias/shift.
template <typename T>
struct LayerGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

std::vector<std::int64_t> conv2d_shape(const std::vector<std::int64_t>& input, const std::vector<std::int64_t>& kernels,
                                       const ConvOptions& opt = {});
std::vector<std::int64_t> conv3d_shape(const std::vector<std::int64_t>& input, const std::vector<std::int64_t>& kernels,
                                       const ConvOptions& opt = {});

/// Cross-correlation plus bias. kernels: K x C x kh x kw, bias: K. Kernel sizes must be odd.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, const ConvOptions& opt = {});
template <typename T>
LayerGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& grad_out,
                             const ConvOptions& opt = {}, bool need_input_grad = true);

/// kernels: K x C x kd x kh x kw, bias: K.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, const ConvOptions& opt = {});
template <typename T>
LayerGrads<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& grad_out,
                             const ConvOptions& opt = {}, bool need_input_grad = true);

/// Non-overlapping max pooling; `window` has one entry per spatial axis.
/// Ties resolve to the first maximum in row-major window order.
template <typename T>
struct MaxPoolResult {
    Tensor<T> output;
    std::vector<std::int64_t> argmax; ///< flat input index per output element
};

std::vector<std::int64_t> maxpool_shape(const std::vector<std::int64_t>& input, const std::vector<std::int64_t>& window);

template <typename T>
MaxPoolResult<T> maxpool(const Tensor<T>& input, const std::vector<std::int64_t>& window);
template <typename T>
Tensor<T> maxpool_backward(const MaxPoolResult<T>& forward, const std::vector<std::int64_t>& input_dims,
                           const Tensor<T>& grad_out);

/// Nearest-neighbour replication by an integer factor per spatial axis.
std::vector<std::int64_t> upsample_shape(const std::vector<std::int64_t>& input, const std::vector<std::int64_t>& factor);
template <typename T>
Tensor<T> upsample(const Tensor<T>& input, const std::vector<std::int64_t>& factor);
template <typename T>
Tensor<T> upsample_backward(const Tensor<T>& grad_out, const std::vector<std::int64_t>& factor);

/// Affine map: input B x N, weights M x N, bias M -> B x M.
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);
template <typename T>
LayerGrads<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);
/// Takes the forward *output*.
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);
/// Takes the forward *input*.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);
template <typename T>
void relu_inplace(Tensor<T>& t);

/// Channel-wise concatenation of two tensors with equal batch/spatial dims.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& grad, std::int64_t channels_a);

/// Group normalization with per-channel affine (gamma, beta), eps 1e-5.
template <typename T>
struct GroupNormCache {
    std::vector<T> mean;
    std::vector<T> inv_std;
    Tensor<T> normalized;
};

template <typename T>
Tensor<T> group_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, std::int64_t groups,
                     GroupNormCache<T>* cache = nullptr);
template <typename T>
LayerGrads<T> group_norm_backward(const GroupNormCache<T>& cache, const Tensor<T>& gamma, std::int64_t groups,
                                 const Tensor<T>& grad_out);

} // namespace pseudoseg::nn
