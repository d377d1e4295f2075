#pragma once

#include <cstdint>

#include "defstereo/graph.hpp"
#include "defstereo/param_store.hpp"
#include "defstereo/rng.hpp"
#include "defstereo/tensor.hpp"

namespace defstereo {

enum class ForwardMode { Train, Eval };

struct BnOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Running statistics of one batch-norm layer. The tensors alias buffers in a
/// ParamStore, so checkpoint loads update them in place.
template <typename T>
struct BnState {
  BasicTensor<T> running_mean;  // [C], starts at 0
  BasicTensor<T> running_var;   // [C], starts at 1
  BasicTensor<T> updates;       // [1], number of training-mode batches seen

  static BnState fresh(int channels);
};

// Every op records itself on `g` when any input requires grad. Inputs are
// never modified.

/// Cross-correlation. Output extent is (H + 2*pad - kh) / stride + 1; strided
/// convolutions require H and W divisible by the stride. An undefined bias
/// means no bias term.
template <typename T>
BasicTensor<T> conv2d(BasicGraph<T>& g, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int pad);

/// Transposed convolution; the adjoint of conv2d with the same weight, stride
/// and pad. weight is [Cin, Cout, kh, kw]; output extent
/// (H-1)*stride - 2*pad + kh + output_pad. output_pad (< stride) restores the
/// rows a strided conv drops when its output extent is rounded down.
template <typename T>
BasicTensor<T> deconv2d(BasicGraph<T>& g, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                        const BasicTensor<T>& bias, int stride = 2, int pad = 1,
                        int output_pad = 0);

/// 2x2 max pooling with stride 2; ties resolve to the first element in
/// row-major window order.
template <typename T>
BasicTensor<T> maxpool2(BasicGraph<T>& g, const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> upsample_nn2(BasicGraph<T>& g, const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> batchnorm(BasicGraph<T>& g, const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta, BnState<T>& state, ForwardMode mode,
                         const BnOptions& options = {});

template <typename T>
BasicTensor<T> prelu(BasicGraph<T>& g, const BasicTensor<T>& input, const BasicTensor<T>& slope);

template <typename T>
BasicTensor<T> add(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(BasicGraph<T>& g, const BasicTensor<T>& a, T factor);

template <typename T>
BasicTensor<T> concat_channels(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Stacks two N x C x H x W tensors of equal C, H, W along the batch axis.
template <typename T>
BasicTensor<T> concat_batch(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Samples [begin, begin + count) of a rank-4 tensor.
template <typename T>
BasicTensor<T> slice_batch(BasicGraph<T>& g, const BasicTensor<T>& x, int begin, int count);

/// Mean absolute error; the subgradient at zero residual is 0.
template <typename T>
BasicTensor<T> mae_loss(BasicGraph<T>& g, const BasicTensor<T>& pred, const BasicTensor<T>& target);

/// lambda * sum of squares over parameters tagged Decay::Yes.
template <typename T>
BasicTensor<T> l2_penalty(BasicGraph<T>& g, const ParamStore<T>& params, T lambda);

template <typename T>
BasicTensor<T> sum(BasicGraph<T>& g, const BasicTensor<T>& a);

/// sum(a * weights) with `weights` treated as a constant.
template <typename T>
BasicTensor<T> dot(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& weights);

/// Zero-mean normal weights with std sqrt(2 / fan_in), fan_in = dims[1]*kh*kw.
template <typename T>
BasicTensor<T> he_init(const Dims& dims, Rng& rng);

/// Non-differentiable box-filter downsampling of an N x C x H x W tensor.
template <typename T>
BasicTensor<T> area_downsample(const BasicTensor<T>& input, int factor);

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return BasicTensor<To>(t.dims(), std::move(out));
}

}  // namespace defstereo
