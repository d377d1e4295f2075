#pragma once

#include <optional>
#include <string>

#include "defstereo/ops.hpp"

namespace defstereo {

template <typename T>
struct Conv {
  BasicTensor<T> weight;  // [Co, Ci, k, k]
  BasicTensor<T> bias;    // [Co]; undefined for convs feeding batch norm
  int stride = 1;
  int pad = 0;

  BasicTensor<T> operator()(BasicGraph<T>& g, const BasicTensor<T>& x) const {
    return conv2d(g, x, weight, bias, stride, pad);
  }
};

template <typename T>
struct Deconv {
  BasicTensor<T> weight;  // [Ci, Co, 4, 4]
  BasicTensor<T> bias;    // [Co]

  BasicTensor<T> operator()(BasicGraph<T>& g, const BasicTensor<T>& x) const {
    return deconv2d(g, x, weight, bias, 2, 1);
  }
};

/// Batch normalization followed by a per-channel PReLU.
template <typename T>
struct BnPrelu {
  BasicTensor<T> gamma, beta, slope;
  mutable BnState<T> state;

  BasicTensor<T> operator()(BasicGraph<T>& g, const BasicTensor<T>& x, ForwardMode mode) const {
    return prelu(g, batchnorm(g, x, gamma, beta, state, mode), slope);
  }
};

/// Pre-activation bottleneck: (BN, PReLU, conv) x 3 with 1x1 -> 3x3 -> 1x1
/// kernels and C/2 inner channels, plus an identity skip (1x1 projection when
/// the channel count changes).
template <typename T>
struct Residual {
  BnPrelu<T> act1, act2, act3;
  Conv<T> conv1, conv2, conv3;
  std::optional<Conv<T>> projection;

  BasicTensor<T> operator()(BasicGraph<T>& g, const BasicTensor<T>& x, ForwardMode mode) const;
};

/// Creates parameters in a ParamStore with He-initialised kernels. Each
/// tensor draws from its own stream seeded by (seed, name), so a parameter's
/// initial value does not depend on what else the model contains.
template <typename T>
class LayerFactory {
 public:
  LayerFactory(ParamStore<T>& store, std::uint64_t seed) : store_(store), seed_(seed) {}

  Conv<T> conv(const std::string& name, int in, int out, int kernel, int stride = 1,
               int pad = -1, bool bias = true);
  Deconv<T> deconv(const std::string& name, int in, int out);
  BnPrelu<T> bn_prelu(const std::string& name, int channels);
  Residual<T> residual(const std::string& name, int in, int out);

 private:
  ParamStore<T>& store_;
  std::uint64_t seed_;
};

}  // namespace defstereo
