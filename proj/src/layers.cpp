#include "defstereo/layers.hpp"

namespace defstereo {

template <typename T>
BasicTensor<T> Residual<T>::operator()(BasicGraph<T>& g, const BasicTensor<T>& x,
                                       ForwardMode mode) const {
  auto y = conv1(g, act1(g, x, mode));
  y = conv2(g, act2(g, y, mode));
  y = conv3(g, act3(g, y, mode));
  return add(g, y, projection ? (*projection)(g, x) : x);
}

template <typename T>
Conv<T> LayerFactory<T>::conv(const std::string& name, int in, int out, int kernel, int stride,
                              int pad, bool bias) {
  auto rng = make_rng(seed_, name + ".weight");
  Conv<T> c;
  c.weight = store_.add(name + ".weight", he_init<T>({out, in, kernel, kernel}, rng), Decay::Yes);
  if (bias) c.bias = store_.add(name + ".bias", BasicTensor<T>({out}), Decay::No);
  c.stride = stride;
  c.pad = pad < 0 ? kernel / 2 : pad;
  return c;
}

template <typename T>
Deconv<T> LayerFactory<T>::deconv(const std::string& name, int in, int out) {
  auto rng = make_rng(seed_, name + ".weight");
  Deconv<T> d;
  d.weight = store_.add(name + ".weight", he_init<T>({in, out, 4, 4}, rng), Decay::Yes);
  d.bias = store_.add(name + ".bias", BasicTensor<T>({out}), Decay::No);
  return d;
}

template <typename T>
BnPrelu<T> LayerFactory<T>::bn_prelu(const std::string& name, int channels) {
  BnPrelu<T> b;
  b.gamma = store_.add(name + ".gamma", BasicTensor<T>::full({channels}, T(1)), Decay::No);
  b.beta = store_.add(name + ".beta", BasicTensor<T>({channels}), Decay::No);
  b.slope = store_.add(name + ".slope", BasicTensor<T>::full({channels}, T(0.25)), Decay::No);
  auto fresh = BnState<T>::fresh(channels);
  b.state.running_mean = store_.add_buffer(name + ".running_mean", fresh.running_mean);
  b.state.running_var = store_.add_buffer(name + ".running_var", fresh.running_var);
  b.state.updates = store_.add_buffer(name + ".updates", fresh.updates);
  return b;
}

template <typename T>
Residual<T> LayerFactory<T>::residual(const std::string& name, int in, int out) {
  const int mid = std::max(1, out / 2);
  Residual<T> r;
  r.act1 = bn_prelu(name + ".bn1", in);
  r.conv1 = conv(name + ".conv1", in, mid, 1, 1, 0, false);
  r.act2 = bn_prelu(name + ".bn2", mid);
  r.conv2 = conv(name + ".conv2", mid, mid, 3, 1, 1, false);
  r.act3 = bn_prelu(name + ".bn3", mid);
  r.conv3 = conv(name + ".conv3", mid, out, 1);
  if (in != out) r.projection = conv(name + ".proj", in, out, 1);
  return r;
}

template struct Residual<float>;
template struct Residual<double>;
template class LayerFactory<float>;
template class LayerFactory<double>;

}  // namespace defstereo
