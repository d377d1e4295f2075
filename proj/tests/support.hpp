#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "defstereo/ops.hpp"

namespace testing {

using namespace defstereo;

inline Tensor64 random_tensor(const Dims& dims, Rng& rng, double lo = -1.0, double hi = 1.0,
                              bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor64 t(dims, requires_grad);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Values bounded away from zero, so relu-like kinks are not hit by +-h probes.
inline Tensor64 random_away_from_zero(const Dims& dims, Rng& rng, double margin = 0.05,
                                      bool requires_grad = false) {
  std::uniform_real_distribution<double> u(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor64 t(dims, requires_grad);
  for (auto& v : t.data()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

// Distinct values, at least `gap` apart, in random order.
inline Tensor64 random_distinct(const Dims& dims, Rng& rng, double gap = 0.01,
                                bool requires_grad = false) {
  Tensor64 t(dims, requires_grad);
  std::vector<double> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = gap * static_cast<double>(i);
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

struct GradCheck {
  double worst = 0.0;
  std::size_t checked = 0;
};

// Norm-wise relative error. The floor keeps gradients that are zero in exact
// arithmetic (a bias feeding batch norm) from comparing round-off to round-off.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(std::max(na, nb)), 1e-6);
  return std::sqrt(diff) / denom;
}

/// Compares analytic gradients of `loss` w.r.t. each tensor in `wrt` with
/// central differences. `loss` must rebuild its graph on every call.
inline GradCheck gradcheck(const std::function<Tensor64(Graph64&)>& loss,
                           std::vector<Tensor64> wrt, double h = 1e-5) {
  for (auto& t : wrt) t.zero_grad();
  {
    Graph64 g;
    auto l = loss(g);
    g.backward(l);
  }
  GradCheck out;
  for (auto& t : wrt) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(t.numel());
    auto x = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = x[i];
      x[i] = saved + h;
      double fp, fm;
      {
        Graph64 g(Graph64::Mode::NoGrad);
        fp = loss(g).item();
      }
      x[i] = saved - h;
      {
        Graph64 g(Graph64::Mode::NoGrad);
        fm = loss(g).item();
      }
      x[i] = saved;
      numeric[i] = (fp - fm) / (2 * h);
    }
    out.worst = std::max(out.worst, relative_error(analytic, numeric));
    out.checked += t.numel();
  }
  return out;
}

/// Direct quadruple-loop cross-correlation.
inline Tensor64 naive_conv(const Tensor64& x, const Tensor64& w, const Tensor64& b, int stride,
                           int pad) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor64 y({n, co, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < co; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = b.data()[o];
          for (int c = 0; c < ci; ++c)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int iy = oy * stride - pad + i, ix = ox * stride - pad + j;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at(s, c, iy, ix) * w.at(o, c, i, j);
              }
          y.at(s, o, oy, ox) = acc;
        }
  return y;
}

/// Transposed convolution written as a scatter-add of every input pixel.
inline Tensor64 scatter_deconv(const Tensor64& x, const Tensor64& w, const Tensor64& b, int stride,
                               int pad) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h - 1) * stride - 2 * pad + kh, ow = (wd - 1) * stride - 2 * pad + kw;
  Tensor64 y({n, co, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < co; ++o)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) y.at(s, o, yy, xx) = b.data()[o];
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < ci; ++c)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < wd; ++ix)
          for (int o = 0; o < co; ++o)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int yy = iy * stride - pad + i, xx = ix * stride - pad + j;
                if (yy < 0 || yy >= oh || xx < 0 || xx >= ow) continue;
                y.at(s, o, yy, xx) += x.at(s, c, iy, ix) * w.at(c, o, i, j);
              }
  return y;
}

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return m;
}

template <typename T>
bool bit_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return a.dims() == b.dims() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

}  // namespace testing
