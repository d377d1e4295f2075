#include "defstereo/ops.hpp"

#include <cblas.h>

#include <atomic>
#include <cmath>
#include <random>
#include <spdlog/spdlog.h>

namespace defstereo {

namespace {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

struct ConvGeometry {
  int channels, height, width;  // image side
  int kh, kw, stride, pad;
  int out_h, out_w;             // column grid side
};

// col[(c*kh + i)*kw + j][oy*out_w + ox] = img[c][oy*s - p + i][ox*s - p + j]
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const int grid = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        T* row = col + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * grid;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + i;
          T* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + j;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const int grid = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    T* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const T* row = col + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * grid;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + i;
          if (iy < 0 || iy >= g.height) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.out_w;
          T* dst = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + j;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

template <typename T>
void require_image(const BasicTensor<T>& t, const char* op) {
  require(t.rank() == 4, std::string(op) + ": expected N x C x H x W tensor, got " +
                             dims_to_string(t.dims()));
}

template <typename T>
void require_channel_vector(const BasicTensor<T>& t, int channels, const char* op,
                            const char* what) {
  require(t.numel() == static_cast<std::size_t>(channels),
          std::string(op) + ": " + what + " has dims " + dims_to_string(t.dims()) + ", expected " +
              std::to_string(channels) + " entries");
}

template <typename T>
bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

std::atomic<bool> g_eval_warned{false};

}  // namespace

template <typename T>
BnState<T> BnState<T>::fresh(int channels) {
  return BnState{BasicTensor<T>::full({channels}, T(0)), BasicTensor<T>::full({channels}, T(1)),
                 BasicTensor<T>::full({1}, T(0))};
}

template <typename T>
BasicTensor<T> conv2d(BasicGraph<T>& g, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int pad) {
  require_image(input, "conv2d");
  require(weight.rank() == 4, "conv2d: weight must be rank 4, got " + dims_to_string(weight.dims()));
  const int n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  require(weight.dim(1) == ci, "conv2d: weight " + dims_to_string(weight.dims()) +
                                   " does not match input " + dims_to_string(input.dims()));
  if (bias.defined()) require_channel_vector(bias, co, "conv2d", "bias");
  require(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
  require(h + 2 * pad >= kh && w + 2 * pad >= kw, "conv2d: kernel larger than padded input");
  require(h % stride == 0 && w % stride == 0,
          "conv2d: non-integral output extent for input " + dims_to_string(input.dims()) +
              " at stride " + std::to_string(stride));
  const ConvGeometry geo{ci, h, w, kh, kw, stride, pad, (h + 2 * pad - kh) / stride + 1,
                         (w + 2 * pad - kw) / stride + 1};
  const int grid = geo.out_h * geo.out_w;
  const int kdim = ci * kh * kw;
  const std::size_t in_plane = static_cast<std::size_t>(ci) * h * w;
  const std::size_t out_plane = static_cast<std::size_t>(co) * grid;

  const bool track = g.tracks({&input, &weight, &bias});
  BasicTensor<T> out({n, co, geo.out_h, geo.out_w}, track);
  const bool pointwise = is_pointwise<T>(geo);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * grid);
  const T* x = input.data().data();
  const T* wt = weight.data().data();
  const T* b = bias.defined() ? bias.data().data() : nullptr;
  T* y = out.data().data();
  for (int s = 0; s < n; ++s) {
    T* ys = y + s * out_plane;
    for (int c = 0; c < co; ++c) std::fill(ys + c * grid, ys + (c + 1) * grid, b ? b[c] : T(0));
    const T* cols = x + s * in_plane;
    if (!pointwise) {
      im2col(cols, geo, col.data());
      cols = col.data();
    }
    gemm(false, false, co, grid, kdim, T(1), wt, kdim, cols, grid, T(1), ys, grid);
  }

  if (track) {
    g.record("conv2d", {input, weight, bias}, out,
             [input = input, weight = weight, bias = bias, out, geo, n, co, grid, kdim, in_plane, out_plane, pointwise]() mutable {
               const T* x = input.data().data();
               const T* wt = weight.data().data();
               const T* dy = out.grad().data();
               std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * grid);
               std::vector<T> dcol(static_cast<std::size_t>(kdim) * grid);
               for (int s = 0; s < n; ++s) {
                 const T* dys = dy + s * out_plane;
                 if (bias.defined() && bias.requires_grad()) {
                   T* db = bias.grad().data();
                   for (int c = 0; c < co; ++c) {
                     T acc = 0;
                     for (int k = 0; k < grid; ++k) acc += dys[c * grid + k];
                     db[c] += acc;
                   }
                 }
                 if (weight.requires_grad()) {
                   const T* cols = x + s * in_plane;
                   if (!pointwise) {
                     im2col(cols, geo, col.data());
                     cols = col.data();
                   }
                   gemm(false, true, co, kdim, grid, T(1), dys, grid, cols, grid, T(1),
                        weight.grad().data(), kdim);
                 }
                 if (input.requires_grad()) {
                   T* dx = input.grad().data() + s * in_plane;
                   if (pointwise) {
                     gemm(true, false, kdim, grid, co, T(1), wt, kdim, dys, grid, T(1), dx, grid);
                   } else {
                     gemm(true, false, kdim, grid, co, T(1), wt, kdim, dys, grid, T(0), dcol.data(),
                          grid);
                     col2im(dcol.data(), geo, dx);
                   }
                 }
               }
             });
  }
  return out;
}

template <typename T>
BasicTensor<T> deconv2d(BasicGraph<T>& g, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                        const BasicTensor<T>& bias, int stride, int pad, int output_pad) {
  require_image(input, "deconv2d");
  require(weight.rank() == 4,
          "deconv2d: weight must be rank 4, got " + dims_to_string(weight.dims()));
  const int n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int co = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  require(weight.dim(0) == ci, "deconv2d: weight " + dims_to_string(weight.dims()) +
                                   " does not match input " + dims_to_string(input.dims()));
  require_channel_vector(bias, co, "deconv2d", "bias");
  require(stride >= 1 && pad >= 0 && output_pad >= 0 && output_pad < stride,
          "deconv2d: invalid stride/pad/output_pad");
  const int oh = (h - 1) * stride - 2 * pad + kh + output_pad;
  const int ow = (w - 1) * stride - 2 * pad + kw + output_pad;
  require(oh > 0 && ow > 0, "deconv2d: empty output extent");
  // The output image is the "image side" of an equivalent convolution whose
  // column grid is the input.
  const ConvGeometry geo{co, oh, ow, kh, kw, stride, pad, h, w};
  const int grid = h * w;
  const int kdim = co * kh * kw;
  const std::size_t in_plane = static_cast<std::size_t>(ci) * grid;
  const std::size_t out_plane = static_cast<std::size_t>(co) * oh * ow;
  const int out_grid = oh * ow;

  const bool track = g.tracks({&input, &weight, &bias});
  BasicTensor<T> out({n, co, oh, ow}, track);
  std::vector<T> col(static_cast<std::size_t>(kdim) * grid);
  const T* x = input.data().data();
  const T* wt = weight.data().data();
  const T* b = bias.data().data();
  T* y = out.data().data();
  for (int s = 0; s < n; ++s) {
    gemm(true, false, kdim, grid, ci, T(1), wt, kdim, x + s * in_plane, grid, T(0), col.data(),
         grid);
    T* ys = y + s * out_plane;
    for (int c = 0; c < co; ++c) std::fill(ys + c * out_grid, ys + (c + 1) * out_grid, b[c]);
    col2im(col.data(), geo, ys);
  }

  if (track) {
    g.record("deconv2d", {input, weight, bias}, out,
             [input = input, weight = weight, bias = bias, out, geo, n, ci, co, grid, kdim, in_plane, out_plane, out_grid]() mutable {
               const T* x = input.data().data();
               const T* wt = weight.data().data();
               const T* dy = out.grad().data();
               std::vector<T> dcol(static_cast<std::size_t>(kdim) * grid);
               for (int s = 0; s < n; ++s) {
                 const T* dys = dy + s * out_plane;
                 if (bias.requires_grad()) {
                   T* db = bias.grad().data();
                   for (int c = 0; c < co; ++c) {
                     T acc = 0;
                     for (int k = 0; k < out_grid; ++k) acc += dys[c * out_grid + k];
                     db[c] += acc;
                   }
                 }
                 if (!weight.requires_grad() && !input.requires_grad()) continue;
                 im2col(dys, geo, dcol.data());
                 if (input.requires_grad()) {
                   gemm(false, false, ci, grid, kdim, T(1), wt, kdim, dcol.data(), grid, T(1),
                        input.grad().data() + s * in_plane, grid);
                 }
                 if (weight.requires_grad()) {
                   gemm(false, true, ci, kdim, grid, T(1), x + s * in_plane, grid, dcol.data(),
                        grid, T(1), weight.grad().data(), kdim);
                 }
               }
             });
  }
  return out;
}

template <typename T>
BasicTensor<T> maxpool2(BasicGraph<T>& g, const BasicTensor<T>& input) {
  require_image(input, "maxpool2");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h % 2 == 0 && w % 2 == 0,
          "maxpool2: odd spatial extent in " + dims_to_string(input.dims()));
  const int oh = h / 2, ow = w / 2;
  const bool track = g.tracks({&input});
  BasicTensor<T> out({n, c, oh, ow}, track);
  std::vector<std::uint32_t> argmax(track ? out.numel() : 0);
  const T* x = input.data().data();
  T* y = out.data().data();
  std::size_t o = 0;
  for (int p = 0; p < n * c; ++p) {
    const T* plane = x + static_cast<std::size_t>(p) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++o) {
        const std::size_t base = static_cast<std::size_t>(2 * oy) * w + 2 * ox;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (int k = 1; k < 4; ++k) {
          if (plane[cand[k]] > plane[best]) best = cand[k];
        }
        y[o] = plane[best];
        if (track) argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  if (track) {
    g.record("maxpool2", {input}, out,
             [input = input, out, argmax = std::move(argmax), n, c, h, w, oh, ow]() mutable {
               T* dx = input.grad().data();
               const T* dy = out.grad().data();
               const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
               for (int p = 0; p < n * c; ++p) {
                 T* plane = dx + static_cast<std::size_t>(p) * h * w;
                 for (std::size_t k = 0; k < out_plane; ++k) {
                   const std::size_t o = p * out_plane + k;
                   plane[argmax[o]] += dy[o];
                 }
               }
             });
  }
  return out;
}

template <typename T>
BasicTensor<T> upsample_nn2(BasicGraph<T>& g, const BasicTensor<T>& input) {
  require_image(input, "upsample_nn2");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int oh = 2 * h, ow = 2 * w;
  const bool track = g.tracks({&input});
  BasicTensor<T> out({n, c, oh, ow}, track);
  const T* x = input.data().data();
  T* y = out.data().data();
  for (int p = 0; p < n * c; ++p) {
    const T* src = x + static_cast<std::size_t>(p) * h * w;
    T* dst = y + static_cast<std::size_t>(p) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const T* row = src + static_cast<std::size_t>(oy / 2) * w;
      T* drow = dst + static_cast<std::size_t>(oy) * ow;
      for (int ox = 0; ox < ow; ++ox) drow[ox] = row[ox / 2];
    }
  }
  if (track) {
    g.record("upsample_nn2", {input}, out, [input = input, out, n, c, h, w, oh, ow]() mutable {
      T* dx = input.grad().data();
      const T* dy = out.grad().data();
      for (int p = 0; p < n * c; ++p) {
        T* dst = dx + static_cast<std::size_t>(p) * h * w;
        const T* src = dy + static_cast<std::size_t>(p) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          T* row = dst + static_cast<std::size_t>(oy / 2) * w;
          const T* srow = src + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) row[ox / 2] += srow[ox];
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> batchnorm(BasicGraph<T>& g, const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta, BnState<T>& state, ForwardMode mode,
                         const BnOptions& options) {
  require_image(input, "batchnorm");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require_channel_vector(gamma, c, "batchnorm", "gamma");
  require_channel_vector(beta, c, "batchnorm", "beta");
  require_channel_vector(state.running_mean, c, "batchnorm", "running mean");
  require_channel_vector(state.running_var, c, "batchnorm", "running var");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t count = static_cast<std::size_t>(n) * hw;
  const bool train = mode == ForwardMode::Train;
  require(!train || count >= 2, "batchnorm: training mode needs at least 2 values per channel");
  if (!train && state.updates.item() == T(0) && !g_eval_warned.exchange(true)) {
    spdlog::warn("batchnorm: eval mode before any training update; using initial statistics");
  }

  const bool track = g.tracks({&input, &gamma, &beta});
  BasicTensor<T> out(input.dims(), track);
  std::vector<T> mean(c), invstd(c);
  const T* x = input.data().data();
  T* y = out.data().data();
  for (int ch = 0; ch < c; ++ch) {
    double mu, var;
    if (train) {
      double s = 0;
      for (int b = 0; b < n; ++b) {
        const T* p = x + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) s += p[k];
      }
      mu = s / static_cast<double>(count);
      double ss = 0;
      for (int b = 0; b < n; ++b) {
        const T* p = x + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          const double d = p[k] - mu;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(count);
      const double m = options.momentum;
      T& rm = state.running_mean.data()[ch];
      T& rv = state.running_var.data()[ch];
      rm = static_cast<T>((1 - m) * rm + m * mu);
      rv = static_cast<T>((1 - m) * rv + m * ss / static_cast<double>(count));
    } else {
      mu = state.running_mean.data()[ch];
      var = state.running_var.data()[ch];
    }
    mean[ch] = static_cast<T>(mu);
    invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
    const T gm = gamma.data()[ch], bt = beta.data()[ch];
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        y[off + k] = gm * ((x[off + k] - mean[ch]) * invstd[ch]) + bt;
      }
    }
  }
  if (train) state.updates.data()[0] += T(1);

  if (track) {
    g.record("batchnorm", {input, gamma, beta}, out,
             [input = input, gamma = gamma, beta = beta, out, mean = std::move(mean), invstd = std::move(invstd), n, c, hw, count, train]() mutable {
               const T* x = input.data().data();
               const T* dy = out.grad().data();
               for (int ch = 0; ch < c; ++ch) {
                 double sum_dy = 0, sum_dy_xhat = 0;
                 for (int b = 0; b < n; ++b) {
                   const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
                   for (std::size_t k = 0; k < hw; ++k) {
                     const double xhat = (x[off + k] - mean[ch]) * invstd[ch];
                     sum_dy += dy[off + k];
                     sum_dy_xhat += dy[off + k] * xhat;
                   }
                 }
                 if (gamma.requires_grad()) gamma.grad()[ch] += static_cast<T>(sum_dy_xhat);
                 if (beta.requires_grad()) beta.grad()[ch] += static_cast<T>(sum_dy);
                 if (!input.requires_grad()) continue;
                 T* dx = input.grad().data();
                 const double gm = gamma.data()[ch];
                 const double is = invstd[ch];
                 if (train) {
                   const double inv_count = 1.0 / static_cast<double>(count);
                   const double mean_dy = sum_dy * inv_count;
                   const double mean_dy_xhat = sum_dy_xhat * inv_count;
                   for (int b = 0; b < n; ++b) {
                     const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
                     for (std::size_t k = 0; k < hw; ++k) {
                       const double xhat = (x[off + k] - mean[ch]) * is;
                       dx[off + k] +=
                           static_cast<T>(gm * is * (dy[off + k] - mean_dy - xhat * mean_dy_xhat));
                     }
                   }
                 } else {
                   for (int b = 0; b < n; ++b) {
                     const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
                     for (std::size_t k = 0; k < hw; ++k) {
                       dx[off + k] += static_cast<T>(gm * is * dy[off + k]);
                     }
                   }
                 }
               }
             });
  }
  return out;
}

template <typename T>
BasicTensor<T> prelu(BasicGraph<T>& g, const BasicTensor<T>& input, const BasicTensor<T>& slope) {
  require_image(input, "prelu");
  const int n = input.dim(0), c = input.dim(1);
  require_channel_vector(slope, c, "prelu", "slope");
  const std::size_t hw = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  const bool track = g.tracks({&input, &slope});
  BasicTensor<T> out(input.dims(), track);
  const T* x = input.data().data();
  const T* a = slope.data().data();
  T* y = out.data().data();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        const T v = x[off + k];
        y[off + k] = v >= T(0) ? v : a[ch] * v;
      }
    }
  }
  if (track) {
    g.record("prelu", {input, slope}, out, [input = input, slope = slope, out, n, c, hw]() mutable {
      const T* x = input.data().data();
      const T* a = slope.data().data();
      const T* dy = out.grad().data();
      for (int ch = 0; ch < c; ++ch) {
        T dslope = 0;
        for (int b = 0; b < n; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
          if (input.requires_grad()) {
            T* dx = input.grad().data() + off;
            for (std::size_t k = 0; k < hw; ++k) {
              dx[k] += x[off + k] >= T(0) ? dy[off + k] : a[ch] * dy[off + k];
            }
          }
          for (std::size_t k = 0; k < hw; ++k) {
            if (x[off + k] < T(0)) dslope += x[off + k] * dy[off + k];
          }
        }
        if (slope.requires_grad()) slope.grad()[ch] += dslope;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> add(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.dims() == b.dims(),
          "add: shape mismatch " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  const bool track = g.tracks({&a, &b});
  BasicTensor<T> out(a.dims(), track);
  const T* x = a.data().data();
  const T* z = b.data().data();
  T* y = out.data().data();
  for (std::size_t k = 0; k < out.numel(); ++k) y[k] = x[k] + z[k];
  if (track) {
    g.record("add", {a, b}, out, [a = a, b = b, out]() mutable {
      const T* dy = out.grad().data();
      for (auto* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        T* d = t->grad().data();
        for (std::size_t k = 0; k < out.numel(); ++k) d[k] += dy[k];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> scale(BasicGraph<T>& g, const BasicTensor<T>& a, T factor) {
  const bool track = g.tracks({&a});
  BasicTensor<T> out(a.dims(), track);
  for (std::size_t k = 0; k < out.numel(); ++k) out.data()[k] = factor * a.data()[k];
  if (track) {
    g.record("scale", {a}, out, [a = a, out, factor]() mutable {
      for (std::size_t k = 0; k < out.numel(); ++k) a.grad()[k] += factor * out.grad()[k];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_image(a, "concat_channels");
  require_image(b, "concat_channels");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: shape mismatch " + dims_to_string(a.dims()) + " vs " +
              dims_to_string(b.dims()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  const bool track = g.tracks({&a, &b});
  BasicTensor<T> out({n, ca + cb, a.dim(2), a.dim(3)}, track);
  T* y = out.data().data();
  for (int s = 0; s < n; ++s) {
    const T* pa = a.data().data() + s * ca * hw;
    const T* pb = b.data().data() + s * cb * hw;
    T* dst = y + s * (ca + cb) * hw;
    std::copy(pa, pa + ca * hw, dst);
    std::copy(pb, pb + cb * hw, dst + ca * hw);
  }
  if (track) {
    g.record("concat_channels", {a, b}, out, [a = a, b = b, out, n, ca, cb, hw]() mutable {
      const T* dy = out.grad().data();
      for (int s = 0; s < n; ++s) {
        const T* src = dy + s * (ca + cb) * hw;
        if (a.requires_grad()) {
          T* d = a.grad().data() + s * ca * hw;
          for (std::size_t k = 0; k < ca * hw; ++k) d[k] += src[k];
        }
        if (b.requires_grad()) {
          T* d = b.grad().data() + s * cb * hw;
          for (std::size_t k = 0; k < cb * hw; ++k) d[k] += src[ca * hw + k];
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_batch(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_image(a, "concat_batch");
  require_image(b, "concat_batch");
  require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_batch: shape mismatch " + dims_to_string(a.dims()) + " vs " +
              dims_to_string(b.dims()));
  const bool track = g.tracks({&a, &b});
  BasicTensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)}, track);
  const std::size_t na = a.numel();
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + na);
  if (track) {
    g.record("concat_batch", {a, b}, out, [a = a, b = b, out, na]() mutable {
      const T* dy = out.grad().data();
      if (a.requires_grad()) {
        T* d = a.grad().data();
        for (std::size_t k = 0; k < na; ++k) d[k] += dy[k];
      }
      if (b.requires_grad()) {
        T* d = b.grad().data();
        for (std::size_t k = 0; k < b.numel(); ++k) d[k] += dy[na + k];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_batch(BasicGraph<T>& g, const BasicTensor<T>& x, int begin, int count) {
  require_image(x, "slice_batch");
  require(begin >= 0 && count >= 1 && begin + count <= x.dim(0),
          "slice_batch: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") outside " + dims_to_string(x.dims()));
  const std::size_t per = x.numel() / static_cast<std::size_t>(x.dim(0));
  const std::size_t off = per * begin, len = per * count;
  const bool track = g.tracks({&x});
  BasicTensor<T> out({count, x.dim(1), x.dim(2), x.dim(3)}, track);
  std::copy(x.data().begin() + off, x.data().begin() + off + len, out.data().begin());
  if (track) {
    g.record("slice_batch", {x}, out, [x = x, out, off, len]() mutable {
      const T* dy = out.grad().data();
      T* d = x.grad().data() + off;
      for (std::size_t k = 0; k < len; ++k) d[k] += dy[k];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mae_loss(BasicGraph<T>& g, const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  require(pred.dims() == target.dims(), "mae_loss: shape mismatch " + dims_to_string(pred.dims()) +
                                            " vs " + dims_to_string(target.dims()));
  require(pred.numel() > 0, "mae_loss: empty input");
  double acc = 0;
  for (std::size_t k = 0; k < pred.numel(); ++k) {
    acc += std::abs(static_cast<double>(pred.data()[k]) - target.data()[k]);
  }
  const bool track = g.tracks({&pred, &target});
  auto out = BasicTensor<T>::scalar(static_cast<T>(acc / static_cast<double>(pred.numel())), track);
  if (track) {
    g.record("mae_loss", {pred, target}, out, [pred = pred, target = target, out]() mutable {
      const T scale = out.grad()[0] / static_cast<T>(pred.numel());
      for (std::size_t k = 0; k < pred.numel(); ++k) {
        const T r = pred.data()[k] - target.data()[k];
        const T s = r > T(0) ? scale : (r < T(0) ? -scale : T(0));
        if (pred.requires_grad()) pred.grad()[k] += s;
        if (target.requires_grad()) target.grad()[k] -= s;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> l2_penalty(BasicGraph<T>& g, const ParamStore<T>& params, T lambda) {
  if (lambda < T(0)) throw std::invalid_argument("l2_penalty: lambda must be non-negative");
  std::vector<BasicTensor<T>> decayed;
  double acc = 0;
  for (const auto& [name, entry] : params.params()) {
    if (entry.decay != Decay::Yes) continue;
    decayed.push_back(entry.tensor);
    for (T v : entry.tensor.data()) acc += static_cast<double>(v) * v;
  }
  bool track = false;
  for (const auto& t : decayed) track = track || g.tracks({&t});
  auto out = BasicTensor<T>::scalar(static_cast<T>(lambda * acc), track);
  if (track) {
    g.record("l2_penalty", decayed, out, [decayed, out, lambda]() mutable {
      const T f = T(2) * lambda * out.grad()[0];
      for (auto& t : decayed) {
        if (!t.requires_grad()) continue;
        for (std::size_t k = 0; k < t.numel(); ++k) t.grad()[k] += f * t.data()[k];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sum(BasicGraph<T>& g, const BasicTensor<T>& a) {
  double acc = 0;
  for (T v : a.data()) acc += v;
  const bool track = g.tracks({&a});
  auto out = BasicTensor<T>::scalar(static_cast<T>(acc), track);
  if (track) {
    g.record("sum", {a}, out, [a = a, out]() mutable {
      for (auto& d : a.grad()) d += out.grad()[0];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> dot(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& weights) {
  require(a.numel() == weights.numel(), "dot: size mismatch " + dims_to_string(a.dims()) + " vs " +
                                            dims_to_string(weights.dims()));
  double acc = 0;
  for (std::size_t k = 0; k < a.numel(); ++k) {
    acc += static_cast<double>(a.data()[k]) * weights.data()[k];
  }
  const bool track = g.tracks({&a});
  auto out = BasicTensor<T>::scalar(static_cast<T>(acc), track);
  if (track) {
    g.record("dot", {a}, out, [a = a, weights, out]() mutable {
      for (std::size_t k = 0; k < a.numel(); ++k) {
        a.grad()[k] += out.grad()[0] * weights.data()[k];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> he_init(const Dims& dims, Rng& rng) {
  if (dims.size() != 4) {
    throw ShapeError("he_init: expected a rank-4 kernel, got " + dims_to_string(dims));
  }
  const double fan_in = static_cast<double>(dims[1]) * dims[2] * dims[3];
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  BasicTensor<T> out(dims);
  for (auto& v : out.data()) v = static_cast<T>(normal(rng));
  return out;
}

template <typename T>
BasicTensor<T> area_downsample(const BasicTensor<T>& input, int factor) {
  require_image(input, "area_downsample");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(factor >= 1 && h % factor == 0 && w % factor == 0,
          "area_downsample: extent of " + dims_to_string(input.dims()) +
              " not divisible by " + std::to_string(factor));
  const int oh = h / factor, ow = w / factor;
  BasicTensor<T> out({n, c, oh, ow});
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int p = 0; p < n * c; ++p) {
    const T* src = input.data().data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data().data() + static_cast<std::size_t>(p) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) {
            acc += src[static_cast<std::size_t>(oy * factor + dy) * w + ox * factor + dx];
          }
        }
        dst[static_cast<std::size_t>(oy) * ow + ox] = static_cast<T>(acc * inv);
      }
    }
  }
  return out;
}

#define DEFSTEREO_INSTANTIATE_OPS(T)                                                              \
  template struct BnState<T>;                                                                     \
  template BasicTensor<T> conv2d(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                 const BasicTensor<T>&, int, int);                                \
  template BasicTensor<T> deconv2d(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                   const BasicTensor<T>&, int, int, int);                         \
  template BasicTensor<T> maxpool2(BasicGraph<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> upsample_nn2(BasicGraph<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> batchnorm(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                    const BasicTensor<T>&, BnState<T>&, ForwardMode,              \
                                    const BnOptions&);                                            \
  template BasicTensor<T> prelu(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> add(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> scale(BasicGraph<T>&, const BasicTensor<T>&, T);                        \
  template BasicTensor<T> concat_channels(BasicGraph<T>&, const BasicTensor<T>&,                  \
                                          const BasicTensor<T>&);                                 \
  template BasicTensor<T> concat_batch(BasicGraph<T>&, const BasicTensor<T>&,                     \
                                       const BasicTensor<T>&);                                    \
  template BasicTensor<T> slice_batch(BasicGraph<T>&, const BasicTensor<T>&, int, int);           \
  template BasicTensor<T> mae_loss(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> l2_penalty(BasicGraph<T>&, const ParamStore<T>&, T);                    \
  template BasicTensor<T> sum(BasicGraph<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> dot(BasicGraph<T>&, const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> he_init(const Dims&, Rng&);                                             \
  template BasicTensor<T> area_downsample(const BasicTensor<T>&, int);

DEFSTEREO_INSTANTIATE_OPS(float)
DEFSTEREO_INSTANTIATE_OPS(double)

}  // namespace defstereo
