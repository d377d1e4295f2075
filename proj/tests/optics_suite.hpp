#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "defstereo/optics.hpp"

namespace testing {

using namespace defstereo;

inline Image noise_texture(int c, int h, int w, Rng& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image img(c, h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

inline Layer full_layer(int h, int w, double d, Rng& rng) {
  return {noise_texture(3, h, w, rng), Image(1, h, w, 1.f), d};
}

// Binary rectangle [y0, y1) x [x0, x1).
inline Layer rect_layer(int h, int w, double d, int y0, int y1, int x0, int x1, Rng& rng) {
  Layer l{noise_texture(3, h, w, rng), Image(1, h, w), d};
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) l.alpha.at(0, y, x) = 1.f;
  return l;
}

inline LayeredScene single_layer_scene(int h, int w, double d, std::uint64_t seed) {
  Rng rng(seed);
  return {h, w, {full_layer(h, w, d, rng)}};
}

// Background at d=2, a rectangle at d=6 over the left half, a rectangle at d=10 in
// the lower middle.
inline LayeredScene three_layer_scene(std::uint64_t seed) {
  Rng rng(seed);
  const int h = 128, w = 128;
  LayeredScene s{h, w, {}};
  s.layers.push_back(full_layer(h, w, 2, rng));
  s.layers.push_back(rect_layer(h, w, 6, 0, h, 0, 64, rng));
  s.layers.push_back(rect_layer(h, w, 10, 64, h, 32, 96, rng));
  return s;
}

inline double max_abs_diff(const Image& a, const Image& b, int border = 0) {
  double m = 0;
  for (int c = 0; c < a.channels; ++c)
    for (int y = border; y < a.height - border; ++y)
      for (int x = border; x < a.width - border; ++x)
        m = std::max(m, std::abs(static_cast<double>(a.at(c, y, x)) - b.at(c, y, x)));
  return m;
}

// Straight loops in double, clamped to the edge.
inline Image naive_convolve(const Image& img, const Image& k) {
  const int half = k.height / 2;
  Image out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0;
        for (int i = -half; i <= half; ++i)
          for (int j = -half; j <= half; ++j) {
            const int sy = std::clamp(y + i, 0, img.height - 1);
            const int sx = std::clamp(x + j, 0, img.width - 1);
            acc += static_cast<double>(k.at(0, i + half, j + half)) * img.at(c, sy, sx);
          }
        out.at(c, y, x) = static_cast<float>(acc);
      }
  return out;
}

// Pixels whose distance to a disparity-d region is more than `margin` (Chebyshev),
// also keeping `margin` away from the canvas edge.
inline Image eroded_region(const Image& disp, double d, int margin) {
  Image m(1, disp.height, disp.width);
  for (int y = margin; y < disp.height - margin; ++y)
    for (int x = margin; x < disp.width - margin; ++x) {
      bool ok = true;
      for (int i = -margin; i <= margin && ok; ++i)
        for (int j = -margin; j <= margin && ok; ++j)
          ok = disp.at(0, y + i, x + j) == static_cast<float>(d);
      m.at(0, y, x) = ok ? 1.f : 0.f;
    }
  return m;
}

inline double argmax_sigma(const LightField& lf, const Image& mask, double lo, double hi,
                           double step) {
  double best = -1, best_sigma = lo;
  for (double s = lo; s <= hi + 1e-9; s += step) {
    const double e = gradient_energy(refocus(lf, {s, false}), mask);
    if (e > best) best = e, best_sigma = s;
  }
  return best_sigma;
}

struct OpticsOracles {
  bool in_focus_exact = false;
  double disc_diff = 0;          // single layer vs direct 6-px disc convolution
  double bleeding_diff = 0;      // background change far from the silhouette
  std::size_t bleeding_pixels = 0;
  double cancellation_diff = 0;  // refocus at sigma = d vs pinhole, away from border
  double linearity_diff = 0;
};

inline OpticsOracles run_optics_oracles(std::uint64_t seed) {
  OpticsOracles r;
  {
    // all layers at d_f, soft masks
    Rng rng(seed);
    const int h = 48, w = 56;
    LayeredScene s{h, w, {full_layer(h, w, 4, rng), rect_layer(h, w, 4, 5, 30, 8, 40, rng),
                          rect_layer(h, w, 4, 20, 44, 20, 50, rng)}};
    std::uniform_real_distribution<float> u(0.f, 1.f);
    for (auto& v : s.layers[2].alpha.data) v *= u(rng);
    r.in_focus_exact = render_defocus(s, {4.0, 1.7, 0}) == render_view(s, 0);
  }
  {
    const LayeredScene s = single_layer_scene(40, 44, 5, seed + 1);
    const DefocusConfig cfg{2.0, 2.0, 0};  // b = 2 |5 - 2| = 6
    r.disc_diff = max_abs_diff(render_defocus(s, cfg), naive_convolve(render_view(s, 0),
                                                                       disc_kernel(6.0)));
  }
  {
    Rng rng(seed + 2);
    const int h = 64, w = 64;
    LayeredScene s{h, w, {full_layer(h, w, 1, rng), rect_layer(h, w, 9, 24, 40, 20, 44, rng)}};
    const DefocusConfig cfg{1.0, 1.0, 0};  // foreground disc 8 px, background sharp
    const Image base = render_defocus(s, cfg);
    for (auto& v : s.layers[1].color.data) v = 1.f - v;
    const Image perturbed = render_defocus(s, cfg);
    const double radius = cfg.kernel_diameter(9) / 2;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        // distance from the pixel centre to the union of foreground pixel squares
        const double dy = std::max({24 - 0.5 - y, y - (40 - 0.5), 0.0});
        const double dx = std::max({20 - 0.5 - x, x - (44 - 0.5), 0.0});
        if (std::hypot(dx, dy) < radius) continue;
        ++r.bleeding_pixels;
        for (int c = 0; c < 3; ++c)
          r.bleeding_diff =
              std::max(r.bleeding_diff, std::abs(static_cast<double>(base.at(c, y, x)) -
                                                 perturbed.at(c, y, x)));
      }
  }
  {
    const LayeredScene s = single_layer_scene(40, 40, 3, seed + 3);
    const LightField lf = synth_lightfield(s, 7);  // u = 1/3, integer shifts
    const int border = 2 * 3;
    r.cancellation_diff = max_abs_diff(refocus(lf, {3.0, false}), render_view(s, 0), border);
  }
  {
    const LightField a = synth_lightfield(three_layer_scene(seed + 4), 5);
    LightField b = a;
    Rng rng(seed + 5);
    for (auto& v : b.views) v = noise_texture(3, v.height, v.width, rng);
    const float ca = 0.7f, cb = -1.3f;
    LightField mix = a;
    for (std::size_t n = 0; n < mix.views.size(); ++n)
      for (std::size_t k = 0; k < mix.views[n].data.size(); ++k)
        mix.views[n].data[k] = ca * a.views[n].data[k] + cb * b.views[n].data[k];
    const RefocusParams p{3.37, false};
    const Image ra = refocus(a, p), rb = refocus(b, p), rm = refocus(mix, p);
    Image lin(ra.channels, ra.height, ra.width);
    for (std::size_t k = 0; k < lin.data.size(); ++k)
      lin.data[k] = ca * ra.data[k] + cb * rb.data[k];
    r.linearity_diff = max_abs_diff(rm, lin);
  }
  return r;
}

struct SharpnessResult {
  std::vector<double> disparity, best_sigma;
  std::vector<std::size_t> region_pixels;
};

// gradient-energy argmax over sigma in {0, 0.5, ..., 12} per layer region
inline SharpnessResult run_sharpness_sweep(std::uint64_t seed) {
  const LayeredScene s = three_layer_scene(seed);
  const LightField lf = synth_lightfield(s, 5);
  const Image disp = disparity_map(s);
  SharpnessResult r;
  for (const Layer& l : s.layers) {
    const Image mask = eroded_region(disp, l.disparity, 14);
    std::size_t n = 0;
    for (float v : mask.data) n += v > 0.5f;
    r.disparity.push_back(l.disparity);
    r.region_pixels.push_back(n);
    r.best_sigma.push_back(argmax_sigma(lf, mask, 0.0, 12.0, 0.5));
  }
  return r;
}

// Layered defocus with kappa = 2 against shift-and-add over a circular aperture
// at sigma = d_f, whose aperture spans 2 |d - d_f| px. Mean abs diff away from the border.
inline double cross_op_gap(const LayeredScene& s, double focal, int size, int border) {
  const Image defocus = render_defocus(s, {focal, 2.0, 0});
  const Image shifted = refocus(synth_lightfield(s, size), {focal, true});
  std::size_t n = 0;
  double mean = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = border; y < s.height - border; ++y)
      for (int x = border; x < s.width - border; ++x) {
        mean += std::abs(static_cast<double>(defocus.at(c, y, x)) - shifted.at(c, y, x));
        ++n;
      }
  return mean / static_cast<double>(n);
}

}  // namespace testing
