#include "defstereo/optics.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>
#include <cmath>
#include <random>
#include <stdexcept>

namespace defstereo {

namespace {

// Premultiplied color (3 channels) and coverage of one layer at one pixel.
struct Sample {
  float r = 0, g = 0, b = 0, a = 0;
};

struct LayerSampler {
  const Layer& layer;
  bool clamp;  // backmost layer: clamp to edge; others: transparent outside

  Sample texel(int x, int y) const {
    const int h = layer.alpha.height, w = layer.alpha.width;
    if (clamp) {
      x = std::clamp(x, 0, w - 1);
      y = std::clamp(y, 0, h - 1);
    } else if (x < 0 || x >= w || y < 0 || y >= h) {
      return {};
    }
    const float a = layer.alpha.at(0, y, x);
    return {layer.color.at(0, y, x) * a, layer.color.at(1, y, x) * a, layer.color.at(2, y, x) * a,
            a};
  }

  Sample operator()(double fx, double fy) const {
    const double x0 = std::floor(fx), y0 = std::floor(fy);
    const float tx = static_cast<float>(fx - x0), ty = static_cast<float>(fy - y0);
    const int ix = static_cast<int>(x0), iy = static_cast<int>(y0);
    Sample s = texel(ix, iy);
    if (tx == 0.f && ty == 0.f) return s;
    auto lerp = [](const Sample& p, const Sample& q, float t) {
      return Sample{p.r + (q.r - p.r) * t, p.g + (q.g - p.g) * t, p.b + (q.b - p.b) * t,
                    p.a + (q.a - p.a) * t};
    };
    Sample top = tx == 0.f ? s : lerp(s, texel(ix + 1, iy), tx);
    if (ty == 0.f) return top;
    Sample t2 = texel(ix, iy + 1);
    Sample bottom = tx == 0.f ? t2 : lerp(t2, texel(ix + 1, iy + 1), tx);
    return lerp(top, bottom, ty);
  }
};

// C <- P + (1 - A) C, the one compositing rule shared by every renderer.
inline void over(float* c, const Sample& s) {
  const float keep = 1.f - s.a;
  c[0] = s.r + keep * c[0];
  c[1] = s.g + keep * c[1];
  c[2] = s.b + keep * c[2];
}

float clamp01(float v) { return std::clamp(v, 0.f, 1.f); }

}  // namespace

void LayeredScene::validate() const {
  if (layers.empty()) throw std::invalid_argument("scene has no layers");
  if (height <= 0 || width <= 0) throw std::invalid_argument("scene has an empty canvas");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Layer& l = layers[k];
    if (l.color.channels != 3 || l.color.height != height || l.color.width != width ||
        l.alpha.channels != 1 || l.alpha.height != height || l.alpha.width != width) {
      throw std::invalid_argument("layer " + std::to_string(k) + " does not match the canvas");
    }
    if (!(l.disparity >= 0.0 && l.disparity < kMaxDisparity)) {
      throw std::invalid_argument("layer " + std::to_string(k) + " disparity " +
                                  std::to_string(l.disparity) + " outside [0, 100)");
    }
  }
  for (float a : layers.front().alpha.data) {
    if (a != 1.f) throw std::invalid_argument("backmost layer must be fully opaque");
  }
}

double LayeredScene::max_disparity() const {
  double m = 0;
  for (const auto& l : layers) m = std::max(m, l.disparity);
  return m;
}

Image render_shifted(const LayeredScene& scene, double sx, double sy) {
  scene.validate();
  Image out(3, scene.height, scene.width);
  std::vector<float> c(3);
  for (int y = 0; y < scene.height; ++y) {
    for (int x = 0; x < scene.width; ++x) {
      c.assign(3, 0.f);
      for (std::size_t k = 0; k < scene.layers.size(); ++k) {
        const Layer& l = scene.layers[k];
        LayerSampler sample{l, k == 0};
        over(c.data(), sample(x + l.disparity * sx, y + l.disparity * sy));
      }
      for (int ch = 0; ch < 3; ++ch) out.at(ch, y, x) = clamp01(c[ch]);
    }
  }
  return out;
}

Image render_view(const LayeredScene& scene, double view_shift) {
  return render_shifted(scene, view_shift, 0.0);
}

Image disparity_map(const LayeredScene& scene) {
  scene.validate();
  Image d(1, scene.height, scene.width);
  for (int y = 0; y < scene.height; ++y) {
    for (int x = 0; x < scene.width; ++x) {
      for (std::size_t k = scene.layers.size(); k-- > 0;) {
        if (scene.layers[k].alpha.at(0, y, x) >= 0.5f) {
          d.at(0, y, x) = static_cast<float>(scene.layers[k].disparity);
          break;
        }
      }
    }
  }
  return d;
}

double DefocusConfig::kernel_diameter(double disparity) const {
  return blur_scale * std::abs(disparity - focal_disparity);
}

Image disc_kernel(double diameter) {
  if (!(diameter >= 1.0)) return Image(1, 1, 1, 1.f);
  constexpr int kSub = 16;
  const double r = diameter / 2.0;
  const int half = static_cast<int>(std::ceil(r));
  const int size = 2 * half + 1;
  Image k(1, size, size);
  double total = 0;
  std::vector<double> cell(static_cast<std::size_t>(size) * size);
  for (int i = -half; i <= half; ++i) {
    for (int j = -half; j <= half; ++j) {
      int inside = 0;
      for (int a = 0; a < kSub; ++a) {
        const double y = i - 0.5 + (a + 0.5) / kSub;
        for (int b = 0; b < kSub; ++b) {
          const double x = j - 0.5 + (b + 0.5) / kSub;
          if (x * x + y * y <= r * r) ++inside;
        }
      }
      const double v = static_cast<double>(inside) / (kSub * kSub);
      cell[static_cast<std::size_t>(i + half) * size + (j + half)] = v;
      total += v;
    }
  }
  for (std::size_t n = 0; n < cell.size(); ++n) k.data[n] = static_cast<float>(cell[n] / total);
  return k;
}

Image convolve_clamped(const Image& img, const Image& kernel) {
  if (kernel.channels != 1 || kernel.height != kernel.width || kernel.height % 2 == 0) {
    throw std::invalid_argument("convolve_clamped: kernel must be 1 x k x k with k odd");
  }
  if (kernel.height == 1) {
    Image out = img;
    for (auto& v : out.data) v *= kernel.data[0];
    return out;
  }
  const int half = kernel.height / 2, size = kernel.height;
  Image out(img.channels, img.height, img.width);
  std::vector<int> xs(static_cast<std::size_t>(img.width + 2 * half));
  for (int x = -half; x < img.width + half; ++x) xs[x + half] = std::clamp(x, 0, img.width - 1);
  for (int c = 0; c < img.channels; ++c) {
    const float* src = img.plane(c);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        double acc = 0;
        for (int i = 0; i < size; ++i) {
          const int sy = std::clamp(y + i - half, 0, img.height - 1);
          const float* row = src + static_cast<std::size_t>(sy) * img.width;
          const float* krow = kernel.data.data() + static_cast<std::size_t>(i) * size;
          for (int j = 0; j < size; ++j) acc += static_cast<double>(krow[j]) * row[xs[x + j]];
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Image render_defocus(const LayeredScene& scene, const DefocusConfig& cfg) {
  scene.validate();
  if (cfg.blur_scale < 0) throw std::invalid_argument("blur scale must be non-negative");
  const int h = scene.height, w = scene.width;
  Image out(3, h, w);
  for (const Layer& l : scene.layers) {
    // (premultiplied RGB, alpha) as one 4-channel image
    Image pa(4, h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float a = l.alpha.at(0, y, x);
        for (int c = 0; c < 3; ++c) pa.at(c, y, x) = l.color.at(c, y, x) * a;
        pa.at(3, y, x) = a;
      }
    }
    const Image kernel = disc_kernel(cfg.kernel_diameter(l.disparity));
    const Image blurred = kernel.height == 1 ? pa : convolve_clamped(pa, kernel);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float c[3] = {out.at(0, y, x), out.at(1, y, x), out.at(2, y, x)};
        over(c, Sample{blurred.at(0, y, x), blurred.at(1, y, x), blurred.at(2, y, x),
                       blurred.at(3, y, x)});
        for (int ch = 0; ch < 3; ++ch) out.at(ch, y, x) = c[ch];
      }
    }
  }
  for (auto& v : out.data) v = clamp01(v);
  return out;
}

const Image& LightField::view(int i, int j) const {
  const int h = half();
  if (std::abs(i) > h || std::abs(j) > h) throw std::out_of_range("light field view index");
  return views[static_cast<std::size_t>(j + h) * size + (i + h)];
}

Image& LightField::view(int i, int j) {
  return const_cast<Image&>(static_cast<const LightField&>(*this).view(i, j));
}

LightField synth_lightfield(const LayeredScene& scene, int size, std::optional<double> u_scale) {
  if (size < 3 || size % 2 == 0) {
    throw std::invalid_argument("light field size must be odd and >= 3, got " +
                                std::to_string(size));
  }
  LightField lf;
  lf.size = size;
  lf.u_scale = u_scale.value_or(1.0 / lf.half());
  lf.views.resize(static_cast<std::size_t>(size) * size);
  for (int j = -lf.half(); j <= lf.half(); ++j)
    for (int i = -lf.half(); i <= lf.half(); ++i)
      lf.view(i, j) = render_shifted(scene, i * lf.u_scale, j * lf.u_scale);
  return lf;
}

RefocusParams RefocusParams::from_alpha(double alpha) {
  if (alpha == 0.0) throw std::invalid_argument("refocus alpha must be non-zero");
  return RefocusParams{1.0 - 1.0 / alpha};
}

Image refocus(const LightField& lf, const RefocusParams& params) {
  if (lf.views.empty()) throw std::invalid_argument("empty light field");
  const Image& ref = lf.view(0, 0);
  const int h = ref.height, w = ref.width, ch = ref.channels;
  std::vector<double> acc(ref.data.size(), 0.0);
  int used = 0;
  const int half = lf.half();
  for (int j = -half; j <= half; ++j) {
    for (int i = -half; i <= half; ++i) {
      if (params.circular_aperture && i * i + j * j > half * half) continue;
      const Image& v = lf.view(i, j);
      const double ox = -params.slope * i * lf.u_scale;
      const double oy = -params.slope * j * lf.u_scale;
      const double fx0 = std::floor(ox), fy0 = std::floor(oy);
      const double tx = ox - fx0, ty = oy - fy0;
      const int dx = static_cast<int>(fx0), dy = static_cast<int>(fy0);
      for (int c = 0; c < ch; ++c) {
        const float* p = v.plane(c);
        auto at = [&](int y, int x) {
          return static_cast<double>(
              p[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)]);
        };
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const int sx = x + dx, sy = y + dy;
            double s = at(sy, sx);
            if (tx != 0 || ty != 0) {
              s = (1 - ty) * ((1 - tx) * s + tx * at(sy, sx + 1)) +
                  ty * ((1 - tx) * at(sy + 1, sx) + tx * at(sy + 1, sx + 1));
            }
            acc[(static_cast<std::size_t>(c) * h + y) * w + x] += s;
          }
        }
      }
      ++used;
    }
  }
  Image out(ch, h, w);
  for (std::size_t n = 0; n < acc.size(); ++n) out.data[n] = static_cast<float>(acc[n] / used);
  return out;
}

namespace {

std::filesystem::path view_path(const std::filesystem::path& dir, int r, int c) {
  return dir / ("view_" + std::to_string(r) + "_" + std::to_string(c) + ".pfm");
}

}  // namespace

void save_lightfield(const std::filesystem::path& dir, const LightField& lf) {
  if (lf.views.empty()) throw std::invalid_argument("empty light field");
  std::filesystem::create_directories(dir);
  const Image& ref = lf.views.front();
  nlohmann::json meta = {{"size", lf.size},        {"u_scale", lf.u_scale},
                         {"height", ref.height},   {"width", ref.width},
                         {"channels", ref.channels}};
  for (int r = 0; r < lf.size; ++r)
    for (int c = 0; c < lf.size; ++c)
      write_pfm(view_path(dir, r, c), lf.views[static_cast<std::size_t>(r) * lf.size + c]);
  std::ofstream out(dir / "lightfield.json");
  out << meta.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + (dir / "lightfield.json").string());
}

LightField load_lightfield(const std::filesystem::path& dir) {
  std::ifstream in(dir / "lightfield.json");
  if (!in) throw IoError("missing " + (dir / "lightfield.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "lightfield.json").string() + ": " + e.what());
  }
  LightField lf;
  int h = 0, w = 0;
  try {
    lf.size = meta.at("size").get<int>();
    lf.u_scale = meta.at("u_scale").get<double>();
    h = meta.at("height").get<int>();
    w = meta.at("width").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "lightfield.json").string() + ": " + e.what());
  }
  if (lf.size < 3 || lf.size % 2 == 0) throw IoError(dir.string() + ": invalid light field size");
  for (int r = 0; r < lf.size; ++r) {
    for (int c = 0; c < lf.size; ++c) {
      Image v = read_pfm(view_path(dir, r, c));
      if (v.height != h || v.width != w) {
        throw IoError(view_path(dir, r, c).string() + ": view dims do not match metadata");
      }
      lf.views.push_back(std::move(v));
    }
  }
  return lf;
}

Image add_poisson_noise(const Image& img, double peak, Rng& rng) {
  if (!(peak > 0)) throw std::invalid_argument("noise peak must be positive");
  Image out(img.channels, img.height, img.width);
  for (std::size_t n = 0; n < img.data.size(); ++n) {
    const double mean = std::max(0.0, static_cast<double>(img.data[n])) * peak;
    double v = 0;
    if (mean > 0) {
      std::poisson_distribution<long long> pd(mean);
      v = static_cast<double>(pd(rng)) / peak;
    }
    out.data[n] = static_cast<float>(std::clamp(v, 0.0, 4.0));
  }
  return out;
}

namespace {

template <typename F>
double gradient_stat(const Image& img, const Image& mask, F f) {
  const int h = img.height, w = img.width;
  std::vector<double> lum(img.pixels(), 0.0);
  for (int c = 0; c < img.channels; ++c)
    for (std::size_t n = 0; n < img.pixels(); ++n) lum[n] += img.plane(c)[n];
  for (auto& v : lum) v /= img.channels;
  auto on = [&](int y, int x) { return mask.data.empty() || mask.at(0, y, x) > 0.5f; };
  double total = 0;
  std::size_t count = 0;
  for (int y = 0; y + 1 < h; ++y) {
    for (int x = 0; x + 1 < w; ++x) {
      if (!on(y, x) || !on(y, x + 1) || !on(y + 1, x)) continue;
      const double v = lum[static_cast<std::size_t>(y) * w + x];
      const double gx = lum[static_cast<std::size_t>(y) * w + x + 1] - v;
      const double gy = lum[static_cast<std::size_t>(y + 1) * w + x] - v;
      total += f(gx, gy);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("gradient statistic over an empty region");
  return total / static_cast<double>(count);
}

}  // namespace

double mean_gradient_magnitude(const Image& img, const Image& mask) {
  return gradient_stat(img, mask, [](double gx, double gy) { return std::sqrt(gx * gx + gy * gy); });
}

double gradient_energy(const Image& img, const Image& mask) {
  return gradient_stat(img, mask, [](double gx, double gy) { return gx * gx + gy * gy; });
}

LayeredScene scene_from_disparity(const Image& color, const Image& disparity, double step) {
  if (color.channels != 3 || disparity.channels != 1 || color.height != disparity.height ||
      color.width != disparity.width) {
    throw std::invalid_argument("scene_from_disparity: need a 3-channel image and a matching disparity map");
  }
  if (!(step > 0)) throw std::invalid_argument("scene_from_disparity: step must be positive");
  std::vector<long> level(disparity.data.size());
  for (std::size_t k = 0; k < level.size(); ++k) {
    if (!std::isfinite(disparity.data[k]))
      throw std::invalid_argument("scene_from_disparity: non-finite disparity");
    level[k] = std::lround(disparity.data[k] / step);
  }
  std::vector<long> levels = level;
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

  LayeredScene scene{color.height, color.width, {}};
  for (std::size_t n = 0; n < levels.size(); ++n) {
    Layer layer{color, Image(1, color.height, color.width), static_cast<double>(levels[n]) * step};
    for (std::size_t k = 0; k < level.size(); ++k)
      layer.alpha.data[k] = (n == 0 || level[k] == levels[n]) ? 1.f : 0.f;
    scene.layers.push_back(std::move(layer));
  }
  scene.validate();
  return scene;
}

Image colorize_turbo(const Image& disparity, double lo, double hi) {
  if (disparity.channels != 1) throw std::invalid_argument("colorize_turbo: expected a 1-channel map");
  if (!(hi > lo)) throw std::invalid_argument("colorize_turbo: need max > min");
  auto poly = [](double t, const double (&c)[6]) {
    return c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
  };
  // polynomial fit to the turbo map
  static constexpr double kr[6] = {0.13572138, 4.61539260, -42.66032258, 132.13108234, -152.94239396, 59.28637943};
  static constexpr double kg[6] = {0.09140261, 2.19418839, 4.84296658, -14.18503333, 4.27729857, 2.82956604};
  static constexpr double kb[6] = {0.10667330, 12.64194608, -60.58204836, 110.36276771, -89.90310912, 27.34824973};
  Image out(3, disparity.height, disparity.width);
  for (int y = 0; y < disparity.height; ++y)
    for (int x = 0; x < disparity.width; ++x) {
      const double v = disparity.at(0, y, x);
      if (!std::isfinite(v)) continue;
      const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
      out.at(0, y, x) = static_cast<float>(std::clamp(poly(t, kr), 0.0, 1.0));
      out.at(1, y, x) = static_cast<float>(std::clamp(poly(t, kg), 0.0, 1.0));
      out.at(2, y, x) = static_cast<float>(std::clamp(poly(t, kb), 0.0, 1.0));
    }
  return out;
}

}  // namespace defstereo
