#pragma once

#include <optional>
#include <vector>

#include "defstereo/image.hpp"
#include "defstereo/rng.hpp"

namespace defstereo {

/// One fronto-parallel layer. color and alpha cover the whole canvas.
struct Layer {
  Image color;       // 3 x H x W, RGB in [0, 1]
  Image alpha;       // 1 x H x W, coverage in [0, 1]
  double disparity;  // px; the right view sees this layer shifted left by it
};

/// Layers ordered back to front; compositing order is authoritative.
struct LayeredScene {
  int height = 0, width = 0;
  std::vector<Layer> layers;

  static constexpr double kMaxDisparity = 100.0;

  /// Throws on an empty scene, mismatched layer dims, disparity outside
  /// [0, 100), or a backmost layer that is not fully opaque.
  void validate() const;
  double max_disparity() const;
};

/// Composite with every layer k sampled at (x + d_k * sx, y + d_k * sy).
/// Fractional positions are bilinear; outside the canvas the backmost layer
/// clamps to its edge and the other layers are transparent. Output clamped
/// to [0, 1] like render_defocus.
Image render_shifted(const LayeredScene& scene, double sx, double sy);

/// view_shift 0 is the left (pinhole) view, 1 the right view.
Image render_view(const LayeredScene& scene, double view_shift);

/// Per-pixel disparity of the front-most layer with coverage >= 0.5.
Image disparity_map(const LayeredScene& scene);

struct DefocusConfig {
  double focal_disparity = 0.0;  // d_f
  double blur_scale = 1.0;       // kappa: kernel diameter per px of |d - d_f|
  double noise_peak = 0.0;       // photons at intensity 1; 0 = noiseless

  double kernel_diameter(double disparity) const;
};

/// Normalized disc of the given diameter, rasterized by 16x16 supersampling
/// per cell; odd square size. Diameters below 1 give the 1x1 identity.
Image disc_kernel(double diameter);

/// 2D correlation with edge clamping; the kernel is 1 x k x k with k odd.
Image convolve_clamped(const Image& img, const Image& kernel);

/// Layered defocus: each layer's premultiplied color and its coverage are
/// blurred with that layer's disc and composited back to front as
/// C <- C_k + (1 - alpha_k) C. Output clamped to [0, 1].
Image render_defocus(const LayeredScene& scene, const DefocusConfig& cfg);

/// A x A grid of sub-aperture images; angular offsets i (horizontal) and j
/// (vertical) run over [-(A-1)/2, (A-1)/2].
struct LightField {
  int size = 0;          // A, odd
  double u_scale = 0.0;  // px shift per unit angular offset per px of disparity
  std::vector<Image> views;

  int half() const { return (size - 1) / 2; }
  const Image& view(int i, int j) const;
  Image& view(int i, int j);
};

/// Sub-aperture (i, j) renders every layer shifted by (-d i u, -d j u). The
/// default u = 1 / ((A-1)/2) makes the extreme horizontal views a baseline-1
/// stereo pair.
LightField synth_lightfield(const LayeredScene& scene, int size,
                            std::optional<double> u_scale = std::nullopt);

struct RefocusParams {
  double slope = 0.0;              // sigma: a layer with disparity sigma comes out sharp
  bool circular_aperture = false;  // keep only views with i^2 + j^2 <= ((A-1)/2)^2

  /// sigma = 1 - 1/alpha; alpha = 1 keeps the captured focus.
  static RefocusParams from_alpha(double alpha);
};

/// Shift-and-add: E(x, y) = mean over views of L_ij(x - sigma i u, y - sigma j u),
/// bilinear with edge clamping.
Image refocus(const LightField& lf, const RefocusParams& params);

/// Directory of view_<j>_<i>.pfm files (row-major, offsets shifted to start
/// at 0) plus lightfield.json {size, u_scale, height, width, channels}.
void save_lightfield(const std::filesystem::path& dir, const LightField& lf);
LightField load_lightfield(const std::filesystem::path& dir);

/// Poisson(img * peak) / peak per value, clamped to [0, 4].
Image add_poisson_noise(const Image& img, double peak, Rng& rng);

/// Channel-mean luminance gradients by forward differences, averaged over the
/// pixels where `mask` (1 x H x W, may be empty) is set at both ends.
double mean_gradient_magnitude(const Image& img, const Image& mask = {});
double gradient_energy(const Image& img, const Image& mask = {});

/// Fronto-parallel layers from an all-focus image and its disparity map:
/// disparities are rounded to multiples of `step`, one opaque layer per level.
/// The backmost level covers the whole canvas.
LayeredScene scene_from_disparity(const Image& color, const Image& disparity, double step = 1.0);

/// Turbo-style colormap; `lo` maps to dark blue, `hi` to dark red. Values
/// outside the range are clamped, non-finite values are black.
Image colorize_turbo(const Image& disparity, double lo, double hi);

}  // namespace defstereo
