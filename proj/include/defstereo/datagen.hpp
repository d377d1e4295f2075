#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "defstereo/config.hpp"
#include "defstereo/image.hpp"
#include "defstereo/optics.hpp"

namespace defstereo {

class DatasetError : public IoError {
 public:
  using IoError::IoError;
};

struct DatagenConfig {
  int height = 96, width = 128;
  double disparity_min = 1, disparity_max = 12;
  double kernel_min = 2, kernel_max = 8;  // blur diameter range over the disparity range
  double noise_peak = 1000;               // 0 disables noise
  double focal_jitter = 0;                // +- uniform jitter on d_f, px
  int min_layers = 2, max_layers = 6;
  double stripe_prob = 0.35;              // chance that a layer gets a stripe texture
  double horizontal_stripe_prob = 0.4;    // of those, chance the stripes are exactly horizontal
  int train_count = 200, test_count = 40;

  static DatagenConfig desk();
  static DatagenConfig paper();
  /// Reads `preset` then any of the field keys (`height`, `disparity_max`, ...).
  static DatagenConfig from_config(const KeyValueConfig& cfg);
  void validate() const;

  /// kappa = (kernel_max - kernel_min) / (disparity_max - disparity_min).
  double kappa() const;
  /// Focal plane just in front of the nearest allowed disparity, so blur falls
  /// from kernel_max at disparity_min to kernel_min at disparity_max.
  double focal_disparity() const;
  /// Noise-free defocus model with the configured noise peak.
  DefocusConfig defocus() const;

  nlohmann::json to_json() const;
  static DatagenConfig from_json(const nlohmann::json& j);
  bool operator==(const DatagenConfig&) const = default;
};

struct RandomRecipe {};

struct StaircaseRecipe {
  int num_steps = 4;
  double stripe_period = 6;  // px
  double stripe_angle = 0;   // degrees; 0 = horizontal stripes
  double disparity_lo = 2, disparity_hi = 8;  // top step to bottom step
};

using SceneRecipe = std::variant<RandomRecipe, StaircaseRecipe>;

std::string recipe_name(const SceneRecipe& r);

/// Random: 2-6 layers with disparities drawn uniformly in range and sorted so
/// nearer layers composite in front; full-frame background plus rectangles and
/// ellipses textured by checker, noise, gradient or stripes.
/// Staircase: horizontal bands at evenly spaced disparities, stripe textured.
LayeredScene generate_scene(const SceneRecipe& recipe, const DatagenConfig& cfg, Rng& rng);

struct SampleMeta {
  double focal_disparity = 0, kappa = 0, noise_peak = 0;
  std::uint64_t scene_seed = 0;
  std::string recipe;
  bool operator==(const SampleMeta&) const = default;
};

struct SampleTriplet {
  Image left, right, left_defocus;  // 3 x H x W
  Image disparity;                  // 1 x H x W, left view, px
  SampleMeta meta;
};

/// Pinhole left/right views, defocused left view and the analytic left-view
/// disparity. With noise_peak > 0 the three images get independent Poisson noise.
SampleTriplet render_triplet(const LayeredScene& scene, const DefocusConfig& cfg, Rng& rng);

enum class Split { Train, Test };
std::string to_string(Split s);

/// Scene seed for a sample; train and test draw from disjoint streams.
std::uint64_t sample_seed(std::uint64_t master_seed, Split split, std::size_t index);

/// One sample, fully determined by (master seed, split, index).
SampleTriplet generate_sample(const SceneRecipe& recipe, const DatagenConfig& cfg,
                              std::uint64_t master_seed, Split split, std::size_t index);

struct DatasetEntry {
  std::string id;
  Split split = Split::Train;
  SampleTriplet sample;
};

struct Dataset {
  DatagenConfig config;
  std::uint64_t master_seed = 0;
  std::string recipe;
  std::vector<DatasetEntry> entries;

  std::vector<const DatasetEntry*> split(Split s) const;
};

/// train_count + test_count samples, generated on up to `threads` workers
/// (0 = DEFSTEREO_THREADS or the hardware count). Output does not depend on threads.
Dataset generate_dataset(const SceneRecipe& recipe, const DatagenConfig& cfg,
                         std::uint64_t master_seed, unsigned threads = 0);

/// Worker count from DEFSTEREO_THREADS, else the hardware concurrency.
unsigned default_threads();

/// Per-sample directories {left.png, right.png, defocus.png, disp.pfm, meta.json}
/// plus manifest.json; each sample directory is written under a temporary name
/// and renamed into place. Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);
/// One sample directory; `what` prefixes error messages.
SampleTriplet load_sample(const std::filesystem::path& dir, const std::string& what);

/// Images as they come back from 8-bit PNG.
void quantize_images(SampleTriplet& s);

struct Patch {
  Image left, right, left_defocus, disparity;
  int y0 = 0, x0 = 0;

  /// left, right, defocus stacked into 9 channels.
  Image stacked() const;
};

struct PatchSet {
  int patch_h = 0, patch_w = 0, stride = 0;
  std::vector<Patch> patches;
};

/// Window origins 0, stride, 2 stride, ... with a last window moved back to
/// touch the border when the stride does not land on it.
std::vector<int> window_origins(int extent, int patch, int stride);

PatchSet extract_patches(const SampleTriplet& sample, int patch_h, int patch_w, int stride);

enum class Flip { None, Horizontal, Vertical };
Flip parse_flip(const std::string& s);

/// Right-view disparity from the left-view map by forward warping with a
/// nearest-wins z-buffer; holes take the farther of the nearest row neighbours.
Image right_view_disparity(const Image& left_disparity);

/// vflip mirrors every image vertically. hflip mirrors horizontally; with
/// stereo_roles the left and right views swap, and the target becomes the
/// mirrored right-view disparity so it stays valid for the new left view. The
/// defocused image belongs to the old left view, so stereo hflip is not usable
/// for inputs that include it.
Patch augment(const Patch& p, Flip mode, bool stereo_roles);

}  // namespace defstereo
