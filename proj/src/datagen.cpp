#include "defstereo/datagen.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <thread>

namespace defstereo {

namespace {

using Color = std::array<float, 3>;

float uniform(Rng& rng, double lo, double hi) {
  return static_cast<float>(std::uniform_real_distribution<double>(lo, hi)(rng));
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Color random_color(Rng& rng) {
  return {uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95)};
}

// two colours whose channel means differ by at least 0.3
std::pair<Color, Color> contrasting_pair(Rng& rng) {
  Color a = random_color(rng), b = random_color(rng);
  auto mean = [](const Color& c) { return (c[0] + c[1] + c[2]) / 3.f; };
  while (std::abs(mean(a) - mean(b)) < 0.3f) b = random_color(rng);
  return {a, b};
}

// Bilinear upsampling of a random colour lattice with the given cell size.
Image value_noise(int h, int w, double cell, Rng& rng) {
  const int gh = static_cast<int>(h / cell) + 2, gw = static_cast<int>(w / cell) + 2;
  std::vector<Color> grid(static_cast<std::size_t>(gh) * gw);
  for (auto& c : grid) c = random_color(rng);
  Image img(3, h, w);
  for (int y = 0; y < h; ++y) {
    const double gy = y / cell;
    const int iy = static_cast<int>(gy);
    const float ty = static_cast<float>(gy - iy);
    for (int x = 0; x < w; ++x) {
      const double gx = x / cell;
      const int ix = static_cast<int>(gx);
      const float tx = static_cast<float>(gx - ix);
      const auto& c00 = grid[static_cast<std::size_t>(iy) * gw + ix];
      const auto& c01 = grid[static_cast<std::size_t>(iy) * gw + ix + 1];
      const auto& c10 = grid[static_cast<std::size_t>(iy + 1) * gw + ix];
      const auto& c11 = grid[static_cast<std::size_t>(iy + 1) * gw + ix + 1];
      for (int c = 0; c < 3; ++c) {
        const float top = c00[c] + (c01[c] - c00[c]) * tx;
        const float bot = c10[c] + (c11[c] - c10[c]) * tx;
        img.at(c, y, x) = top + (bot - top) * ty;
      }
    }
  }
  return img;
}

void add_grain(Image& img, float amplitude, Rng& rng) {
  for (auto& v : img.data) v = std::clamp(v + uniform(rng, -amplitude, amplitude), 0.f, 1.f);
}

// Square-wave stripes across direction `angle_deg`, 4x4 supersampled; angle 0
// gives stripes that are constant along each row.
Image stripes(int h, int w, double period, double angle_deg, const Color& a, const Color& b,
              double phase) {
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double s = std::sin(th), c = std::cos(th);
  const bool horizontal = angle_deg == 0.0;
  Image img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double frac_a = 0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          const double py = y - 0.375 + 0.25 * i;
          const double px = horizontal ? x : x - 0.375 + 0.25 * j;
          const double t = (-px * s + py * c) / period + phase;
          frac_a += (t - std::floor(t)) < 0.5 ? 1.0 : 0.0;
        }
      frac_a /= 16;
      for (int ch = 0; ch < 3; ++ch)
        img.at(ch, y, x) = static_cast<float>(frac_a * a[ch] + (1 - frac_a) * b[ch]);
    }
  return img;
}

Image random_texture(const DatagenConfig& cfg, Rng& rng) {
  const int h = cfg.height, w = cfg.width;
  const double scale = std::min(h, w) / 96.0;
  if (uniform(rng, 0, 1) < cfg.stripe_prob) {
    const bool horizontal = uniform(rng, 0, 1) < cfg.horizontal_stripe_prob;
    const double angle = horizontal ? 0.0 : uniform(rng, 0, 180);
    const auto [a, b] = contrasting_pair(rng);
    return stripes(h, w, uniform(rng, 4, 12) * scale, angle, a, b, uniform(rng, 0, 1));
  }
  switch (uniform_int(rng, 0, 2)) {
    case 0: {  // checker
      const double cell = uniform(rng, 3, 12) * scale;
      const auto [a, b] = contrasting_pair(rng);
      Image img(3, h, w);
      const int ox = uniform_int(rng, 0, 64), oy = uniform_int(rng, 0, 64);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const bool odd = (static_cast<int>((x + ox) / cell) + static_cast<int>((y + oy) / cell)) & 1;
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = odd ? a[c] : b[c];
        }
      add_grain(img, 0.05f, rng);
      return img;
    }
    case 1: {  // noise
      Image img = value_noise(h, w, uniform(rng, 1.5, 8) * scale, rng);
      add_grain(img, 0.08f, rng);
      return img;
    }
    default: {  // gradient with noise on top
      const auto [a, b] = contrasting_pair(rng);
      const double th = uniform(rng, 0, 2 * std::numbers::pi);
      const double span = std::abs(std::cos(th)) * w + std::abs(std::sin(th)) * h;
      Image noise = value_noise(h, w, uniform(rng, 2, 6) * scale, rng);
      Image img(3, h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double t = ((x - w / 2.0) * std::cos(th) + (y - h / 2.0) * std::sin(th)) / span + 0.5;
          t = std::clamp(t, 0.0, 1.0);
          for (int c = 0; c < 3; ++c)
            img.at(c, y, x) = static_cast<float>(
                0.6 * (t * a[c] + (1 - t) * b[c]) + 0.4 * noise.at(c, y, x));
        }
      add_grain(img, 0.04f, rng);
      return img;
    }
  }
}

Image random_shape_mask(int h, int w, Rng& rng) {
  for (;;) {
    Image m(1, h, w);
    const double cx = uniform(rng, 0, w), cy = uniform(rng, 0, h);
    const double ax = uniform(rng, 0.1, 0.35) * w, ay = uniform(rng, 0.1, 0.35) * h;
    const bool ellipse = uniform(rng, 0, 1) < 0.5;
    std::size_t covered = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double u = (x + 0.5 - cx) / ax, v = (y + 0.5 - cy) / ay;
        const bool in = ellipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
        if (in) m.at(0, y, x) = 1.f, ++covered;
      }
    if (covered >= 64) return m;
  }
}

LayeredScene random_scene(const DatagenConfig& cfg, Rng& rng) {
  for (;;) {
    const int n = uniform_int(rng, cfg.min_layers, cfg.max_layers);
    std::vector<double> d(n);
    for (auto& v : d) v = uniform(rng, cfg.disparity_min, cfg.disparity_max);
    std::sort(d.begin(), d.end());
    if (d.back() >= LayeredScene::kMaxDisparity) continue;
    LayeredScene s{cfg.height, cfg.width, {}};
    for (int k = 0; k < n; ++k) {
      Image tex = random_texture(cfg, rng);
      Image mask = k == 0 ? Image(1, cfg.height, cfg.width, 1.f)
                          : random_shape_mask(cfg.height, cfg.width, rng);
      s.layers.push_back({std::move(tex), std::move(mask), d[k]});
    }
    return s;
  }
}

LayeredScene staircase_scene(const StaircaseRecipe& r, const DatagenConfig& cfg, Rng& rng) {
  if (r.num_steps < 1) throw std::invalid_argument("staircase needs at least one step");
  if (r.stripe_period <= 0) throw std::invalid_argument("stripe period must be positive");
  const int h = cfg.height, w = cfg.width;
  LayeredScene s{h, w, {}};
  for (int k = 0; k < r.num_steps; ++k) {
    const double d = r.num_steps == 1 ? r.disparity_lo
                                      : r.disparity_lo + (r.disparity_hi - r.disparity_lo) * k /
                                                             (r.num_steps - 1);
    const int y0 = static_cast<int>(std::lround(static_cast<double>(k) * h / r.num_steps));
    const int y1 = static_cast<int>(std::lround(static_cast<double>(k + 1) * h / r.num_steps));
    const auto [a, b] = contrasting_pair(rng);
    Image mask(1, h, w, k == 0 ? 1.f : 0.f);
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < w; ++x) mask.at(0, y, x) = 1.f;
    s.layers.push_back({stripes(h, w, r.stripe_period, r.stripe_angle, a, b, 0.0), mask, d});
  }
  return s;
}

Image crop(const Image& img, int y0, int x0, int h, int w) {
  Image out(img.channels, h, w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      std::copy_n(img.plane(c) + static_cast<std::size_t>(y0 + y) * img.width + x0, w,
                  out.plane(c) + static_cast<std::size_t>(y) * w);
  return out;
}

Image mirror(const Image& img, bool horizontal) {
  Image out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(c, y, x) = horizontal ? img.at(c, y, img.width - 1 - x)
                                     : img.at(c, img.height - 1 - y, x);
  return out;
}

nlohmann::json meta_json(const SampleMeta& m) {
  return {{"focal_disparity", m.focal_disparity},
          {"kappa", m.kappa},
          {"noise_peak", m.noise_peak},
          {"scene_seed", m.scene_seed},
          {"recipe", m.recipe}};
}

nlohmann::json read_json(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw DatasetError(what + ": missing " + path.filename().string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(what + ": corrupted " + path.filename().string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string sample_id(Split s, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu", s == Split::Train ? "train" : "test", i);
  return buf;
}

}  // namespace

DatagenConfig DatagenConfig::desk() { return {}; }

DatagenConfig DatagenConfig::paper() {
  DatagenConfig c;
  c.height = 540;
  c.width = 960;
  c.disparity_min = 4;
  c.disparity_max = 96;
  c.kernel_min = 7;
  c.kernel_max = 23;
  c.train_count = 750;
  c.test_count = 160;
  return c;
}

DatagenConfig DatagenConfig::from_config(const KeyValueConfig& kv) {
  const std::string preset = kv.get_string("preset", "desk");
  DatagenConfig c;
  if (preset == "paper") c = paper();
  else if (preset != "desk" && preset != "micro") throw ConfigError("unknown preset '" + preset + "'");
  c.height = static_cast<int>(kv.get_int("height", c.height));
  c.width = static_cast<int>(kv.get_int("width", c.width));
  c.disparity_min = kv.get_double("disparity_min", c.disparity_min);
  c.disparity_max = kv.get_double("disparity_max", c.disparity_max);
  c.kernel_min = kv.get_double("kernel_min", c.kernel_min);
  c.kernel_max = kv.get_double("kernel_max", c.kernel_max);
  c.noise_peak = kv.get_double("noise_peak", c.noise_peak);
  c.focal_jitter = kv.get_double("focal_jitter", c.focal_jitter);
  c.min_layers = static_cast<int>(kv.get_int("min_layers", c.min_layers));
  c.max_layers = static_cast<int>(kv.get_int("max_layers", c.max_layers));
  c.stripe_prob = kv.get_double("stripe_prob", c.stripe_prob);
  c.horizontal_stripe_prob = kv.get_double("horizontal_stripe_prob", c.horizontal_stripe_prob);
  c.train_count = static_cast<int>(kv.get_int("train_count", c.train_count));
  c.test_count = static_cast<int>(kv.get_int("test_count", c.test_count));
  c.validate();
  return c;
}

void DatagenConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("datagen config: " + m); };
  if (height <= 0 || width <= 0) fail("canvas must be non-empty");
  if (!(disparity_min >= 0 && disparity_max > disparity_min)) fail("need 0 <= disparity_min < disparity_max");
  if (disparity_max >= LayeredScene::kMaxDisparity) fail("disparity_max must be below 100 px");
  if (!(kernel_min >= 0 && kernel_max > kernel_min)) fail("need 0 <= kernel_min < kernel_max");
  if (noise_peak < 0) fail("noise_peak must be >= 0");
  if (focal_jitter < 0) fail("focal_jitter must be >= 0");
  if (min_layers < 1 || max_layers < min_layers) fail("need 1 <= min_layers <= max_layers");
  if (train_count < 0 || test_count < 0) fail("sample counts must be >= 0");
}

double DatagenConfig::kappa() const {
  return (kernel_max - kernel_min) / (disparity_max - disparity_min);
}

double DatagenConfig::focal_disparity() const { return disparity_max + kernel_min / kappa(); }

DefocusConfig DatagenConfig::defocus() const { return {focal_disparity(), kappa(), noise_peak}; }

nlohmann::json DatagenConfig::to_json() const {
  return {{"height", height},
          {"width", width},
          {"disparity_min", disparity_min},
          {"disparity_max", disparity_max},
          {"kernel_min", kernel_min},
          {"kernel_max", kernel_max},
          {"noise_peak", noise_peak},
          {"focal_jitter", focal_jitter},
          {"min_layers", min_layers},
          {"max_layers", max_layers},
          {"stripe_prob", stripe_prob},
          {"horizontal_stripe_prob", horizontal_stripe_prob},
          {"train_count", train_count},
          {"test_count", test_count}};
}

DatagenConfig DatagenConfig::from_json(const nlohmann::json& j) {
  DatagenConfig c;
  j.at("height").get_to(c.height);
  j.at("width").get_to(c.width);
  j.at("disparity_min").get_to(c.disparity_min);
  j.at("disparity_max").get_to(c.disparity_max);
  j.at("kernel_min").get_to(c.kernel_min);
  j.at("kernel_max").get_to(c.kernel_max);
  j.at("noise_peak").get_to(c.noise_peak);
  j.at("focal_jitter").get_to(c.focal_jitter);
  j.at("min_layers").get_to(c.min_layers);
  j.at("max_layers").get_to(c.max_layers);
  j.at("stripe_prob").get_to(c.stripe_prob);
  j.at("horizontal_stripe_prob").get_to(c.horizontal_stripe_prob);
  j.at("train_count").get_to(c.train_count);
  j.at("test_count").get_to(c.test_count);
  return c;
}

std::string recipe_name(const SceneRecipe& r) {
  return std::holds_alternative<RandomRecipe>(r) ? "random" : "staircase";
}

LayeredScene generate_scene(const SceneRecipe& recipe, const DatagenConfig& cfg, Rng& rng) {
  cfg.validate();
  if (const auto* st = std::get_if<StaircaseRecipe>(&recipe)) return staircase_scene(*st, cfg, rng);
  return random_scene(cfg, rng);
}

SampleTriplet render_triplet(const LayeredScene& scene, const DefocusConfig& cfg, Rng& rng) {
  SampleTriplet t;
  t.left = render_view(scene, 0);
  t.right = render_view(scene, 1);
  t.left_defocus = render_defocus(scene, cfg);
  t.disparity = disparity_map(scene);
  if (cfg.noise_peak > 0) {
    t.left = add_poisson_noise(t.left, cfg.noise_peak, rng);
    t.right = add_poisson_noise(t.right, cfg.noise_peak, rng);
    t.left_defocus = add_poisson_noise(t.left_defocus, cfg.noise_peak, rng);
  }
  t.meta.focal_disparity = cfg.focal_disparity;
  t.meta.kappa = cfg.blur_scale;
  t.meta.noise_peak = cfg.noise_peak;
  return t;
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

std::uint64_t sample_seed(std::uint64_t master_seed, Split split, std::size_t index) {
  const std::uint64_t base = split == Split::Train ? 0 : (1ULL << 48);
  return derive_seed(master_seed, base + index);
}

SampleTriplet generate_sample(const SceneRecipe& recipe, const DatagenConfig& cfg,
                              std::uint64_t master_seed, Split split, std::size_t index) {
  const std::uint64_t seed = sample_seed(master_seed, split, index);
  Rng scene_rng(seed);
  const LayeredScene scene = generate_scene(recipe, cfg, scene_rng);
  DefocusConfig dc = cfg.defocus();
  if (cfg.focal_jitter > 0) dc.focal_disparity += uniform(scene_rng, -cfg.focal_jitter, cfg.focal_jitter);
  Rng noise_rng = make_rng(seed, "noise");
  SampleTriplet t = render_triplet(scene, dc, noise_rng);
  t.meta.scene_seed = seed;
  t.meta.recipe = recipe_name(recipe);
  return t;
}

std::vector<const DatasetEntry*> Dataset::split(Split s) const {
  std::vector<const DatasetEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

unsigned default_threads() {
  if (const char* env = std::getenv("DEFSTEREO_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Dataset generate_dataset(const SceneRecipe& recipe, const DatagenConfig& cfg,
                         std::uint64_t master_seed, unsigned threads) {
  cfg.validate();
  Dataset ds{cfg, master_seed, recipe_name(recipe), {}};
  for (int i = 0; i < cfg.train_count; ++i) ds.entries.push_back({sample_id(Split::Train, i), Split::Train, {}});
  for (int i = 0; i < cfg.test_count; ++i) ds.entries.push_back({sample_id(Split::Test, i), Split::Test, {}});
  std::vector<std::size_t> local(ds.entries.size());
  for (std::size_t n = 0, tr = 0, te = 0; n < ds.entries.size(); ++n)
    local[n] = ds.entries[n].split == Split::Train ? tr++ : te++;

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t n; (n = next.fetch_add(1)) < ds.entries.size();) {
      auto& e = ds.entries[n];
      e.sample = generate_sample(recipe, cfg, master_seed, e.split, local[n]);
    }
  };
  if (threads == 0) threads = default_threads();
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, ds.entries.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return ds;
}

void quantize_images(SampleTriplet& s) {
  for (Image* img : {&s.left, &s.right, &s.left_defocus})
    for (auto& v : img->data) v = quantize8(v) / 255.f;
}

std::filesystem::path write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json samples = nlohmann::json::array();
  std::set<std::string> ids;
  for (const auto& e : ds.entries) {
    if (!ids.insert(e.id).second) throw DatasetError("duplicate sample id " + e.id);
    const fs::path tmp = dir / (".tmp_" + e.id), final_dir = dir / e.id;
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    write_png(tmp / "left.png", e.sample.left);
    write_png(tmp / "right.png", e.sample.right);
    write_png(tmp / "defocus.png", e.sample.left_defocus);
    write_pfm(tmp / "disp.pfm", e.sample.disparity);
    write_text(tmp / "meta.json", meta_json(e.sample.meta).dump(2) + "\n");
    fs::remove_all(final_dir);
    fs::rename(tmp, final_dir);
    samples.push_back({{"id", e.id}, {"split", to_string(e.split)}});
  }
  const nlohmann::json manifest = {{"format", "defstereo-dataset"},
                                   {"version", 1},
                                   {"master_seed", ds.master_seed},
                                   {"recipe", ds.recipe},
                                   {"config", ds.config.to_json()},
                                   {"samples", samples}};
  const fs::path path = dir / "manifest.json";
  write_text(dir / ".tmp_manifest.json", manifest.dump(2) + "\n");
  fs::rename(dir / ".tmp_manifest.json", path);
  return path;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const nlohmann::json manifest = read_json(dir / "manifest.json", dir.string());
  Dataset ds;
  std::vector<std::pair<std::string, Split>> listed;
  try {
    if (manifest.at("format") != "defstereo-dataset" || manifest.at("version") != 1)
      throw DatasetError(dir.string() + ": unsupported manifest format");
    ds.config = DatagenConfig::from_json(manifest.at("config"));
    ds.master_seed = manifest.at("master_seed").get<std::uint64_t>();
    ds.recipe = manifest.at("recipe").get<std::string>();
    for (const auto& s : manifest.at("samples")) {
      const std::string split = s.at("split").get<std::string>();
      if (split != "train" && split != "test") throw DatasetError("unknown split '" + split + "'");
      listed.emplace_back(s.at("id").get<std::string>(), split == "train" ? Split::Train : Split::Test);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(dir.string() + ": malformed manifest.json: " + e.what());
  }
  std::size_t on_disk = 0;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && entry.path().filename().string().rfind(".tmp_", 0) != 0) ++on_disk;
  if (on_disk != listed.size()) {
    throw DatasetError(dir.string() + ": manifest lists " + std::to_string(listed.size()) +
                       " samples but the directory holds " + std::to_string(on_disk));
  }
  for (const auto& [id, split] : listed) {
    if (!fs::is_directory(dir / id)) throw DatasetError("sample " + id + ": directory missing");
    ds.entries.push_back({id, split, load_sample(dir / id, "sample " + id)});
  }
  return ds;
}

SampleTriplet load_sample(const std::filesystem::path& sd, const std::string& what) {
  SampleTriplet s;
  for (const char* f : {"left.png", "right.png", "defocus.png", "disp.pfm"})
    if (!std::filesystem::exists(sd / f)) throw DatasetError(what + ": missing " + f);
  const nlohmann::json meta = read_json(sd / "meta.json", what);
  try {
    s.meta.focal_disparity = meta.at("focal_disparity").get<double>();
    s.meta.kappa = meta.at("kappa").get<double>();
    s.meta.noise_peak = meta.at("noise_peak").get<double>();
    s.meta.scene_seed = meta.at("scene_seed").get<std::uint64_t>();
    s.meta.recipe = meta.at("recipe").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw DatasetError(what + ": corrupted meta.json: " + ex.what());
  }
  try {
    s.left = read_png(sd / "left.png");
    s.right = read_png(sd / "right.png");
    s.left_defocus = read_png(sd / "defocus.png");
    s.disparity = read_pfm(sd / "disp.pfm");
  } catch (const IoError& ex) {
    throw DatasetError(what + ": " + ex.what());
  }
  if (s.left.channels != 3 || !s.left.same_shape(s.right) || !s.left.same_shape(s.left_defocus) ||
      s.disparity.channels != 1 || s.disparity.height != s.left.height ||
      s.disparity.width != s.left.width) {
    throw DatasetError(what + ": image dimensions do not match");
  }
  return s;
}

Image Patch::stacked() const {
  Image out(9, left.height, left.width);
  const std::size_t n = left.data.size();
  std::copy(left.data.begin(), left.data.end(), out.data.begin());
  std::copy(right.data.begin(), right.data.end(), out.data.begin() + n);
  std::copy(left_defocus.data.begin(), left_defocus.data.end(), out.data.begin() + 2 * n);
  return out;
}

std::vector<int> window_origins(int extent, int patch, int stride) {
  if (stride <= 0) throw std::invalid_argument("stride must be positive");
  if (patch <= 0 || patch > extent) {
    throw std::invalid_argument("patch extent " + std::to_string(patch) + " does not fit in " +
                                std::to_string(extent));
  }
  std::vector<int> o;
  for (int v = 0; v + patch <= extent; v += stride) o.push_back(v);
  if (o.back() + patch < extent) o.push_back(extent - patch);
  return o;
}

PatchSet extract_patches(const SampleTriplet& s, int patch_h, int patch_w, int stride) {
  PatchSet ps{patch_h, patch_w, stride, {}};
  for (int y0 : window_origins(s.left.height, patch_h, stride))
    for (int x0 : window_origins(s.left.width, patch_w, stride))
      ps.patches.push_back({crop(s.left, y0, x0, patch_h, patch_w),
                            crop(s.right, y0, x0, patch_h, patch_w),
                            crop(s.left_defocus, y0, x0, patch_h, patch_w),
                            crop(s.disparity, y0, x0, patch_h, patch_w), y0, x0});
  return ps;
}

Flip parse_flip(const std::string& s) {
  if (s == "none") return Flip::None;
  if (s == "hflip") return Flip::Horizontal;
  if (s == "vflip") return Flip::Vertical;
  throw std::invalid_argument("unknown flip mode '" + s + "'");
}

Image right_view_disparity(const Image& ld) {
  const int h = ld.height, w = ld.width;
  Image rd(1, h, w, -1.f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float d = ld.at(0, y, x);
      const long xr = std::lround(x - d);
      if (xr >= 0 && xr < w && d > rd.at(0, y, static_cast<int>(xr))) rd.at(0, y, static_cast<int>(xr)) = d;
    }
    std::vector<float> row(rd.plane(0) + static_cast<std::size_t>(y) * w,
                           rd.plane(0) + static_cast<std::size_t>(y + 1) * w);
    for (int x = 0; x < w; ++x) {
      if (row[x] >= 0) continue;
      float best = std::numeric_limits<float>::infinity();
      for (int l = x - 1; l >= 0; --l)
        if (row[l] >= 0) { best = std::min(best, row[l]); break; }
      for (int r = x + 1; r < w; ++r)
        if (row[r] >= 0) { best = std::min(best, row[r]); break; }
      rd.at(0, y, x) = std::isinf(best) ? 0.f : best;
    }
  }
  return rd;
}

Patch augment(const Patch& p, Flip mode, bool stereo_roles) {
  if (mode == Flip::None) return p;
  const bool h = mode == Flip::Horizontal;
  Patch out;
  out.y0 = p.y0;
  out.x0 = p.x0;
  out.left_defocus = mirror(p.left_defocus, h);
  if (h && stereo_roles) {
    out.left = mirror(p.right, true);
    out.right = mirror(p.left, true);
    out.disparity = mirror(right_view_disparity(p.disparity), true);
  } else {
    out.left = mirror(p.left, h);
    out.right = mirror(p.right, h);
    out.disparity = mirror(p.disparity, h);
  }
  return out;
}

}  // namespace defstereo
