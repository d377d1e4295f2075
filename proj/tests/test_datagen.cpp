#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <map>
#include <fstream>
#include <set>
#include <sstream>

#include "defstereo/datagen.hpp"
#include "optics_suite.hpp"

using namespace defstereo;
using namespace testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("defstereo_datagen_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// every file below `dir`, relative path -> bytes
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

bool bit_equal_floats(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

DatagenConfig small_config(int train, int test) {
  DatagenConfig c = DatagenConfig::desk();
  c.height = 32;
  c.width = 48;
  c.train_count = train;
  c.test_count = test;
  return c;
}

// analytic disparity of what the right view sees
Image right_disparity_analytic(const LayeredScene& s) {
  Image d(1, s.height, s.width);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      for (std::size_t k = s.layers.size(); k-- > 0;) {
        const Layer& l = s.layers[k];
        int sx = x + static_cast<int>(l.disparity);
        if (k == 0) sx = std::min(sx, s.width - 1);
        if (sx >= s.width || l.alpha.at(0, y, sx) < 0.5f) continue;
        d.at(0, y, x) = static_cast<float>(l.disparity);
        break;
      }
  return d;
}

LayeredScene integer_scene(std::uint64_t seed) {
  Rng rng(seed);
  const int h = 40, w = 64;
  return {h, w, {full_layer(h, w, 2, rng), rect_layer(h, w, 5, 4, 30, 12, 30, rng),
                 rect_layer(h, w, 9, 18, 36, 26, 44, rng)}};
}

}  // namespace

TEST_CASE("config presets and focal geometry") {
  const DatagenConfig d = DatagenConfig::desk();
  CHECK(d.height == 96);
  CHECK(d.width == 128);
  CHECK(d.kappa() == doctest::Approx(6.0 / 11.0));
  // nearest disparity gets the smallest kernel, farthest the largest
  const DefocusConfig dc = d.defocus();
  CHECK(dc.kernel_diameter(d.disparity_max) == doctest::Approx(d.kernel_min));
  CHECK(dc.kernel_diameter(d.disparity_min) == doctest::Approx(d.kernel_max));
  CHECK(dc.noise_peak == 1000);

  const DatagenConfig p = DatagenConfig::paper();
  CHECK(p.kernel_min == 7);
  CHECK(p.kernel_max == 23);
  CHECK(p.disparity_max < 100);

  auto kv = KeyValueConfig::parse("preset = paper\nheight = 64\nnoise_peak = 0\n");
  const DatagenConfig c = DatagenConfig::from_config(kv);
  CHECK(c.height == 64);
  CHECK(c.width == 960);
  CHECK(c.noise_peak == 0);
  CHECK_THROWS_AS(DatagenConfig::from_config(KeyValueConfig::parse("disparity_max = 100")),
                  ConfigError);
  CHECK_THROWS_AS(DatagenConfig::from_config(KeyValueConfig::parse("preset = huge")), ConfigError);
  CHECK(DatagenConfig::from_json(p.to_json()) == p);
}

TEST_CASE("random scenes") {
  DatagenConfig cfg = small_config(0, 0);
  Rng a(3), b(3);
  const LayeredScene s1 = generate_scene(RandomRecipe{}, cfg, a);
  const LayeredScene s2 = generate_scene(RandomRecipe{}, cfg, b);
  REQUIRE(s1.layers.size() == s2.layers.size());
  for (std::size_t k = 0; k < s1.layers.size(); ++k) {
    CHECK(s1.layers[k].disparity == s2.layers[k].disparity);
    CHECK(s1.layers[k].color == s2.layers[k].color);
    CHECK(s1.layers[k].alpha == s2.layers[k].alpha);
  }

  // exhaustive scan over the disparity cap and the kernel range, paper range
  DatagenConfig paper = DatagenConfig::paper();
  paper.height = 12;
  paper.width = 16;
  const DefocusConfig dc = paper.defocus();
  Rng rng(11);
  std::set<std::size_t> counts;
  for (int i = 0; i < 1000; ++i) {
    const LayeredScene s = generate_scene(RandomRecipe{}, paper, rng);
    CHECK_NOTHROW(s.validate());
    CHECK(s.max_disparity() < 100.0);
    counts.insert(s.layers.size());
    for (std::size_t k = 0; k < s.layers.size(); ++k) {
      if (k > 0) CHECK(s.layers[k].disparity >= s.layers[k - 1].disparity);
      const double b = dc.kernel_diameter(s.layers[k].disparity);
      CHECK(b >= 7.0 - 1e-9);
      CHECK(b <= 23.0 + 1e-9);
    }
  }
  CHECK(counts == std::set<std::size_t>{2, 3, 4, 5, 6});
}

TEST_CASE("staircase scene") {
  DatagenConfig cfg = DatagenConfig::desk();
  Rng rng(1);
  const LayeredScene s = generate_scene(StaircaseRecipe{4, 6, 0, 2, 8}, cfg, rng);
  REQUIRE(s.layers.size() == 4);
  const Image d = disparity_map(s);
  for (int y = 0; y < cfg.height; ++y) {
    const float expect = static_cast<float>(2 + 2 * (y / 24));
    for (int x = 0; x < cfg.width; ++x) CHECK(d.at(0, y, x) == expect);
  }
  // horizontal stripes: every texture row is constant
  for (const Layer& l : s.layers)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 1; x < cfg.width; ++x) CHECK(l.color.at(c, y, x) == l.color.at(c, y, 0));
  // and they do vary down the column
  std::set<float> column;
  for (int y = 0; y < cfg.height; ++y) column.insert(s.layers[0].color.at(0, y, 0));
  CHECK(column.size() >= 2);

  Rng r2(1);
  const LayeredScene tilted = generate_scene(StaircaseRecipe{4, 6, 30, 2, 8}, cfg, r2);
  CHECK(tilted.layers[0].color.at(0, 10, 0) != tilted.layers[0].color.at(0, 10, 5));
}

TEST_CASE("triplet rendering") {
  const LayeredScene s = integer_scene(5);
  Rng rng(2);
  const SampleTriplet clean = render_triplet(s, {3.0, 0.8, 0}, rng);
  CHECK(clean.left == render_view(s, 0));
  CHECK(clean.right == render_view(s, 1));
  CHECK(clean.left_defocus == render_defocus(s, {3.0, 0.8, 0}));
  CHECK(clean.disparity == disparity_map(s));
  CHECK(clean.meta.kappa == 0.8);

  // one layer at the focal plane
  const LayeredScene one = single_layer_scene(16, 16, 6, 8);
  const SampleTriplet focus = render_triplet(one, {6.0, 1.0, 0}, rng);
  CHECK(focus.left_defocus == focus.left);

  // noise is applied to each image independently, never to disparity
  Rng n1(4), n2(4);
  const SampleTriplet noisy = render_triplet(s, {3.0, 0.8, 1000}, n1);
  CHECK(noisy.disparity == clean.disparity);
  CHECK(noisy.left != clean.left);
  CHECK(noisy.left == render_triplet(s, {3.0, 0.8, 1000}, n2).left);
}

TEST_CASE("left/right consistency and ray-cast disparity") {
  const LayeredScene s = integer_scene(9);
  const Image left = render_view(s, 0), right = render_view(s, 1);
  const Image dl = disparity_map(s), dr = right_disparity_analytic(s);
  std::size_t checked = 0;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const int d = static_cast<int>(dl.at(0, y, x));
      const int xr = x - d;
      if (xr < 0 || dr.at(0, y, xr) != dl.at(0, y, x)) continue;  // occluded in the right view
      ++checked;
      for (int c = 0; c < 3; ++c) CHECK(std::abs(left.at(c, y, x) - right.at(c, y, xr)) <= 1e-4);
    }
  CHECK(checked > 2000);

  // disparity map is the front-most opaque layer along each ray
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      float expect = 2;
      if (y >= 4 && y < 30 && x >= 12 && x < 30) expect = 5;
      if (y >= 18 && y < 36 && x >= 26 && x < 44) expect = 9;
      CHECK(dl.at(0, y, x) == expect);
    }

  // forward warping recovers the analytic right-view map away from the right edge
  const Image warped = right_view_disparity(dl);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width - 9; ++x) CHECK(warped.at(0, y, x) == dr.at(0, y, x));
}

TEST_CASE("sample seeds") {
  std::set<std::uint64_t> train, test;
  for (std::size_t i = 0; i < 1000; ++i) {
    train.insert(sample_seed(7, Split::Train, i));
    test.insert(sample_seed(7, Split::Test, i));
  }
  CHECK(train.size() == 1000);
  CHECK(test.size() == 1000);
  for (auto v : test) CHECK(train.count(v) == 0);
  CHECK(sample_seed(7, Split::Train, 3) != sample_seed(8, Split::Train, 3));
}

TEST_CASE("dataset generation is independent of worker count") {
  const DatagenConfig cfg = small_config(5, 2);
  const Dataset a = generate_dataset(RandomRecipe{}, cfg, 21, 1);
  const Dataset b = generate_dataset(RandomRecipe{}, cfg, 21, 3);
  REQUIRE(a.entries.size() == 7);
  CHECK(a.split(Split::Train).size() == 5);
  CHECK(a.split(Split::Test).size() == 2);
  CHECK(a.entries[5].id == "test_0000");
  for (std::size_t n = 0; n < 7; ++n) {
    CHECK(a.entries[n].sample.left == b.entries[n].sample.left);
    CHECK(a.entries[n].sample.left_defocus == b.entries[n].sample.left_defocus);
    CHECK(a.entries[n].sample.disparity == b.entries[n].sample.disparity);
    CHECK(a.entries[n].sample.meta == b.entries[n].sample.meta);
  }
  CHECK(a.entries[0].sample.meta.scene_seed == sample_seed(21, Split::Train, 0));
  CHECK(a.entries[6].sample.meta.scene_seed == sample_seed(21, Split::Test, 1));
}

TEST_CASE("dataset round trip") {
  const DatagenConfig cfg = small_config(3, 2);
  const Dataset ds = generate_dataset(RandomRecipe{}, cfg, 4, 1);
  const fs::path dir = scratch("rt"), again = scratch("rt2");
  const fs::path manifest = write_dataset(ds, dir);
  CHECK(manifest == dir / "manifest.json");

  const Dataset loaded = load_dataset(dir);
  CHECK(loaded.config == cfg);
  CHECK(loaded.master_seed == 4);
  CHECK(loaded.recipe == "random");
  REQUIRE(loaded.entries.size() == ds.entries.size());
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(dir)) dirs += e.is_directory();
  CHECK(dirs == loaded.entries.size());
  for (std::size_t n = 0; n < ds.entries.size(); ++n) {
    const auto& src = ds.entries[n];
    const auto& got = loaded.entries[n];
    CHECK(got.id == src.id);
    CHECK(got.split == src.split);
    CHECK(got.sample.meta == src.sample.meta);
    CHECK(bit_equal_floats(got.sample.disparity.data, src.sample.disparity.data));
    SampleTriplet q = src.sample;
    quantize_images(q);
    CHECK(got.sample.left == q.left);
    CHECK(got.sample.right == q.right);
    CHECK(got.sample.left_defocus == q.left_defocus);
  }
  // save -> load -> save is byte-identical
  write_dataset(loaded, again);
  CHECK(tree(dir) == tree(again));
  fs::remove_all(again);

  // same flags twice -> same bytes
  write_dataset(generate_dataset(RandomRecipe{}, cfg, 4, 2), again);
  CHECK(tree(dir) == tree(again));
  fs::remove_all(again);
  fs::remove_all(dir);
}

TEST_CASE("dataset load errors") {
  const Dataset ds = generate_dataset(RandomRecipe{}, small_config(2, 1), 6, 1);
  auto fresh = [&](const std::string& name) {
    const fs::path d = scratch(name);
    write_dataset(ds, d);
    return d;
  };
  auto message = [](const fs::path& d) -> std::string {
    try {
      load_dataset(d);
    } catch (const DatasetError& e) {
      return e.what();
    }
    return "";
  };

  fs::path d = fresh("meta");
  {
    std::ofstream(d / "train_0001" / "meta.json") << "{ \"kappa\": ";
  }
  std::string m = message(d);
  CHECK(m.find("train_0001") != std::string::npos);
  CHECK(m.find("meta.json") != std::string::npos);
  fs::remove_all(d);

  d = fresh("missing");
  fs::remove(d / "test_0000" / "disp.pfm");
  m = message(d);
  CHECK(m.find("test_0000") != std::string::npos);
  CHECK(m.find("disp.pfm") != std::string::npos);
  fs::remove_all(d);

  d = fresh("extra");
  fs::create_directories(d / "train_0099");
  CHECK(message(d).find("manifest lists 3") != std::string::npos);
  fs::remove_all(d);

  d = fresh("dims");
  write_pfm(d / "train_0000" / "disp.pfm", Image(1, 5, 5));
  CHECK(message(d).find("dimensions") != std::string::npos);
  fs::remove_all(d);

  d = fresh("manifest");
  fs::remove(d / "manifest.json");
  CHECK(message(d).find("manifest.json") != std::string::npos);
  fs::remove_all(d);
}

TEST_CASE("patch extraction") {
  CHECK(window_origins(960, 512, 64) == std::vector<int>{0, 64, 128, 192, 256, 320, 384, 448});
  CHECK(window_origins(540, 256, 64) == std::vector<int>{0, 64, 128, 192, 256, 284});
  CHECK(window_origins(96, 64, 32) == std::vector<int>{0, 32});
  CHECK_THROWS_AS(window_origins(40, 64, 32), std::invalid_argument);
  CHECK_THROWS_AS(window_origins(64, 64, 0), std::invalid_argument);

  SampleTriplet big;
  Rng rng(1);
  big.left = noise_texture(3, 540, 960, rng);
  big.right = big.left;
  big.left_defocus = big.left;
  big.disparity = noise_texture(1, 540, 960, rng);
  const PatchSet ps = extract_patches(big, 256, 512, 64);
  CHECK(ps.patches.size() == 8 * 6);

  const DatagenConfig cfg = small_config(1, 0);
  const SampleTriplet s = generate_sample(RandomRecipe{}, cfg, 2, Split::Train, 0);
  CHECK(extract_patches(s, 32, 48, 16).patches.size() == 1);
  CHECK_THROWS_AS(extract_patches(s, 64, 48, 16), std::invalid_argument);
  const PatchSet small = extract_patches(s, 16, 16, 16);
  CHECK(small.patches.size() == 2 * 3);
  for (const Patch& p : small.patches)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        for (int c = 0; c < 3; ++c) {
          CHECK(p.left.at(c, y, x) == s.left.at(c, p.y0 + y, p.x0 + x));
          CHECK(p.right.at(c, y, x) == s.right.at(c, p.y0 + y, p.x0 + x));
          CHECK(p.left_defocus.at(c, y, x) == s.left_defocus.at(c, p.y0 + y, p.x0 + x));
        }
        CHECK(p.disparity.at(0, y, x) == s.disparity.at(0, p.y0 + y, p.x0 + x));
      }
  const Image st = small.patches[1].stacked();
  CHECK(st.channels == 9);
  CHECK(st.at(4, 3, 5) == small.patches[1].right.at(1, 3, 5));
  CHECK(st.at(8, 3, 5) == small.patches[1].left_defocus.at(2, 3, 5));
}

TEST_CASE("flips") {
  const DatagenConfig cfg = small_config(1, 0);
  const SampleTriplet s = generate_sample(RandomRecipe{}, cfg, 5, Split::Train, 0);
  const Patch p = extract_patches(s, 32, 48, 16).patches[0];

  auto same = [](const Patch& a, const Patch& b) {
    return a.left == b.left && a.right == b.right && a.left_defocus == b.left_defocus &&
           a.disparity == b.disparity;
  };
  CHECK(same(augment(p, Flip::None, true), p));
  CHECK(same(augment(augment(p, Flip::Horizontal, false), Flip::Horizontal, false), p));
  CHECK(same(augment(augment(p, Flip::Vertical, true), Flip::Vertical, true), p));

  const Patch v = augment(p, Flip::Vertical, true);
  std::multiset<float> before(p.disparity.data.begin(), p.disparity.data.end());
  std::multiset<float> after(v.disparity.data.begin(), v.disparity.data.end());
  CHECK(before == after);
  CHECK(v.disparity.at(0, 0, 7) == p.disparity.at(0, 31, 7));
  CHECK(v.right.at(2, 3, 7) == p.right.at(2, 28, 7));

  // hand-built two-layer strip: background d=1, foreground d=3 on columns 3 and 4
  Patch strip;
  strip.left = Image(3, 1, 8);
  strip.right = Image(3, 1, 8);
  strip.left_defocus = Image(3, 1, 8);
  strip.disparity = Image(1, 1, 8);
  const float d[8] = {1, 1, 1, 3, 3, 1, 1, 1};
  for (int x = 0; x < 8; ++x) {
    strip.disparity.at(0, 0, x) = d[x];
    strip.left.at(0, 0, x) = static_cast<float>(x);
    strip.right.at(0, 0, x) = static_cast<float>(10 + x);
  }
  const Patch f = augment(strip, Flip::Horizontal, true);
  // right view sees the foreground on columns 0 and 1; mirrored that is 6 and 7
  const float expect[8] = {1, 1, 1, 1, 1, 1, 3, 3};
  for (int x = 0; x < 8; ++x) {
    CHECK(f.disparity.at(0, 0, x) == expect[x]);
    CHECK(f.left.at(0, 0, x) == static_cast<float>(10 + 7 - x));
    CHECK(f.right.at(0, 0, x) == static_cast<float>(7 - x));
  }
  CHECK(augment(f, Flip::Horizontal, true).left == strip.left);

  // stereo hflip twice on a rendered scene restores the target away from the edges
  const LayeredScene sc = integer_scene(3);
  Patch r{render_view(sc, 0), render_view(sc, 1), render_view(sc, 0), disparity_map(sc), 0, 0};
  const Patch rr = augment(augment(r, Flip::Horizontal, true), Flip::Horizontal, true);
  CHECK(rr.left == r.left);
  CHECK(rr.right == r.right);
  CHECK(rr.disparity == r.disparity);
  CHECK(parse_flip("vflip") == Flip::Vertical);
  CHECK_THROWS_AS(parse_flip("rot90"), std::invalid_argument);
}
