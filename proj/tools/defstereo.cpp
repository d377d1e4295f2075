#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "defstereo/checkpoint.hpp"
#include "defstereo/datagen.hpp"
#include "defstereo/eval.hpp"
#include "defstereo/optics.hpp"
#include "defstereo/train.hpp"

using namespace defstereo;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shared by every subcommand.
struct Common {
  std::uint64_t seed = 0;
  std::string config_file;
  std::vector<std::string> overrides;
  unsigned threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Master seed")->capture_default_str();
  cmd->add_option("--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Config override KEY=VALUE (repeatable)");
  cmd->add_option("--threads", c.threads, "Worker threads (default DEFSTEREO_THREADS or all cores)");
}

KeyValueConfig load_config(const Common& c) {
  KeyValueConfig kv = c.config_file.empty() ? KeyValueConfig::parse("", "command line") : KeyValueConfig::load(c.config_file);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects KEY=VALUE, got '" + o + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    kv.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  kv.require_known(known_config_keys());
  return kv;
}

SceneRecipe make_recipe(const std::string& name) {
  if (name == "random") return RandomRecipe{};
  if (name == "staircase") return StaircaseRecipe{};
  throw UsageError("unknown recipe '" + name + "'");
}

void write_image(const fs::path& path, const Image& img) {
  const std::string ext = path.extension().string();
  if (ext == ".pfm") write_pfm(path, img);
  else if (ext == ".png") write_png(path, img);
  else throw UsageError("output must end in .png or .pfm: " + path.string());
}

Image read_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing input file " + path.string());
  return path.extension() == ".pfm" ? read_pfm(path) : read_png(path);
}

bool has_model_keys(const KeyValueConfig& kv) {
  for (const char* k : {"preset", "model", "variant", "fusion_head", "base_channels", "hg_depth",
                        "num_stacks", "input_channels", "siamese_c1", "siamese_c2"})
    if (kv.has(k)) return true;
  return false;
}

// The checkpoint's own architecture unless the caller pinned one.
std::unique_ptr<DepthModel<float>> model_for_checkpoint(const Checkpoint& ck, const KeyValueConfig& kv) {
  const ModelConfig cfg = has_model_keys(kv) ? ModelConfig::from_config(kv) : checkpoint_model_config(ck);
  auto model = build_model<float>(cfg, 0);
  restore_checkpoint(ck, *model);
  return model;
}

void set_model_flags(KeyValueConfig& kv, const std::string& model, const std::string& variant) {
  if (!model.empty()) kv.set("model", model);
  if (!variant.empty()) kv.set("variant", variant);
}

std::vector<const SampleTriplet*> split_samples(const Dataset& ds, Split split) {
  std::vector<const SampleTriplet*> out;
  for (const DatasetEntry* e : ds.split(split)) out.push_back(&e->sample);
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("defstereo"));
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"Depth from defocus and stereo: data generation, optics, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "defstereo 0.1");

  Common common;
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  std::string gen_recipe = "random", gen_out;
  std::optional<int> gen_count, gen_test_count;
  gen->add_option("--recipe", gen_recipe, "random or staircase")
      ->check(CLI::IsMember({"random", "staircase"}))->capture_default_str();
  gen->add_option("--count", gen_count, "Training samples (default from config)");
  gen->add_option("--test-count", gen_test_count, "Test samples (default from config)");
  gen->add_option("--out", gen_out, "Output directory")->required();
  add_common(gen, common);

  // defocus
  auto* defocus = app.add_subcommand("defocus", "Render a defocused image from an all-focus image and a disparity map");
  std::string df_image, df_disp, df_out;
  double df_focal = 0, df_kappa = 1, df_noise = 0, df_step = 1;
  defocus->add_option("--image", df_image, "All-focus RGB image (.png or .pfm)")->required();
  defocus->add_option("--disp", df_disp, "Disparity map (.pfm)")->required();
  defocus->add_option("--focal", df_focal, "In-focus disparity d_f, px")->required();
  defocus->add_option("--kappa", df_kappa, "Blur diameter per px of |d - d_f|")->capture_default_str();
  defocus->add_option("--noise-peak", df_noise, "Poisson photons at intensity 1 (0 = none)")->capture_default_str();
  defocus->add_option("--step", df_step, "Disparity quantization of the layers, px")->capture_default_str();
  defocus->add_option("--out", df_out, "Output image (.png or .pfm)")->required();
  add_common(defocus, common);

  // lf-synth
  auto* lfs = app.add_subcommand("lf-synth", "Synthesize a light field of a generated scene");
  std::string lfs_recipe = "random", lfs_out;
  int lfs_size = 5;
  std::optional<double> lfs_u;
  lfs->add_option("--recipe", lfs_recipe, "random or staircase")
      ->check(CLI::IsMember({"random", "staircase"}))->capture_default_str();
  lfs->add_option("--size", lfs_size, "Angular resolution A (odd)")->capture_default_str();
  lfs->add_option("--u", lfs_u, "Per-view offset scale (default 1/((A-1)/2))");
  lfs->add_option("--out", lfs_out, "Output directory")->required();
  add_common(lfs, common);

  // lf-refocus
  auto* lfr = app.add_subcommand("lf-refocus", "Shift-and-add refocusing of a stored light field");
  std::string lfr_dir, lfr_out;
  std::optional<double> lfr_slope, lfr_alpha;
  bool lfr_circular = false;
  lfr->add_option("--lf", lfr_dir, "Light field directory")->required();
  auto* slope_opt = lfr->add_option("--slope", lfr_slope, "Refocus slope sigma");
  auto* alpha_opt = lfr->add_option("--alpha", lfr_alpha, "Refocus alpha (sigma = 1 - 1/alpha)");
  slope_opt->excludes(alpha_opt);
  lfr->add_flag("--circular", lfr_circular, "Use only views inside the circular aperture");
  lfr->add_option("--out", lfr_out, "Output image (.png or .pfm)")->required();
  add_common(lfr, common);

  // train
  auto* tr = app.add_subcommand("train", "Train a network on a generated dataset");
  std::string tr_data, tr_out, tr_model, tr_variant;
  std::optional<long long> tr_steps, tr_ckpt_every, tr_eval_every;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--out", tr_out, "Run directory (model.ckpt, loss.csv)")->required();
  tr->add_option("--model", tr_model, "dfd, stereo or fusion");
  tr->add_option("--variant", tr_variant, "Fusion interconnection: full, none, less or identity");
  tr->add_option("--steps", tr_steps, "Training steps (max_steps)");
  tr->add_option("--checkpoint-every", tr_ckpt_every, "Extra checkpoints every N steps");
  tr->add_option("--eval-every", tr_eval_every, "Test-split MAE every N steps into eval.csv");
  add_common(tr, common);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string ev_data, ev_ckpt, ev_split = "test", ev_json, ev_table, ev_name, ev_model, ev_variant;
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--split", ev_split, "test or train")->check(CLI::IsMember({"test", "train"}))->capture_default_str();
  ev->add_option("--json", ev_json, "Write the metric report as JSON");
  ev->add_option("--table", ev_table, "Write the metric table as text");
  ev->add_option("--name", ev_name, "Row label (default: checkpoint file stem)");
  ev->add_option("--model", ev_model, "Expected model kind; checked against the checkpoint");
  ev->add_option("--variant", ev_variant, "Expected fusion variant");
  add_common(ev, common);

  // predict
  auto* pr = app.add_subcommand("predict", "Predict the disparity of one sample");
  std::string pr_ckpt, pr_sample, pr_out, pr_model, pr_variant;
  pr->add_option("--checkpoint", pr_ckpt, "Checkpoint file")->required();
  pr->add_option("--sample", pr_sample, "Sample directory (left.png, right.png, defocus.png)")->required();
  pr->add_option("--out", pr_out, "Output disparity (.pfm)")->required();
  pr->add_option("--model", pr_model, "Expected model kind; checked against the checkpoint");
  pr->add_option("--variant", pr_variant, "Expected fusion variant");
  add_common(pr, common);

  // export-vis
  auto* vis = app.add_subcommand("export-vis", "Color-map a disparity map to PNG");
  std::string vis_in, vis_out;
  double vis_min = 0, vis_max = 0;
  vis->add_option("--in", vis_in, "Disparity map (.pfm)")->required();
  vis->add_option("--out", vis_out, "Output PNG")->required();
  vis->add_option("--min", vis_min, "Disparity mapped to the low end")->required();
  vis->add_option("--max", vis_max, "Disparity mapped to the high end")->required();
  add_common(vis, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    KeyValueConfig kv = load_config(common);
    const unsigned threads = common.threads ? common.threads : default_threads();
    set_compute_threads(threads);

    if (gen->parsed()) {
      DatagenConfig cfg = DatagenConfig::from_config(kv);
      if (gen_count) cfg.train_count = *gen_count;
      if (gen_test_count) cfg.test_count = *gen_test_count;
      cfg.validate();
      spdlog::info("generating {} train + {} test samples ({}x{}, recipe {})", cfg.train_count,
                   cfg.test_count, cfg.width, cfg.height, gen_recipe);
      const Dataset ds = generate_dataset(make_recipe(gen_recipe), cfg, common.seed, threads);
      std::cout << write_dataset(ds, gen_out).string() << "\n";

    } else if (defocus->parsed()) {
      const Image color = read_image(df_image);
      const Image disp = read_pfm(df_disp);
      const LayeredScene scene = scene_from_disparity(color, disp, df_step);
      DefocusConfig dc{df_focal, df_kappa, 0.0};
      Image out = render_defocus(scene, dc);
      if (df_noise > 0) {
        Rng rng = make_rng(common.seed, "noise");
        out = add_poisson_noise(out, df_noise, rng);
      }
      write_image(df_out, out);
      spdlog::info("{} layers, kernel diameters {:.2f}..{:.2f} px", scene.layers.size(),
                   dc.kernel_diameter(scene.layers.front().disparity),
                   dc.kernel_diameter(scene.layers.back().disparity));

    } else if (lfs->parsed()) {
      const DatagenConfig cfg = DatagenConfig::from_config(kv);
      Rng rng = make_rng(common.seed, "scene");
      const LayeredScene scene = generate_scene(make_recipe(lfs_recipe), cfg, rng);
      const LightField lf = synth_lightfield(scene, lfs_size, lfs_u);
      save_lightfield(lfs_out, lf);
      write_png(fs::path(lfs_out) / "center.png", lf.view(0, 0));
      write_pfm(fs::path(lfs_out) / "disp.pfm", disparity_map(scene));
      std::cout << lfs_out << "\n";

    } else if (lfr->parsed()) {
      if (!lfr_slope && !lfr_alpha) throw UsageError("lf-refocus needs --slope or --alpha");
      RefocusParams p = lfr_alpha ? RefocusParams::from_alpha(*lfr_alpha) : RefocusParams{*lfr_slope};
      p.circular_aperture = lfr_circular;
      const LightField lf = load_lightfield(lfr_dir);
      write_image(lfr_out, refocus(lf, p));
      spdlog::info("refocused at sigma = {}", p.slope);

    } else if (tr->parsed()) {
      set_model_flags(kv, tr_model, tr_variant);
      if (!kv.has("seed")) kv.set("seed", std::to_string(common.seed));
      TrainConfig tc = TrainConfig::from_config(kv);
      if (tr_steps) tc.max_steps = *tr_steps;
      if (tr_ckpt_every) tc.checkpoint_every = *tr_ckpt_every;
      if (tr_eval_every) tc.eval_every = *tr_eval_every;
      const ModelConfig mc = ModelConfig::from_config(kv);
      const Dataset ds = load_dataset(tr_data);
      const auto train_set = split_samples(ds, Split::Train);
      const auto test_set = split_samples(ds, Split::Test);

      auto model = build_model<float>(mc, derive_seed(tc.seed, fnv1a("init")));
      auto adam = AdamState<float>::init(model->params());
      const fs::path out(tr_out);
      fs::create_directories(out);
      write_file(out / "config.txt", mc.echo() + tc.echo());
      std::ofstream loss(out / "loss.csv", std::ios::binary);
      write_loss_header(loss);
      std::ofstream evcsv;
      if (tc.eval_every > 0) {
        if (test_set.empty()) throw UsageError("--eval-every needs a test split");
        evcsv.open(out / "eval.csv", std::ios::binary);
        evcsv << "step,mae_px,pct_gt_1px\n";
      }
      spdlog::info("training {} ({} parameters) on {} samples for {} steps", to_string(mc.kind),
                   count_parameters(*model), train_set.size(), tc.max_steps);
      TrainHooks hooks;
      hooks.on_step = [&](const LossRow& r) {
        write_loss_row(loss, r);
        if ((r.step + 1) % 100 == 0) spdlog::info("step {} loss {:.4f} mae {:.4f}", r.step + 1, r.total, r.final_mae);
      };
      hooks.on_checkpoint = [&](long long step) {
        char name[32];
        std::snprintf(name, sizeof name, "step_%06lld.ckpt", step);
        make_checkpoint(*model, &adam, step, &tc).save(out / name);
      };
      hooks.on_eval = [&](long long step) {
        const MetricReport r = evaluate(*model, test_set);
        char line[96];
        std::snprintf(line, sizeof line, "%lld,%.9g,%.9g\n", step, r.mae_px, r.pct_gt_1px);
        evcsv << line << std::flush;
        spdlog::info("step {} test MAE {:.4f}", step, r.mae_px);
      };
      const TrainResult res = train(*model, train_set, tc, adam, hooks);
      make_checkpoint(*model, &adam, res.steps, &tc).save(out / "model.ckpt");
      if (!loss) throw IoError("cannot write " + (out / "loss.csv").string());
      std::cout << (out / "model.ckpt").string() << "\n";

    } else if (ev->parsed()) {
      set_model_flags(kv, ev_model, ev_variant);
      const Checkpoint ck = Checkpoint::load(ev_ckpt);
      auto model = model_for_checkpoint(ck, kv);
      const Dataset ds = load_dataset(ev_data);
      const auto samples = split_samples(ds, ev_split == "test" ? Split::Test : Split::Train);
      if (samples.empty()) throw IoError(ev_data + ": the " + ev_split + " split is empty");
      const MetricReport r = evaluate(*model, samples);
      const std::string name = ev_name.empty() ? fs::path(ev_ckpt).stem().string() : ev_name;
      const std::string table = metric_table({{name, r}});
      std::cout << table;
      if (!ev_json.empty()) write_file(ev_json, r.to_json().dump(2) + "\n");
      if (!ev_table.empty()) write_file(ev_table, table);

    } else if (pr->parsed()) {
      set_model_flags(kv, pr_model, pr_variant);
      const Checkpoint ck = Checkpoint::load(pr_ckpt);
      auto model = model_for_checkpoint(ck, kv);
      const fs::path sd(pr_sample);
      SampleTriplet s;
      s.left = read_image(sd / "left.png");
      s.right = read_image(sd / "right.png");
      s.left_defocus = read_image(sd / "defocus.png");
      if (!s.left.same_shape(s.right) || !s.left.same_shape(s.left_defocus) || s.left.channels != 3)
        throw IoError(pr_sample + ": image dimensions do not match");
      const Image pred = predict(*model, s);
      write_pfm(pr_out, pred);
      if (fs::exists(sd / "disp.pfm")) {
        MetricAccumulator acc;
        acc.add(pred, read_pfm(sd / "disp.pfm"));
        std::printf("mae_px %.6f\n", acc.report().mae_px);
      }

    } else if (vis->parsed()) {
      if (!(vis_max > vis_min)) throw UsageError("--max must exceed --min");
      write_png(vis_out, colorize_turbo(read_pfm(vis_in), vis_min, vis_max));
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointMismatch& e) {
    std::cerr << "error: " << e.what() << "\n--- expected (from flags/config) ---\n"
              << e.expected_echo << "--- found in checkpoint ---\n"
              << e.found_echo;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
