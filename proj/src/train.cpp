#include "defstereo/train.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "defstereo/ops.hpp"

namespace defstereo {

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  TrainConfig c;
  c.lr = kv.get_double("lr", c.lr);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.eps = kv.get_double("eps", c.eps);
  c.l2_lambda = kv.get_double("l2_lambda", c.l2_lambda);
  c.intermediate_loss_weight = kv.get_double("intermediate_loss_weight", c.intermediate_loss_weight);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.max_steps = kv.get_int("max_steps", c.max_steps);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.patch_h = static_cast<int>(kv.get_int("patch_h", c.patch_h));
  c.patch_w = static_cast<int>(kv.get_int("patch_w", c.patch_w));
  c.patch_stride = static_cast<int>(kv.get_int("patch_stride", c.patch_stride));
  c.augment = kv.get_int("augment", c.augment ? 1 : 0) != 0;
  c.checkpoint_every = kv.get_int("checkpoint_every", c.checkpoint_every);
  c.eval_every = kv.get_int("eval_every", c.eval_every);
  if (c.lr <= 0 || c.batch_size <= 0 || c.max_steps < 0 || c.l2_lambda < 0 || c.patch_h <= 0 ||
      c.patch_w <= 0 || c.patch_stride <= 0 || !(c.beta1 >= 0 && c.beta1 < 1) ||
      !(c.beta2 >= 0 && c.beta2 < 1) || c.eps <= 0) {
    throw ConfigError("train config: value out of range");
  }
  return c;
}

std::string TrainConfig::echo() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "lr = " << lr << "\nbeta1 = " << beta1 << "\nbeta2 = " << beta2 << "\neps = " << eps
     << "\nl2_lambda = " << l2_lambda << "\nintermediate_loss_weight = " << intermediate_loss_weight
     << "\nbatch_size = " << batch_size << "\nmax_steps = " << max_steps << "\nseed = " << seed
     << "\npatch_h = " << patch_h << "\npatch_w = " << patch_w
     << "\npatch_stride = " << patch_stride << "\naugment = " << (augment ? 1 : 0)
     << "\ncheckpoint_every = " << checkpoint_every << "\neval_every = " << eval_every << "\n";
  return os.str();
}

const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      // model
      "preset", "model", "variant", "fusion_head", "base_channels", "hg_depth", "num_stacks",
      "input_channels", "siamese_c1", "siamese_c2",
      // datagen
      "height", "width", "disparity_min", "disparity_max", "kernel_min", "kernel_max",
      "noise_peak", "focal_jitter", "min_layers", "max_layers", "stripe_prob",
      "horizontal_stripe_prob", "train_count", "test_count",
      // train
      "lr", "beta1", "beta2", "eps", "l2_lambda", "intermediate_loss_weight", "batch_size",
      "max_steps", "seed", "patch_h", "patch_w", "patch_stride", "augment", "checkpoint_every",
      "eval_every"};
  return keys;
}

template <typename T>
BasicTensor<T> intermediate_target(const BasicTensor<T>& target) {
  BasicTensor<T> q = area_downsample(target, 4);
  for (auto& v : q.data()) v /= T(4);
  return q;
}

template <typename T>
LossTerms<T> total_loss(BasicGraph<T>& g, const NetworkOutput<T>& out, const BasicTensor<T>& target,
                        const ParamStore<T>& params, const TrainConfig& cfg) {
  if (out.final_disparity.dims() != target.dims()) {
    throw ShapeError("total_loss: prediction " + dims_to_string(out.final_disparity.dims()) +
                     " vs target " + dims_to_string(target.dims()));
  }
  LossTerms<T> terms;
  BasicTensor<T> total = mae_loss(g, out.final_disparity, target);
  terms.final_mae = static_cast<double>(total.item());
  if (!out.intermediate.empty()) {
    const BasicTensor<T> quarter = intermediate_target(target);
    for (const auto& inter : out.intermediate) {
      if (inter.dims() != quarter.dims()) {
        throw ShapeError("total_loss: intermediate " + dims_to_string(inter.dims()) +
                         " vs quarter target " + dims_to_string(quarter.dims()));
      }
      BasicTensor<T> term = mae_loss(g, inter, quarter);
      terms.intermediate_mae.push_back(static_cast<double>(term.item()));
      total = add(g, total, scale(g, term, static_cast<T>(cfg.intermediate_loss_weight)));
    }
  }
  BasicTensor<T> l2 = l2_penalty(g, params, static_cast<T>(cfg.l2_lambda));
  terms.l2 = static_cast<double>(l2.item());
  terms.total = add(g, total, l2);
  return terms;
}

template <typename T>
AdamState<T> AdamState<T>::init(const ParamStore<T>& params) {
  AdamState s;
  for (const auto& [name, entry] : params.params()) {
    s.m.emplace(name, BasicTensor<T>(entry.tensor.dims()));
    s.v.emplace(name, BasicTensor<T>(entry.tensor.dims()));
  }
  return s;
}

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, const TrainConfig& cfg) {
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (const auto& [name, entry] : params.params()) {
    BasicTensor<T> w = entry.tensor;
    if (!w.requires_grad()) continue;
    auto mit = state.m.find(name);
    auto vit = state.v.find(name);
    if (mit == state.m.end() || vit == state.v.end()) {
      throw std::logic_error("adam_step: no optimizer state for " + name);
    }
    auto m = mit->second.data();
    auto v = vit->second.data();
    auto wd = w.data();
    auto gd = std::as_const(w).grad();
    if (gd.size() != wd.size()) continue;
    for (std::size_t k = 0; k < wd.size(); ++k) {
      const T g = gd[k];
      m[k] = b1 * m[k] + (T(1) - b1) * g;
      v[k] = b2 * v[k] + (T(1) - b2) * g * g;
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      wd[k] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

void write_loss_header(std::ostream& out) { out << "step,total,final_mae,l2\n"; }

void write_loss_row(std::ostream& out, const LossRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g\n", r.step, r.total, r.final_mae, r.l2);
  out << buf;
}

Batch make_batch(const std::vector<Patch>& patches) {
  if (patches.empty()) throw std::invalid_argument("make_batch: empty batch");
  const int n = static_cast<int>(patches.size());
  const int h = patches[0].left.height, w = patches[0].left.width;
  Batch b{{Tensor({n, 3, h, w}), Tensor({n, 3, h, w}), Tensor({n, 3, h, w})}, Tensor({n, 1, h, w})};
  const std::size_t img = static_cast<std::size_t>(3) * h * w, px = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const Patch& p = patches[static_cast<std::size_t>(i)];
    if (p.left.height != h || p.left.width != w) throw ShapeError("make_batch: ragged patches");
    std::copy(p.left.data.begin(), p.left.data.end(), b.inputs.left.data().begin() + i * img);
    std::copy(p.right.data.begin(), p.right.data.end(), b.inputs.right.data().begin() + i * img);
    std::copy(p.left_defocus.data.begin(), p.left_defocus.data.end(),
              b.inputs.left_defocus.data().begin() + i * img);
    std::copy(p.disparity.data.begin(), p.disparity.data.end(), b.target.data().begin() + i * px);
  }
  return b;
}

std::vector<Flip> allowed_flips(ModelKind kind) {
  if (kind == ModelKind::Fusion) return {Flip::None, Flip::Vertical};
  return {Flip::None, Flip::Horizontal, Flip::Vertical};
}

BatchSampler::BatchSampler(std::vector<Patch> pool, const TrainConfig& cfg, ModelKind kind)
    : pool_(std::move(pool)),
      cfg_(cfg),
      flips_(cfg.augment ? allowed_flips(kind) : std::vector<Flip>{Flip::None}),
      stereo_roles_(kind == ModelKind::Stereo),
      order_rng_(make_rng(cfg.seed, "shuffle")),
      flip_rng_(make_rng(cfg.seed, "augment")) {
  if (pool_.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw std::invalid_argument("training set has " + std::to_string(pool_.size()) +
                                " patches, fewer than one batch of " +
                                std::to_string(cfg.batch_size));
  }
}

std::vector<Patch> BatchSampler::next() {
  const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
  if (order_.empty() || cursor_ + bs > order_.size()) {
    order_.resize(pool_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), order_rng_);
    cursor_ = 0;
  }
  std::vector<Patch> out;
  std::uniform_int_distribution<std::size_t> pick(0, flips_.size() - 1);
  for (std::size_t k = 0; k < bs; ++k)
    out.push_back(augment(pool_[order_[cursor_ + k]], flips_[pick(flip_rng_)], stereo_roles_));
  cursor_ += bs;
  return out;
}

std::vector<Patch> patch_pool(const std::vector<const SampleTriplet*>& samples,
                              const TrainConfig& cfg) {
  std::vector<Patch> pool;
  for (const SampleTriplet* s : samples) {
    const int ph = std::min(cfg.patch_h, s->left.height), pw = std::min(cfg.patch_w, s->left.width);
    for (auto& p : extract_patches(*s, ph, pw, cfg.patch_stride).patches) pool.push_back(std::move(p));
  }
  return pool;
}

TrainResult train(DepthModel<float>& model, const std::vector<const SampleTriplet*>& samples,
                  const TrainConfig& cfg, AdamState<float>& adam, const TrainHooks& hooks) {
  if (samples.empty()) throw std::invalid_argument("train: empty dataset");
  const HGConfig& hg = model.config().hg;
  hg.check_input(std::min(cfg.patch_h, samples[0]->left.height),
                 std::min(cfg.patch_w, samples[0]->left.width));
  BatchSampler sampler(patch_pool(samples, cfg), cfg, model.config().kind);
  TrainResult result;
  for (long long step = 0; step < cfg.max_steps; ++step) {
    const Batch batch = make_batch(sampler.next());
    model.params().zero_grad();
    Graph g;
    const NetworkOutput<float> out = model.forward(g, batch.inputs, ForwardMode::Train);
    LossTerms<float> terms = total_loss(g, out, batch.target, model.params(), cfg);
    const double total = terms.total.item();
    if (!std::isfinite(total)) {
      throw NonFiniteError("training loss became non-finite at step " + std::to_string(step) +
                           " (final MAE " + std::to_string(terms.final_mae) + ", l2 " +
                           std::to_string(terms.l2) + ")");
    }
    g.backward(terms.total);
    adam_step(model.params(), adam, cfg);
    const LossRow row{step, total, terms.final_mae, terms.l2};
    result.curve.push_back(row);
    result.steps = step + 1;
    if (hooks.on_step) hooks.on_step(row);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && hooks.on_checkpoint)
      hooks.on_checkpoint(step + 1);
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && hooks.on_eval)
      hooks.on_eval(step + 1);
    if (hooks.should_stop && hooks.should_stop(step + 1)) break;
  }
  model.params().zero_grad();
  return result;
}

void set_compute_threads(unsigned n) {
  if (n == 0) n = default_threads();
  openblas_set_num_threads(static_cast<int>(n));
}

template LossTerms<float> total_loss(Graph&, const NetworkOutput<float>&, const Tensor&,
                                     const ParamStore<float>&, const TrainConfig&);
template LossTerms<double> total_loss(Graph64&, const NetworkOutput<double>&, const Tensor64&,
                                      const ParamStore<double>&, const TrainConfig&);
template Tensor intermediate_target(const Tensor&);
template Tensor64 intermediate_target(const Tensor64&);
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParamStore<float>&, AdamState<float>&, const TrainConfig&);
template void adam_step(ParamStore<double>&, AdamState<double>&, const TrainConfig&);

}  // namespace defstereo
