#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "defstereo/config.hpp"
#include "defstereo/datagen.hpp"
#include "defstereo/model.hpp"

namespace defstereo {

struct TrainConfig {
  double lr = 0.001;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double l2_lambda = 0.002;
  double intermediate_loss_weight = 1.0;
  int batch_size = 4;
  long long max_steps = 2000;
  std::uint64_t seed = 0;
  int patch_h = 64, patch_w = 64, patch_stride = 32;
  bool augment = true;
  long long checkpoint_every = 0;  // 0 = only at the end
  long long eval_every = 0;        // 0 = no periodic eval

  static TrainConfig from_config(const KeyValueConfig& cfg);
  std::string echo() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Config keys understood by ModelConfig, DatagenConfig and TrainConfig together.
const std::set<std::string>& known_config_keys();

template <typename T>
struct LossTerms {
  BasicTensor<T> total;
  double final_mae = 0;
  std::vector<double> intermediate_mae;
  double l2 = 0;
};

/// MAE(final, target) + w * sum_i MAE(inter_i, area_downsample(target, 4) / 4)
/// + l2_penalty(params, lambda).
template <typename T>
LossTerms<T> total_loss(BasicGraph<T>& g, const NetworkOutput<T>& out, const BasicTensor<T>& target,
                        const ParamStore<T>& params, const TrainConfig& cfg);

/// Quarter-resolution target for intermediate supervision.
template <typename T>
BasicTensor<T> intermediate_target(const BasicTensor<T>& target);

template <typename T>
struct AdamState {
  std::map<std::string, BasicTensor<T>> m, v;
  long long t = 0;

  static AdamState init(const ParamStore<T>& params);
};

/// Bias-corrected Adam on every parameter that has a gradient; constant lr.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, const TrainConfig& cfg);

struct LossRow {
  long long step = 0;
  double total = 0, final_mae = 0, l2 = 0;
};

void write_loss_header(std::ostream& out);
void write_loss_row(std::ostream& out, const LossRow& row);

/// Inputs the model reads, built from patches (batch dimension first).
struct Batch {
  ModelInputs<float> inputs;
  Tensor target;
};

Batch make_batch(const std::vector<Patch>& patches);

/// Flip modes allowed per model: DfD may mirror horizontally without a role swap,
/// stereo hflips with the left/right swap, fusion only flips vertically.
std::vector<Flip> allowed_flips(ModelKind kind);

/// Seeded epoch shuffles over the patch pool; the last partial batch is dropped.
class BatchSampler {
 public:
  BatchSampler(std::vector<Patch> pool, const TrainConfig& cfg, ModelKind kind);
  std::vector<Patch> next();
  std::size_t pool_size() const { return pool_.size(); }

 private:
  std::vector<Patch> pool_;
  TrainConfig cfg_;
  std::vector<Flip> flips_;
  bool stereo_roles_;
  Rng order_rng_, flip_rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Every patch of every sample, in sample order.
std::vector<Patch> patch_pool(const std::vector<const SampleTriplet*>& samples, const TrainConfig& cfg);

struct TrainHooks {
  std::function<void(const LossRow&)> on_step;
  std::function<void(long long step)> on_checkpoint;  // every checkpoint_every steps
  std::function<void(long long step)> on_eval;        // every eval_every steps
  /// Return true to stop before max_steps.
  std::function<bool(long long step)> should_stop;
};

struct TrainResult {
  std::vector<LossRow> curve;
  long long steps = 0;
};

/// Runs up to cfg.max_steps Adam steps from the model's current parameters and
/// `adam` state. Throws NonFiniteError (naming the step) on a non-finite loss,
/// std::invalid_argument on an empty training set.
TrainResult train(DepthModel<float>& model, const std::vector<const SampleTriplet*>& samples,
                  const TrainConfig& cfg, AdamState<float>& adam, const TrainHooks& hooks = {});

/// OpenBLAS worker count; DEFSTEREO_THREADS via default_threads() when 0.
void set_compute_threads(unsigned n);

}  // namespace defstereo
