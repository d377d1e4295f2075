#pragma once

#include <map>
#include <memory>
#include <string>

#include "defstereo/config.hpp"
#include "defstereo/fusion.hpp"
#include "defstereo/hourglass.hpp"

namespace defstereo {

enum class ModelKind { Dfd, Stereo, Fusion };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

struct ModelConfig {
  ModelKind kind = ModelKind::Dfd;
  HGConfig hg = HGConfig::desk();
  FusionVariant variant = FusionVariant::Full;
  FusionHead head = FusionHead::Shared;

  /// Reads `model`, `variant`, `preset` and the HGConfig keys; missing keys
  /// keep the preset values.
  static ModelConfig from_config(const KeyValueConfig& cfg);
  /// Canonical architecture description, one `key = value` per line.
  std::string echo() const;

  bool operator==(const ModelConfig&) const = default;
};

/// A network plus the store owning its parameters.
template <typename T>
class DepthModel {
 public:
  explicit DepthModel(ModelConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~DepthModel() = default;
  DepthModel(const DepthModel&) = delete;
  DepthModel& operator=(const DepthModel&) = delete;

  virtual NetworkOutput<T> forward(BasicGraph<T>& g, const ModelInputs<T>& in,
                                   ForwardMode mode) const = 0;

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

 protected:
  ModelConfig cfg_;
  ParamStore<T> params_;
};

template <typename T>
class HourglassModel final : public DepthModel<T> {
 public:
  HourglassModel(const ModelConfig& cfg, std::uint64_t seed);
  NetworkOutput<T> forward(BasicGraph<T>& g, const ModelInputs<T>& in,
                           ForwardMode mode) const override {
    return net_.forward(g, in, mode);
  }
  const HourglassNet<T>& net() const { return net_; }

 private:
  HourglassNet<T> net_;
};

template <typename T>
class FusionModel final : public DepthModel<T> {
 public:
  FusionModel(const ModelConfig& cfg, std::uint64_t seed);
  NetworkOutput<T> forward(BasicGraph<T>& g, const ModelInputs<T>& in,
                           ForwardMode mode) const override {
    return net_.forward(g, in, mode);
  }
  const FusionNet<T>& net() const { return net_; }
  FusionNet<T>& net() { return net_; }

 private:
  FusionNet<T> net_;
};

template <typename T>
std::unique_ptr<DepthModel<T>> build_model(const ModelConfig& cfg, std::uint64_t seed);

template <typename T = float>
std::unique_ptr<DepthModel<T>> build_dfd_net(const HGConfig& hg, std::uint64_t seed) {
  return build_model<T>(ModelConfig{ModelKind::Dfd, hg}, seed);
}

template <typename T = float>
std::unique_ptr<DepthModel<T>> build_stereo_net(const HGConfig& hg, std::uint64_t seed) {
  return build_model<T>(ModelConfig{ModelKind::Stereo, hg}, seed);
}

template <typename T = float>
std::unique_ptr<DepthModel<T>> build_fusion_net(const HGConfig& hg, FusionVariant variant,
                                                std::uint64_t seed) {
  return build_model<T>(ModelConfig{ModelKind::Fusion, hg, variant}, seed);
}

template <typename T>
std::size_t count_parameters(const DepthModel<T>& model) {
  return model.params().count();
}

/// Parameter counts keyed by the first two path segments (e.g. "dfd.stack0").
template <typename T>
std::map<std::string, std::size_t> parameter_breakdown(const DepthModel<T>& model) {
  return model.params().count_by_prefix(2);
}

}  // namespace defstereo
