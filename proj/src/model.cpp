#include "defstereo/model.hpp"

#include <sstream>
#include <stdexcept>

namespace defstereo {

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Dfd: return "dfd";
    case ModelKind::Stereo: return "stereo";
    case ModelKind::Fusion: return "fusion";
  }
  return "dfd";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "dfd") return ModelKind::Dfd;
  if (s == "stereo") return ModelKind::Stereo;
  if (s == "fusion") return ModelKind::Fusion;
  throw std::invalid_argument("unknown model '" + s + "' (expected dfd, stereo or fusion)");
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& cfg) {
  ModelConfig m;
  const std::string preset = cfg.get_string("preset", "desk");
  if (preset == "paper") {
    m.hg = HGConfig::paper();
  } else if (preset == "micro") {
    m.hg = HGConfig::micro();
  } else if (preset != "desk") {
    throw ConfigError("unknown preset '" + preset + "' (expected desk, paper or micro)");
  }
  m.kind = parse_model_kind(cfg.get_string("model", to_string(m.kind)));
  m.variant = parse_fusion_variant(cfg.get_string("variant", to_string(m.variant)));
  const std::string head = cfg.get_string("fusion_head", "shared");
  if (head != "shared" && head != "average") {
    throw ConfigError("unknown fusion_head '" + head + "' (expected shared or average)");
  }
  m.head = head == "shared" ? FusionHead::Shared : FusionHead::Average;
  auto geti = [&](const char* key, int fallback) {
    return static_cast<int>(cfg.get_int(key, fallback));
  };
  m.hg.base_channels = geti("base_channels", m.hg.base_channels);
  m.hg.hg_depth = geti("hg_depth", m.hg.hg_depth);
  m.hg.num_stacks = geti("num_stacks", m.hg.num_stacks);
  m.hg.input_channels = geti("input_channels", m.hg.input_channels);
  m.hg.siamese_c1 = geti("siamese_c1", m.hg.siamese_c1);
  m.hg.siamese_c2 = geti("siamese_c2", m.hg.siamese_c2);
  m.hg.validate();
  return m;
}

std::string ModelConfig::echo() const {
  std::ostringstream os;
  os << "model = " << to_string(kind) << "\n";
  if (kind == ModelKind::Fusion) {
    os << "variant = " << to_string(variant) << "\n";
    os << "fusion_head = " << (head == FusionHead::Shared ? "shared" : "average") << "\n";
  }
  os << "base_channels = " << hg.base_channels << "\n"
     << "hg_depth = " << hg.hg_depth << "\n"
     << "num_stacks = " << hg.num_stacks << "\n"
     << "input_channels = " << hg.input_channels << "\n"
     << "siamese_c1 = " << hg.siamese_c1 << "\n"
     << "siamese_c2 = " << hg.siamese_c2 << "\n";
  return os.str();
}

template <typename T>
HourglassModel<T>::HourglassModel(const ModelConfig& cfg, std::uint64_t seed)
    : DepthModel<T>(cfg),
      net_(this->params_, cfg.kind == ModelKind::Dfd ? "dfd" : "stereo", cfg.hg,
           cfg.kind == ModelKind::Dfd ? InputBinding::Defocus : InputBinding::Stereo, seed) {}

template <typename T>
FusionModel<T>::FusionModel(const ModelConfig& cfg, std::uint64_t seed)
    : DepthModel<T>(cfg), net_(this->params_, cfg.hg, cfg.variant, seed, cfg.head) {}

template <typename T>
std::unique_ptr<DepthModel<T>> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.kind == ModelKind::Fusion) return std::make_unique<FusionModel<T>>(cfg, seed);
  return std::make_unique<HourglassModel<T>>(cfg, seed);
}

template class HourglassModel<float>;
template class HourglassModel<double>;
template class FusionModel<float>;
template class FusionModel<double>;
template std::unique_ptr<DepthModel<float>> build_model(const ModelConfig&, std::uint64_t);
template std::unique_ptr<DepthModel<double>> build_model(const ModelConfig&, std::uint64_t);

}  // namespace defstereo
