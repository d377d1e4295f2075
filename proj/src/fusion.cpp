#include "defstereo/fusion.hpp"

#include <stdexcept>

namespace defstereo {

std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::Full: return "full";
    case FusionVariant::None: return "none";
    case FusionVariant::Less: return "less";
    case FusionVariant::Identity: return "identity";
  }
  return "full";
}

FusionVariant parse_fusion_variant(const std::string& s) {
  if (s == "full") return FusionVariant::Full;
  if (s == "none") return FusionVariant::None;
  if (s == "less") return FusionVariant::Less;
  if (s == "identity") return FusionVariant::Identity;
  throw std::invalid_argument("unknown fusion variant '" + s +
                              "' (expected full, none, less or identity)");
}

template <typename T>
FusionNet<T>::FusionNet(ParamStore<T>& store, const HGConfig& cfg, FusionVariant variant,
                        std::uint64_t seed, FusionHead head)
    : cfg_(cfg),
      variant_(variant),
      head_mode_(head),
      dfd_(store, "dfd", cfg, InputBinding::Defocus, seed, head == FusionHead::Average),
      stereo_(store, "stereo", cfg, InputBinding::Stereo, seed, head == FusionHead::Average) {
  LayerFactory<T> f(store, seed);
  const int c = cfg_.base_channels;
  if (variant_ == FusionVariant::Full || variant_ == FusionVariant::Less) {
    const int spots = variant_ == FusionVariant::Full ? cfg_.num_stacks : 1;
    for (int i = 0; i < spots; ++i) {
      const std::string name = "fusion.link" + std::to_string(i);
      links_.push_back({f.conv(name + ".dfd_from_stereo", c, c, 1),
                        f.conv(name + ".stereo_from_dfd", c, c, 1)});
    }
  }
  if (head_mode_ == FusionHead::Shared) {
    merge_ = f.residual("fusion.merge", 2 * c, c);
    head_ = make_deconv_head(f, "fusion.head", cfg_);
  }
}

template <typename T>
int FusionNet<T>::interconnection_count() const {
  return 2 * static_cast<int>(links_.size());
}

template <typename T>
bool FusionNet<T>::exchanges_at(int stack) const {
  switch (variant_) {
    case FusionVariant::Full:
    case FusionVariant::Identity: return true;
    case FusionVariant::Less: return stack == 0;
    case FusionVariant::None: return false;
  }
  return false;
}

template <typename T>
NetworkOutput<T> FusionNet<T>::forward(BasicGraph<T>& g, const ModelInputs<T>& in,
                                       ForwardMode mode, FusionTrace<T>* trace) const {
  if (in.left.dims() != in.right.dims() || in.left.dims() != in.left_defocus.dims()) {
    throw ShapeError("fusion: input dims differ: left " + dims_to_string(in.left.dims()) +
                     ", right " + dims_to_string(in.right.dims()) + ", defocus " +
                     dims_to_string(in.left_defocus.dims()));
  }
  auto [da, db] = dfd_.bind(in);
  auto [sa, sb] = stereo_.bind(in);
  auto dfd_front = dfd_.siamese_forward(g, da, db, mode);
  auto stereo_front = stereo_.siamese_forward(g, sa, sb, mode);

  NetworkOutput<T> out;
  auto xd = dfd_front.features;
  auto xs = stereo_front.features;
  for (int i = 0; i < cfg_.num_stacks; ++i) {
    if (exchanges_at(i)) {
      const auto pre_d = xd;
      const auto pre_s = xs;
      auto update_d = [&] {
        xd = add(g, pre_d,
                 variant_ == FusionVariant::Identity ? pre_s : links_[i].dfd_from_stereo(g, pre_s));
      };
      auto update_s = [&] {
        xs = add(g, pre_s,
                 variant_ == FusionVariant::Identity ? pre_d : links_[i].stereo_from_dfd(g, pre_d));
      };
      if (stereo_first_) {
        update_s();
        update_d();
      } else {
        update_d();
        update_s();
      }
    }
    if (trace) {
      trace->dfd_inputs.push_back(xd);
      trace->stereo_inputs.push_back(xs);
    }
    auto step_d = dfd_.stack_step(g, i, xd, mode);
    auto step_s = stereo_.stack_step(g, i, xs, mode);
    out.intermediate.push_back(step_d.prediction);
    out.intermediate.push_back(step_s.prediction);
    xd = step_d.next;
    xs = step_s.next;
  }

  if (head_mode_ == FusionHead::Shared) {
    auto merged = (*merge_)(g, concat_channels(g, xd, xs), mode);
    out.final_disparity = (*head_)(g, merged, stereo_front.half_skip, stereo_front.full_skip, mode);
  } else {
    auto fd = dfd_.head_forward(g, xd, dfd_front, mode);
    auto fs = stereo_.head_forward(g, xs, stereo_front, mode);
    out.final_disparity = scale(g, add(g, fd, fs), T(0.5));
  }
  return out;
}

template class FusionNet<float>;
template class FusionNet<double>;

}  // namespace defstereo
