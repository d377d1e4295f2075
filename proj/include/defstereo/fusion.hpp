#pragma once

#include <string>
#include <vector>

#include "defstereo/hourglass.hpp"

namespace defstereo {

enum class FusionVariant { Full, None, Less, Identity };

/// Shared: one deconvolution head over the merged branch features.
/// Average: each branch keeps its own head and the outputs are averaged.
enum class FusionHead { Shared, Average };

std::string to_string(FusionVariant v);
FusionVariant parse_fusion_variant(const std::string& s);

/// Features entering each hourglass, recorded after the interconnection.
template <typename T>
struct FusionTrace {
  std::vector<BasicTensor<T>> dfd_inputs;
  std::vector<BasicTensor<T>> stereo_inputs;
};

/// HG-Fusion-Net: a DfD and a stereo sub-network exchanging features right
/// before each hourglass. At an active spot both updates read the
/// pre-exchange features:
///   dfd'    = dfd    + link(stereo)
///   stereo' = stereo + link(dfd)
/// where link is a 1x1 conv (Full, Less) or the identity (Identity).
template <typename T>
class FusionNet {
 public:
  FusionNet(ParamStore<T>& store, const HGConfig& cfg, FusionVariant variant, std::uint64_t seed,
            FusionHead head = FusionHead::Shared);

  NetworkOutput<T> forward(BasicGraph<T>& g, const ModelInputs<T>& in, ForwardMode mode,
                           FusionTrace<T>* trace = nullptr) const;

  const HourglassNet<T>& dfd_branch() const { return dfd_; }
  const HourglassNet<T>& stereo_branch() const { return stereo_; }
  FusionVariant variant() const { return variant_; }
  /// Number of 1x1 interconnection convolutions.
  int interconnection_count() const;
  bool exchanges_at(int stack) const;

  /// Evaluation order of the two additions at a spot; results must not depend on it.
  void set_stereo_first(bool on) { stereo_first_ = on; }

 private:
  struct Link {
    Conv<T> dfd_from_stereo;
    Conv<T> stereo_from_dfd;
  };

  HGConfig cfg_;
  FusionVariant variant_;
  FusionHead head_mode_;
  HourglassNet<T> dfd_;
  HourglassNet<T> stereo_;
  std::vector<Link> links_;  // one per active spot for Full/Less
  std::optional<Residual<T>> merge_;
  std::optional<DeconvHead<T>> head_;
  bool stereo_first_ = false;
};

}  // namespace defstereo
