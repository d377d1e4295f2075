#pragma once

#include <string>
#include <vector>

#include "defstereo/layers.hpp"

namespace defstereo {

/// Architecture hyperparameters shared by the DfD, stereo and fusion networks.
struct HGConfig {
  int base_channels = 32;
  int hg_depth = 2;  // pooling rounds per hourglass
  int num_stacks = 2;
  int input_channels = 3;
  int siamese_c1 = 16;  // 7x7 stride-2 conv
  int siamese_c2 = 24;  // 5x5 stride-2 conv

  static HGConfig paper();
  static HGConfig desk();
  static HGConfig micro();

  /// Input height and width must be multiples of this.
  int divisor() const { return 1 << (2 + hg_depth); }
  void validate() const;
  void check_input(int height, int width) const;

  bool operator==(const HGConfig&) const = default;
};

template <typename T>
struct ModelInputs {
  BasicTensor<T> left;          // all-focus left view, N x C x H x W
  BasicTensor<T> right;         // all-focus right view
  BasicTensor<T> left_defocus;  // defocused left view
};

template <typename T>
struct NetworkOutput {
  BasicTensor<T> final_disparity;                // N x 1 x H x W
  std::vector<BasicTensor<T>> intermediate;      // N x 1 x H/4 x W/4 each
};

template <typename T>
struct SiameseOutput {
  BasicTensor<T> branch_a, branch_b;  // per-branch quarter-resolution maps
  BasicTensor<T> concatenated;        // (a, b) channel blocks
  BasicTensor<T> features;            // projected to base channels
  BasicTensor<T> half_skip;           // branch a after the first conv, H/2
  BasicTensor<T> full_skip;           // raw branch a input
};

/// Two weight-shared branches (7x7/2 then 5x5/2 convs, BN+PReLU after each),
/// concatenated and projected to base channels by a 1x1 conv.
template <typename T>
struct SiameseFront {
  Conv<T> conv1, conv2, project;
  BnPrelu<T> act1, act2;

  BasicTensor<T> branch(BasicGraph<T>& g, const BasicTensor<T>& image, ForwardMode mode,
                        BasicTensor<T>* half) const;
  SiameseOutput<T> operator()(BasicGraph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b,
                              ForwardMode mode) const;
};

/// Recursive hourglass. Each level: skip = R(x); inner = R(pool(x)) followed
/// by the next level (or one bottom R); out = R(up(R(inner)) + skip).
template <typename T>
struct Hourglass {
  struct Level {
    Residual<T> skip, down, after, post;
  };
  std::vector<Level> levels;
  Residual<T> bottom;

  BasicTensor<T> operator()(BasicGraph<T>& g, const BasicTensor<T>& x, ForwardMode mode) const;

 private:
  BasicTensor<T> level(BasicGraph<T>& g, std::size_t depth, const BasicTensor<T>& x,
                       ForwardMode mode) const;
};

template <typename T>
struct StackStep {
  BasicTensor<T> next;        // input to the following stack
  BasicTensor<T> prediction;  // 1-channel intermediate disparity
};

/// One hourglass plus its intermediate-supervision plumbing:
/// pred = P(f), next = x + Q(f) + R(pred) with 1x1 convs P, Q, R.
template <typename T>
struct StackUnit {
  Hourglass<T> hourglass;
  Conv<T> predict, post, remap;

  StackStep<T> operator()(BasicGraph<T>& g, const BasicTensor<T>& x, ForwardMode mode) const;
};

/// Two 4x4 stride-2 deconvolutions, each followed by concatenation with the
/// matching high-resolution skip and a residual module; a final 1x1 conv
/// yields the disparity.
template <typename T>
struct DeconvHead {
  Deconv<T> up1, up2;
  Residual<T> fuse1, fuse2;
  Conv<T> out;

  BasicTensor<T> operator()(BasicGraph<T>& g, const BasicTensor<T>& features,
                            const BasicTensor<T>& half_skip, const BasicTensor<T>& full_skip,
                            ForwardMode mode) const;
};

enum class InputBinding { Defocus, Stereo };

/// HG-DfD-Net / HG-Stereo-Net: siamese front, stacked hourglasses with
/// intermediate supervision, deconvolution head.
template <typename T>
class HourglassNet {
 public:
  HourglassNet(ParamStore<T>& store, const std::string& prefix, const HGConfig& cfg,
               InputBinding binding, std::uint64_t seed, bool with_head = true);

  /// Selects (branch a, branch b) from the triplet; branch a is always the
  /// focused left view.
  std::pair<BasicTensor<T>, BasicTensor<T>> bind(const ModelInputs<T>& in) const;

  SiameseOutput<T> siamese_forward(BasicGraph<T>& g, const BasicTensor<T>& a,
                                   const BasicTensor<T>& b, ForwardMode mode) const;
  BasicTensor<T> hourglass_forward(BasicGraph<T>& g, int stack, const BasicTensor<T>& x,
                                   ForwardMode mode) const;
  StackStep<T> stack_step(BasicGraph<T>& g, int stack, const BasicTensor<T>& x,
                          ForwardMode mode) const;
  /// Runs all stacks; returns the post-stack features and one prediction per stack.
  NetworkOutput<T> stack_forward(BasicGraph<T>& g, const BasicTensor<T>& features,
                                 ForwardMode mode, BasicTensor<T>* out_features) const;
  BasicTensor<T> head_forward(BasicGraph<T>& g, const BasicTensor<T>& features,
                              const SiameseOutput<T>& siamese, ForwardMode mode) const;

  NetworkOutput<T> forward(BasicGraph<T>& g, const ModelInputs<T>& in, ForwardMode mode) const;

  const HGConfig& config() const { return cfg_; }
  InputBinding binding() const { return binding_; }
  const SiameseFront<T>& siamese() const { return front_; }
  const StackUnit<T>& stack(int i) const { return stacks_.at(static_cast<std::size_t>(i)); }
  bool has_head() const { return head_.has_value(); }

 private:
  HGConfig cfg_;
  InputBinding binding_;
  SiameseFront<T> front_;
  std::vector<StackUnit<T>> stacks_;
  std::optional<DeconvHead<T>> head_;
};

// Builders shared with the fusion network.
template <typename T>
SiameseFront<T> make_siamese(LayerFactory<T>& f, const std::string& name, const HGConfig& cfg);
template <typename T>
StackUnit<T> make_stack_unit(LayerFactory<T>& f, const std::string& name, const HGConfig& cfg);
template <typename T>
DeconvHead<T> make_deconv_head(LayerFactory<T>& f, const std::string& name, const HGConfig& cfg);

}  // namespace defstereo
