#include "defstereo/hourglass.hpp"

namespace defstereo {

HGConfig HGConfig::paper() { return HGConfig{256, 4, 2, 3, 64, 128}; }
HGConfig HGConfig::desk() { return HGConfig{32, 2, 2, 3, 16, 24}; }
HGConfig HGConfig::micro() { return HGConfig{4, 1, 2, 3, 4, 4}; }

void HGConfig::validate() const {
  if (num_stacks < 1) throw std::invalid_argument("HGConfig: num_stacks must be >= 1");
  if (hg_depth < 1) throw std::invalid_argument("HGConfig: hg_depth must be >= 1");
  if (base_channels < 2 || input_channels < 1 || siamese_c1 < 1 || siamese_c2 < 1) {
    throw std::invalid_argument("HGConfig: channel counts must be positive (base >= 2)");
  }
}

void HGConfig::check_input(int height, int width) const {
  if (height <= 0 || width <= 0 || height % divisor() != 0 || width % divisor() != 0) {
    throw ShapeError("input " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by " + std::to_string(divisor()));
  }
}

template <typename T>
BasicTensor<T> SiameseFront<T>::branch(BasicGraph<T>& g, const BasicTensor<T>& image,
                                       ForwardMode mode, BasicTensor<T>* half) const {
  auto x = act1(g, conv1(g, image), mode);
  if (half) *half = x;
  return act2(g, conv2(g, x), mode);
}

template <typename T>
SiameseOutput<T> SiameseFront<T>::operator()(BasicGraph<T>& g, const BasicTensor<T>& a,
                                             const BasicTensor<T>& b, ForwardMode mode) const {
  if (a.dims() != b.dims()) {
    throw ShapeError("siamese: input dims differ " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  }
  // both views go through the shared layers as one batch
  const int n = a.dim(0);
  SiameseOutput<T> out;
  out.full_skip = a;
  BasicTensor<T> half;
  auto both = branch(g, concat_batch(g, a, b), mode, &half);
  out.half_skip = slice_batch(g, half, 0, n);
  out.branch_a = slice_batch(g, both, 0, n);
  out.branch_b = slice_batch(g, both, n, n);
  out.concatenated = concat_channels(g, out.branch_a, out.branch_b);
  out.features = project(g, out.concatenated);
  return out;
}

template <typename T>
BasicTensor<T> Hourglass<T>::operator()(BasicGraph<T>& g, const BasicTensor<T>& x,
                                        ForwardMode mode) const {
  return level(g, 0, x, mode);
}

template <typename T>
BasicTensor<T> Hourglass<T>::level(BasicGraph<T>& g, std::size_t depth, const BasicTensor<T>& x,
                                   ForwardMode mode) const {
  const Level& lv = levels[depth];
  auto skip = lv.skip(g, x, mode);
  auto inner = lv.down(g, maxpool2(g, x), mode);
  inner = depth + 1 < levels.size() ? level(g, depth + 1, inner, mode) : bottom(g, inner, mode);
  inner = lv.after(g, inner, mode);
  return lv.post(g, add(g, upsample_nn2(g, inner), skip), mode);
}

template <typename T>
StackStep<T> StackUnit<T>::operator()(BasicGraph<T>& g, const BasicTensor<T>& x,
                                      ForwardMode mode) const {
  auto f = hourglass(g, x, mode);
  StackStep<T> step;
  step.prediction = predict(g, f);
  step.next = add(g, add(g, x, post(g, f)), remap(g, step.prediction));
  return step;
}

template <typename T>
BasicTensor<T> DeconvHead<T>::operator()(BasicGraph<T>& g, const BasicTensor<T>& features,
                                         const BasicTensor<T>& half_skip,
                                         const BasicTensor<T>& full_skip, ForwardMode mode) const {
  auto x = up1(g, features);
  if (x.dims()[2] != half_skip.dim(2) || x.dims()[3] != half_skip.dim(3)) {
    throw ShapeError("deconv head: half-resolution skip " + dims_to_string(half_skip.dims()) +
                     " does not match upsampled features " + dims_to_string(x.dims()));
  }
  x = fuse1(g, concat_channels(g, x, half_skip), mode);
  x = up2(g, x);
  if (x.dims()[2] != full_skip.dim(2) || x.dims()[3] != full_skip.dim(3)) {
    throw ShapeError("deconv head: full-resolution skip " + dims_to_string(full_skip.dims()) +
                     " does not match upsampled features " + dims_to_string(x.dims()));
  }
  x = fuse2(g, concat_channels(g, x, full_skip), mode);
  return out(g, x);
}

template <typename T>
SiameseFront<T> make_siamese(LayerFactory<T>& f, const std::string& name, const HGConfig& cfg) {
  SiameseFront<T> s;
  s.conv1 = f.conv(name + ".conv1", cfg.input_channels, cfg.siamese_c1, 7, 2, 3, false);
  s.act1 = f.bn_prelu(name + ".bn1", cfg.siamese_c1);
  s.conv2 = f.conv(name + ".conv2", cfg.siamese_c1, cfg.siamese_c2, 5, 2, 2, false);
  s.act2 = f.bn_prelu(name + ".bn2", cfg.siamese_c2);
  s.project = f.conv(name + ".project", 2 * cfg.siamese_c2, cfg.base_channels, 1);
  return s;
}

template <typename T>
StackUnit<T> make_stack_unit(LayerFactory<T>& f, const std::string& name, const HGConfig& cfg) {
  const int c = cfg.base_channels;
  StackUnit<T> u;
  for (int l = 0; l < cfg.hg_depth; ++l) {
    const std::string lv = name + ".hg.l" + std::to_string(l);
    u.hourglass.levels.push_back({f.residual(lv + ".skip", c, c), f.residual(lv + ".down", c, c),
                                  f.residual(lv + ".after", c, c),
                                  f.residual(lv + ".post", c, c)});
  }
  u.hourglass.bottom = f.residual(name + ".hg.bottom", c, c);
  u.predict = f.conv(name + ".predict", c, 1, 1);
  u.post = f.conv(name + ".post", c, c, 1);
  u.remap = f.conv(name + ".remap", 1, c, 1);
  return u;
}

template <typename T>
DeconvHead<T> make_deconv_head(LayerFactory<T>& f, const std::string& name, const HGConfig& cfg) {
  const int c1 = cfg.base_channels;
  const int c2 = std::max(1, cfg.base_channels / 2);
  DeconvHead<T> h;
  h.up1 = f.deconv(name + ".up1", cfg.base_channels, c1);
  h.fuse1 = f.residual(name + ".fuse1", c1 + cfg.siamese_c1, c1);
  h.up2 = f.deconv(name + ".up2", c1, c2);
  h.fuse2 = f.residual(name + ".fuse2", c2 + cfg.input_channels, c2);
  h.out = f.conv(name + ".out", c2, 1, 1);
  return h;
}

template <typename T>
HourglassNet<T>::HourglassNet(ParamStore<T>& store, const std::string& prefix,
                              const HGConfig& cfg, InputBinding binding, std::uint64_t seed,
                              bool with_head)
    : cfg_(cfg), binding_(binding) {
  cfg_.validate();
  LayerFactory<T> f(store, seed);
  front_ = make_siamese(f, prefix + ".siamese", cfg_);
  for (int i = 0; i < cfg_.num_stacks; ++i) {
    stacks_.push_back(make_stack_unit(f, prefix + ".stack" + std::to_string(i), cfg_));
  }
  if (with_head) head_ = make_deconv_head(f, prefix + ".head", cfg_);
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> HourglassNet<T>::bind(const ModelInputs<T>& in) const {
  return {in.left, binding_ == InputBinding::Defocus ? in.left_defocus : in.right};
}

template <typename T>
SiameseOutput<T> HourglassNet<T>::siamese_forward(BasicGraph<T>& g, const BasicTensor<T>& a,
                                                  const BasicTensor<T>& b,
                                                  ForwardMode mode) const {
  if (a.rank() != 4) throw ShapeError("siamese: expected N x C x H x W input");
  cfg_.check_input(a.dim(2), a.dim(3));
  return front_(g, a, b, mode);
}

template <typename T>
BasicTensor<T> HourglassNet<T>::hourglass_forward(BasicGraph<T>& g, int stack,
                                                  const BasicTensor<T>& x,
                                                  ForwardMode mode) const {
  const int div = 1 << cfg_.hg_depth;
  if (x.rank() != 4 || x.dim(2) % div != 0 || x.dim(3) % div != 0) {
    throw ShapeError("hourglass: extent of " + dims_to_string(x.dims()) +
                     " not divisible by " + std::to_string(div));
  }
  return this->stack(stack).hourglass(g, x, mode);
}

template <typename T>
StackStep<T> HourglassNet<T>::stack_step(BasicGraph<T>& g, int stack, const BasicTensor<T>& x,
                                         ForwardMode mode) const {
  return this->stack(stack)(g, x, mode);
}

template <typename T>
NetworkOutput<T> HourglassNet<T>::stack_forward(BasicGraph<T>& g, const BasicTensor<T>& features,
                                                ForwardMode mode,
                                                BasicTensor<T>* out_features) const {
  NetworkOutput<T> out;
  auto x = features;
  for (int i = 0; i < cfg_.num_stacks; ++i) {
    auto step = stack_step(g, i, x, mode);
    out.intermediate.push_back(step.prediction);
    x = step.next;
  }
  if (out_features) *out_features = x;
  return out;
}

template <typename T>
BasicTensor<T> HourglassNet<T>::head_forward(BasicGraph<T>& g, const BasicTensor<T>& features,
                                             const SiameseOutput<T>& siamese,
                                             ForwardMode mode) const {
  if (!head_) throw std::logic_error("hourglass net built without a deconvolution head");
  return (*head_)(g, features, siamese.half_skip, siamese.full_skip, mode);
}

template <typename T>
NetworkOutput<T> HourglassNet<T>::forward(BasicGraph<T>& g, const ModelInputs<T>& in,
                                          ForwardMode mode) const {
  auto [a, b] = bind(in);
  auto s = siamese_forward(g, a, b, mode);
  BasicTensor<T> features;
  auto out = stack_forward(g, s.features, mode, &features);
  out.final_disparity = head_forward(g, features, s, mode);
  return out;
}

#define DEFSTEREO_INSTANTIATE_HG(T)                                                          \
  template struct SiameseFront<T>;                                                           \
  template struct Hourglass<T>;                                                              \
  template struct StackUnit<T>;                                                              \
  template struct DeconvHead<T>;                                                             \
  template class HourglassNet<T>;                                                            \
  template SiameseFront<T> make_siamese(LayerFactory<T>&, const std::string&, const HGConfig&); \
  template StackUnit<T> make_stack_unit(LayerFactory<T>&, const std::string&, const HGConfig&); \
  template DeconvHead<T> make_deconv_head(LayerFactory<T>&, const std::string&, const HGConfig&);

DEFSTEREO_INSTANTIATE_HG(float)
DEFSTEREO_INSTANTIATE_HG(double)

}  // namespace defstereo
