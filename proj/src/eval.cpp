#include "defstereo/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace defstereo {

nlohmann::json MetricReport::to_json() const {
  return {{"pct_gt_1px", pct_gt_1px}, {"pct_gt_3px", pct_gt_3px}, {"pct_gt_5px", pct_gt_5px},
          {"mae_px", mae_px},         {"wall_time_s", wall_time_s}, {"n_pixels", n_pixels}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  j.at("pct_gt_1px").get_to(r.pct_gt_1px);
  j.at("pct_gt_3px").get_to(r.pct_gt_3px);
  j.at("pct_gt_5px").get_to(r.pct_gt_5px);
  j.at("mae_px").get_to(r.mae_px);
  j.at("wall_time_s").get_to(r.wall_time_s);
  j.at("n_pixels").get_to(r.n_pixels);
  return r;
}

void MetricAccumulator::add(const Image& pred, const Image& target) {
  if (!pred.same_shape(target) || pred.channels != 1) {
    throw std::invalid_argument("metrics: prediction and target must be matching 1-channel maps");
  }
  for (std::size_t k = 0; k < pred.data.size(); ++k) {
    const double e = std::abs(static_cast<double>(pred.data[k]) - target.data[k]);
    ++n_;
    sum_ += e;
    gt1_ += e > 1.0;
    gt3_ += e > 3.0;
    gt5_ += e > 5.0;
  }
}

void MetricAccumulator::add_errors(const std::vector<double>& errors) {
  for (double e : errors) {
    e = std::abs(e);
    ++n_;
    sum_ += e;
    gt1_ += e > 1.0;
    gt3_ += e > 3.0;
    gt5_ += e > 5.0;
  }
}

MetricReport MetricAccumulator::report() const {
  MetricReport r;
  r.n_pixels = n_;
  if (n_ == 0) return r;
  const double n = static_cast<double>(n_);
  r.pct_gt_1px = 100.0 * static_cast<double>(gt1_) / n;
  r.pct_gt_3px = 100.0 * static_cast<double>(gt3_) / n;
  r.pct_gt_5px = 100.0 * static_cast<double>(gt5_) / n;
  r.mae_px = sum_ / n;
  return r;
}

MetricReport compute_metrics(const std::vector<Image>& preds, const std::vector<Image>& targets) {
  if (preds.size() != targets.size()) throw std::invalid_argument("metrics: count mismatch");
  MetricAccumulator acc;
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], targets[i]);
  return acc.report();
}

std::string metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %8s %8s %8s %9s %9s\n", "model", "> 1 px", "> 3 px",
                "> 5 px", "MAE (px)", "Time (s)");
  out += buf;
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-24s %7.2f%% %7.2f%% %7.2f%% %9.3f %9.3f\n", name.c_str(),
                  r.pct_gt_1px, r.pct_gt_3px, r.pct_gt_5px, r.mae_px, r.wall_time_s);
    out += buf;
  }
  return out;
}

Image reflect_pad(const Image& img, int divisor) {
  const int h = (img.height + divisor - 1) / divisor * divisor;
  const int w = (img.width + divisor - 1) / divisor * divisor;
  if (h - img.height >= img.height || w - img.width >= img.width) {
    throw std::invalid_argument("reflect_pad: image smaller than the padding it needs");
  }
  Image out(img.channels, h, w);
  auto reflect = [](int v, int n) { return v < n ? v : 2 * (n - 1) - v; };
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) = img.at(c, reflect(y, img.height), reflect(x, img.width));
  return out;
}

namespace {

Tensor to_tensor(const Image& img) {
  Tensor t({1, img.channels, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), t.data().begin());
  return t;
}

}  // namespace

Image predict(const DepthModel<float>& model, const SampleTriplet& s) {
  const int div = model.config().hg.divisor();
  ModelInputs<float> in{to_tensor(reflect_pad(s.left, div)), to_tensor(reflect_pad(s.right, div)),
                        to_tensor(reflect_pad(s.left_defocus, div))};
  Graph g(Graph::Mode::NoGrad);
  const NetworkOutput<float> out = model.forward(g, in, ForwardMode::Eval);
  const Tensor& d = out.final_disparity;
  Image pred(1, s.left.height, s.left.width);
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) pred.at(0, y, x) = d.at(0, 0, y, x);
  return pred;
}

MetricReport evaluate(const DepthModel<float>& model,
                      const std::vector<const SampleTriplet*>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  MetricAccumulator acc;
  double seconds = 0;
  for (const SampleTriplet* s : samples) {
    const auto t0 = std::chrono::steady_clock::now();
    const Image pred = predict(model, *s);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    acc.add(pred, s->disparity);
  }
  MetricReport r = acc.report();
  r.wall_time_s = seconds / static_cast<double>(samples.size());
  return r;
}

}  // namespace defstereo
