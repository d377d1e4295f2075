#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "defstereo/datagen.hpp"
#include "defstereo/model.hpp"

namespace defstereo {

struct MetricReport {
  double pct_gt_1px = 0, pct_gt_3px = 0, pct_gt_5px = 0;  // strict thresholds, percent
  double mae_px = 0;
  double wall_time_s = 0;  // mean inference time per image
  long long n_pixels = 0;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

/// Accumulates absolute errors over any number of prediction/target pairs.
class MetricAccumulator {
 public:
  void add(const Image& pred, const Image& target);
  void add_errors(const std::vector<double>& abs_errors);
  MetricReport report() const;

 private:
  long long n_ = 0, gt1_ = 0, gt3_ = 0, gt5_ = 0;
  double sum_ = 0;
};

MetricReport compute_metrics(const std::vector<Image>& preds, const std::vector<Image>& targets);

/// Rows: name, >1 px, >3 px, >5 px, MAE (px), Time (s).
std::string metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

/// Reflect padding on the bottom and right edges up to the next multiple of `divisor`.
Image reflect_pad(const Image& img, int divisor);

/// Full-image inference in eval mode: reflect-pad to the divisibility
/// requirement, run the network, crop back. Parameters and buffers are untouched.
Image predict(const DepthModel<float>& model, const SampleTriplet& sample);

/// Metrics over all pixels of all samples; wall time is per image.
MetricReport evaluate(const DepthModel<float>& model, const std::vector<const SampleTriplet*>& samples);

}  // namespace defstereo
