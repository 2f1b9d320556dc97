#include "evssl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace evssl {

void LossWeights::validate() const {
  if (lambda_smooth < 0.0 || lambda_temporal < 0.0 || lambda_tv < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(c_pos > 0.0) || !(c_neg > 0.0)) throw ConfigError("contrast thresholds must be positive");
}

double LossReport::at(const std::string& name) const {
  for (const auto& [key, value] : terms) {
    if (key == name) return value;
  }
  throw std::out_of_range("loss report has no term '" + name + "'");
}

bool LossReport::contains(const std::string& name) const {
  return std::any_of(terms.begin(), terms.end(), [&](const auto& kv) { return kv.first == name; });
}

// ---- flow -------------------------------------------------------------------

Tensor contrast_loss(const EventPartition& partition, const Tensor& flow, double t_ref) {
  if (partition.empty()) return Tensor::scalar(0.0);
  WarpedImages images = accumulate_warped_images(partition, warp_events(partition, flow, t_ref), t_ref);
  return sum_of_squares(images.positive.average_timestamp) +
         sum_of_squares(images.negative.average_timestamp);
}

Tensor contrast_loss(const EventPartition& partition, const Tensor& flow) {
  if (partition.empty()) return Tensor::scalar(0.0);
  return contrast_loss(partition, flow, 1.0) + contrast_loss(partition, flow, 0.0);
}

Tensor charbonnier_smoothness(const Tensor& flow) {
  Tensor dx = forward_difference(flow, Axis::X);
  Tensor dy = forward_difference(flow, Axis::Y);
  return mean(sqrt(square(dx) + square(dy) + kCharbonnierEta * kCharbonnierEta) - kCharbonnierEta);
}

Loss flow_total_loss(const EventPartition& partition, const Tensor& flow, const LossWeights& weights) {
  Tensor contrast = contrast_loss(partition, flow);
  Tensor smooth = charbonnier_smoothness(flow);
  Loss loss{contrast + smooth * weights.lambda_smooth, {}};
  loss.report.add("contrast", contrast.item());
  loss.report.add("smoothness", smooth.item());
  loss.report.total = loss.total.item();
  return loss;
}

// ---- reconstruction ---------------------------------------------------------

Tensor reference_increment(const EventPartition& partition, const Tensor& flow, const LossWeights& weights) {
  const auto& g = partition.geometry;
  if (partition.empty()) return Tensor(Shape{1, g.height, g.width}, 0.0);
  if (weights.deblur) {
    WarpedImages images = accumulate_warped_images(partition, warp_events(partition, detach(flow), 1.0), 1.0);
    AverageImages avg = average_iwe(images);
    Image increment = weights.c_pos * avg.positive.channel(0) - weights.c_neg * avg.negative.channel(0);
    return Tensor::from_image(increment);
  }
  Image increment = Image::Zero(g.height, g.width);
  for (const Event& e : partition.events) {
    increment(e.y, e.x) += e.p > 0 ? weights.c_pos : -weights.c_neg;
  }
  return Tensor::from_image(increment);
}

Tensor spatial_gradient(const Tensor& image) {
  return concat({central_difference(image, Axis::X), central_difference(image, Axis::Y)});
}

Tensor warp_previous(const Tensor& image, const Tensor& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2 || image.rank() != 3 || flow.dim(1) != image.dim(1) ||
      flow.dim(2) != image.dim(2)) {
    throw ShapeError("warp_previous: flow " + to_string(flow.shape()) + " vs image " +
                     to_string(image.shape()));
  }
  const Eigen::Index h = image.dim(1), w = image.dim(2), n = h * w;
  Eigen::ArrayXd grid(2 * n);
  const Eigen::ArrayXd& f = flow.values();
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Index i = y * w + x;
      grid[i] = static_cast<double>(x) - f[i];
      grid[n + i] = static_cast<double>(y) - f[n + i];
    }
  }
  return bilinear_sample(image, Tensor(Shape{2, h, w}, std::move(grid)));
}

Tensor predicted_increment(const Tensor& previous, const Tensor& flow) {
  Tensor warped = warp_previous(spatial_gradient(previous), flow);
  Tensor fixed = detach(flow);
  return -(slice(warped, 0, 1) * slice(fixed, 0, 1) + slice(warped, 1, 2) * slice(fixed, 1, 2));
}

Tensor photometric_loss(const Tensor& reference, const Tensor& predicted) {
  if (reference.shape() != predicted.shape()) {
    throw ShapeError("photometric_loss: " + to_string(reference.shape()) + " vs " +
                     to_string(predicted.shape()));
  }
  return sum_of_squares(reference - predicted);
}

Tensor temporal_loss(const Tensor& current, const Tensor& previous, const Tensor& flow) {
  if (current.shape() != previous.shape()) {
    throw ShapeError("temporal_loss: " + to_string(current.shape()) + " vs " + to_string(previous.shape()));
  }
  return sum(abs(current - warp_previous(previous, flow)));
}

Tensor tv_loss(const Tensor& image) {
  return sum(abs(forward_difference(image, Axis::X))) + sum(abs(forward_difference(image, Axis::Y)));
}

Loss recon_total_loss(const std::vector<ReconStepTerms>& steps, const LossWeights& weights,
                      std::size_t unroll, std::size_t temporal_start) {
  if (temporal_start > unroll) throw ConfigError("S0 must not exceed S");
  if (steps.size() != unroll + 1) {
    throw std::invalid_argument("recon_total_loss: expected " + std::to_string(unroll + 1) +
                                " steps, got " + std::to_string(steps.size()));
  }
  Tensor photometric = Tensor::scalar(0.0);
  Tensor temporal = Tensor::scalar(0.0);
  Tensor tv = Tensor::scalar(0.0);
  for (std::size_t k = 0; k < steps.size(); ++k) {
    photometric = photometric + steps[k].photometric;
    tv = tv + steps[k].tv;
    if (k >= temporal_start && steps[k].temporal.defined()) temporal = temporal + steps[k].temporal;
  }
  Loss loss{photometric + temporal * weights.lambda_temporal + tv * weights.lambda_tv, {}};
  loss.report.add("photometric", photometric.item());
  loss.report.add("temporal", temporal.item());
  loss.report.add("tv", tv.item());
  loss.report.total = loss.total.item();
  return loss;
}

double percentile(Eigen::ArrayXd values, double q) {
  if (values.size() == 0) throw std::invalid_argument("percentile of an empty array");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<Eigen::Index>(std::floor(pos));
  const Eigen::Index hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Image normalize_intensity(const Image& log_brightness) {
  // The shift by the maximum cancels in the min/max stretch and keeps exp() finite.
  const Image intensity = (log_brightness - log_brightness.maxCoeff()).exp();
  Eigen::ArrayXd flat = Eigen::Map<const Eigen::ArrayXd>(intensity.data(), intensity.size());
  const double lo = percentile(flat, 0.01);
  const double hi = percentile(flat, 0.99);
  if (!(hi > lo)) return Image::Constant(intensity.rows(), intensity.cols(), 0.5);
  return ((intensity - lo) / (hi - lo)).max(0.0).min(1.0);
}

}  // namespace evssl
