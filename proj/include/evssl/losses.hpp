#pragma once

#include <string>
#include <utility>
#include <vector>

#include "evssl/events.hpp"
#include "evssl/geometry.hpp"
#include "evssl/image.hpp"
#include "evssl/tensor.hpp"

namespace evssl {

struct LossWeights {
  double lambda_smooth = 1.0;    // flow smoothness
  double lambda_temporal = 0.1;  // temporal consistency
  double lambda_tv = 0.05;       // total variation
  double c_pos = 1.0;
  double c_neg = 1.0;
  bool deblur = true;

  void validate() const;
};

/// Named scalar terms plus the total they add up to.
struct LossReport {
  std::vector<std::pair<std::string, double>> terms;
  double total = 0.0;

  double at(const std::string& name) const;
  bool contains(const std::string& name) const;
  void add(std::string name, double value) { terms.emplace_back(std::move(name), value); }
};

/// A differentiable total with its bookkeeping.
struct Loss {
  Tensor total;
  LossReport report;
};

inline constexpr double kCharbonnierEta = 1e-3;

// ---- flow objectives --------------------------------------------------------

/// Sum of squared per-polarity average-timestamp images at t_ref = 1 plus t_ref = 0.
Tensor contrast_loss(const EventPartition& partition, const Tensor& flow);
/// Contribution of a single reference time.
Tensor contrast_loss(const EventPartition& partition, const Tensor& flow, double t_ref);

/// mean over pixels and components of sqrt(dx^2 + dy^2 + eta^2) - eta (forward differences).
Tensor charbonnier_smoothness(const Tensor& flow);

/// contrast + lambda_smooth * smoothness
Loss flow_total_loss(const EventPartition& partition, const Tensor& flow, const LossWeights& weights);

// ---- reconstruction objectives ----------------------------------------------

/// Reference brightness increment dL*, 1 x H x W, never part of the graph.
/// With deblurring: C+ G+ - C- G- at t_ref = 1. Without: plain per-pixel polarity sum times C.
Tensor reference_increment(const EventPartition& partition, const Tensor& flow, const LossWeights& weights);

/// Central differences with replicated borders; 2 x H x W (d/dx first).
Tensor spatial_gradient(const Tensor& image);

/// Backward warp out(x) = in(x - u(x)) with bilinear sampling and replicated borders.
Tensor warp_previous(const Tensor& image, const Tensor& flow);

/// -(W(d/dx L_prev) u + W(d/dy L_prev) v)
Tensor predicted_increment(const Tensor& previous, const Tensor& flow);

/// Sum of squared differences.
Tensor photometric_loss(const Tensor& reference, const Tensor& predicted);

/// Sum of |L_k - W(L_{k-1})|.
Tensor temporal_loss(const Tensor& current, const Tensor& previous, const Tensor& flow);

/// Anisotropic total variation with forward differences.
Tensor tv_loss(const Tensor& image);

struct ReconStepTerms {
  Tensor photometric;
  Tensor temporal;  // may be undefined for steps that carry no temporal term
  Tensor tv;
};

/// sum_{k=0..S} PE + lambda_temporal sum_{k=S0..S} TC + lambda_tv sum_{k=0..S} TV.
/// `steps` holds S + 1 entries.
Loss recon_total_loss(const std::vector<ReconStepTerms>& steps, const LossWeights& weights,
                      std::size_t unroll, std::size_t temporal_start);

/// exp, then a linear stretch between the 1st and 99th percentiles, clipped to [0, 1].
/// A flat input maps to 0.5 everywhere.
Image normalize_intensity(const Image& log_brightness);

/// Linear-interpolation percentile (q in [0, 1]) over all elements.
double percentile(Eigen::ArrayXd values, double q);

}  // namespace evssl
