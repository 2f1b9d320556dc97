#include "evssl/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace evssl {

namespace {

void require_normalized(const EventPartition& partition, const char* who) {
  if (!partition.normalized()) {
    throw std::invalid_argument(std::string(who) + ": partition timestamps are not normalized");
  }
}

}  // namespace

VoxelGrid build_voxel_grid(const EventPartition& partition, int bins) {
  if (bins < 2) throw ConfigError("voxel grid needs at least 2 bins");
  require_normalized(partition, "build_voxel_grid");
  const auto& g = partition.geometry;
  const Eigen::Index plane = g.pixels();
  Eigen::ArrayXd data = Eigen::ArrayXd::Zero(bins * plane);
  for (std::size_t i = 0; i < partition.events.size(); ++i) {
    const Event& e = partition.events[i];
    const double pos = partition.t_star[i] * (bins - 1);
    const auto b0 = std::min(static_cast<Eigen::Index>(std::floor(pos)), Eigen::Index{bins - 1});
    const double frac = pos - static_cast<double>(b0);
    const Eigen::Index pixel = static_cast<Eigen::Index>(e.y) * g.width + e.x;
    data[b0 * plane + pixel] += e.p * (1.0 - frac);
    if (b0 + 1 < bins) data[(b0 + 1) * plane + pixel] += e.p * frac;
  }
  return {Tensor(Shape{bins, g.height, g.width}, std::move(data))};
}

VoxelGrid null_voxel_grid(const SensorGeometry& geometry, int bins) {
  return {Tensor(Shape{bins, geometry.height, geometry.width}, 0.0)};
}

EventMask event_mask(const VoxelGrid& voxel) {
  Image mass = Image::Zero(voxel.height(), voxel.width());
  for (Eigen::Index b = 0; b < voxel.bins(); ++b) mass += voxel.data.channel(b).abs();
  return mass > 0.0;
}

Tensor mask_tensor(const EventMask& mask) { return Tensor::from_image(mask.cast<double>()); }

std::vector<Eigen::Index> source_pixels(const EventPartition& partition) {
  std::vector<Eigen::Index> index;
  index.reserve(partition.events.size());
  for (const Event& e : partition.events) {
    index.push_back(static_cast<Eigen::Index>(e.y) * partition.geometry.width + e.x);
  }
  return index;
}

Tensor warp_events(const EventPartition& partition, const Tensor& flow, double t_ref) {
  require_normalized(partition, "warp_events");
  const auto& g = partition.geometry;
  if (flow.rank() != 3 || flow.dim(0) != 2 || flow.dim(1) != g.height || flow.dim(2) != g.width) {
    throw ShapeError("warp_events: flow " + to_string(flow.shape()) + " does not match sensor " +
                     std::to_string(g.width) + "x" + std::to_string(g.height));
  }
  const auto n = static_cast<Eigen::Index>(partition.size());
  Eigen::ArrayXd base(2 * n), dt(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Event& e = partition.events[static_cast<std::size_t>(i)];
    base[i] = e.x;
    base[n + i] = e.y;
    dt[i] = dt[n + i] = t_ref - partition.t_star[static_cast<std::size_t>(i)];
  }
  Tensor sampled = select_columns(flow.reshape({2, g.pixels()}), source_pixels(partition));
  return Tensor(Shape{2, n}, std::move(base)) + Tensor(Shape{2, n}, std::move(dt)) * sampled;
}

WarpedImages accumulate_warped_images(const EventPartition& partition, const Tensor& warped,
                                      double t_ref) {
  require_normalized(partition, "accumulate_warped_images");
  const auto& g = partition.geometry;
  const auto n = static_cast<Eigen::Index>(partition.size());
  if (warped.rank() != 2 || warped.dim(0) != 2 || warped.dim(1) != n) {
    throw ShapeError("accumulate_warped_images: expected 2 x " + std::to_string(n) +
                     " positions, got " + to_string(warped.shape()));
  }

  auto build = [&](int polarity) {
    std::vector<Eigen::Index> members;
    std::unordered_map<Eigen::Index, int> per_source;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Event& e = partition.events[static_cast<std::size_t>(i)];
      if (e.p != polarity) continue;
      members.push_back(i);
      ++per_source[static_cast<Eigen::Index>(e.y) * g.width + e.x];
    }
    const auto m = static_cast<Eigen::Index>(members.size());
    Eigen::ArrayXd stamps(m), density(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto i = static_cast<std::size_t>(members[static_cast<std::size_t>(j)]);
      const Event& e = partition.events[i];
      stamps[j] = partition.t_star[i];
      density[j] = 1.0 / per_source[static_cast<Eigen::Index>(e.y) * g.width + e.x];
    }
    Tensor positions = select_columns(warped, members);
    PolarityImages out;
    out.count = bilinear_splat(Tensor(Shape{m}, Eigen::ArrayXd::Ones(m)), positions, g.height, g.width);
    Tensor stamp_sum = bilinear_splat(Tensor(Shape{m}, std::move(stamps)), positions, g.height, g.width);
    out.average_timestamp = stamp_sum / (out.count + kEpsilon);
    out.source_density = bilinear_splat(Tensor(Shape{m}, std::move(density)), positions, g.height, g.width);
    return out;
  };

  return {build(1), build(-1), t_ref};
}

AverageImages average_iwe(const WarpedImages& images) {
  return {images.positive.count / (images.positive.source_density + kEpsilon),
          images.negative.count / (images.negative.source_density + kEpsilon)};
}

Image event_count_image(const EventPartition& partition) {
  const auto& g = partition.geometry;
  Image counts = Image::Zero(g.height, g.width);
  for (const Event& e : partition.events) counts(e.y, e.x) += 1.0;
  return counts;
}

double fwl(const EventPartition& partition, const FlowField& flow) {
  auto combined = [&](const Tensor& flow_t) {
    WarpedImages w = accumulate_warped_images(partition, warp_events(partition, flow_t, 1.0), 1.0);
    return Image(w.positive.count.channel(0) + w.negative.count.channel(0));
  };
  const auto& g = partition.geometry;
  const double denominator = population_variance(combined(Tensor(Shape{2, g.height, g.width}, 0.0)));
  if (!(denominator > 0.0)) {
    throw std::domain_error("FWL undefined: unwarped event image has zero variance");
  }
  return population_variance(combined(flow_tensor(flow))) / denominator;
}

}  // namespace evssl
