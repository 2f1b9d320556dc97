#pragma once

#include "evssl/events.hpp"
#include "evssl/image.hpp"
#include "evssl/tensor.hpp"

namespace evssl {

/// Stabilizer in every count-normalized ratio (average timestamps, average IWE).
inline constexpr double kEpsilon = 1e-9;

/// B x H x W signed polarity mass, bilinear in normalized time.
struct VoxelGrid {
  Tensor data;

  Eigen::Index bins() const { return data.shape()[0]; }
  Eigen::Index height() const { return data.shape()[1]; }
  Eigen::Index width() const { return data.shape()[2]; }
};

/// Voxel grid with every event's polarity split between the two nearest temporal bins.
VoxelGrid build_voxel_grid(const EventPartition& partition, int bins);
/// All-zero grid, the network input of an artificial pause.
VoxelGrid null_voxel_grid(const SensorGeometry& geometry, int bins);

/// True where the signed voxel mass is non-zero in some bin.
EventMask event_mask(const VoxelGrid& voxel);
/// 1 x H x W tensor of 0/1 weights.
Tensor mask_tensor(const EventMask& mask);

/// Flat pixel index (y * width + x) of every event.
std::vector<Eigen::Index> source_pixels(const EventPartition& partition);

/// x'_i = x_i + (t_ref - t*_i) u(x_i), with u sampled at the event's own pixel.
/// `flow` is 2 x H x W; the result is 2 x N (x row first) and differentiable in the flow.
Tensor warp_events(const EventPartition& partition, const Tensor& flow, double t_ref);

struct PolarityImages {
  Tensor count;              // H: event count image
  Tensor average_timestamp;  // T
  Tensor source_density;     // P
};

struct WarpedImages {
  PolarityImages positive;
  PolarityImages negative;
  double t_ref = 1.0;
};

/// Per-polarity IWE, average-timestamp and source-density images (each 1 x H x W).
///
/// P splats 1/n for every event, where n counts the events of the same polarity that share
/// its source pixel. When all events from a source pixel land together this is exactly the
/// number of contributing source pixels.
WarpedImages accumulate_warped_images(const EventPartition& partition, const Tensor& warped,
                                      double t_ref);

struct AverageImages {
  Tensor positive;
  Tensor negative;
};

/// G = H / (P + eps) per polarity.
AverageImages average_iwe(const WarpedImages& images);

/// Var(H+ + H- warped to t_ref = 1 with `flow`) / Var(same with zero flow).
/// Throws std::domain_error when the unwarped image has zero variance.
double fwl(const EventPartition& partition, const FlowField& flow);

/// Sums a polarity-combined count image of unwarped events.
Image event_count_image(const EventPartition& partition);

}  // namespace evssl
