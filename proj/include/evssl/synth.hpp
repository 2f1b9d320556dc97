#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "evssl/events.hpp"
#include "evssl/image.hpp"

namespace evssl {

// ---- base patterns (log intensity on the sensor torus) -----------------------

/// Squares of side period/2 at levels +-amplitude/2. The period should divide the frame size
/// for the pattern to wrap seamlessly.
Image checkerboard_pattern(const SensorGeometry& geometry, double period, double amplitude = 1.0);

/// Sum of `count` isotropic Gaussians with random centres and signs, toroidal distances.
Image gaussian_blobs_pattern(const SensorGeometry& geometry, int count, double sigma, std::uint64_t seed,
                             double amplitude = 1.0);

/// log(offset + v) of a [0, 1] grayscale image.
Image log_intensity_pattern(const Image& unit_image, double offset = 0.05);

/// Globally translating pattern, wrapped toroidally.
struct SyntheticScene {
  SensorGeometry geometry;
  Image pattern;  // L0, height x width
  double vx = 0.0;  // pixels per second
  double vy = 0.0;
  double contrast = 0.5;  // simulated contrast threshold
  double duration = 1.0;  // seconds
};

/// L(x, t) = L0(x - v t), bilinear with toroidal wrap.
Image render_scene(const SyntheticScene& scene, double t);

using BrightnessFunction = std::function<Image(double t)>;

/// Per-pixel integrate-and-fire over [0, duration] in steps of `timestep`. Each crossing of the
/// reference level by +-contrast emits one event with a timestamp interpolated inside the step.
/// Throws ConfigError when a step changes some pixel by 4 * contrast or more.
EventStream generate_events(const SensorGeometry& geometry, const BrightnessFunction& brightness,
                            double duration, double timestep, double contrast);
EventStream generate_events(const SyntheticScene& scene, double timestep);

/// Largest timestep that keeps per-step changes under the generator's limit, with margin.
double suggested_timestep(const SyntheticScene& scene);

/// Constant flow v * (t_last - t_first): displacement per unit normalized partition time.
FlowField ground_truth_flow(const SyntheticScene& scene, const EventPartition& partition);

/// L(x, t) at the partition's last event.
Image ground_truth_frame(const SyntheticScene& scene, const EventPartition& partition);

}  // namespace evssl
