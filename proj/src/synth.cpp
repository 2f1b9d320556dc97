#include "evssl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace evssl {

namespace {

double wrap(double v, double period) {
  const double r = std::fmod(v, period);
  return r < 0.0 ? r + period : r;
}

// Shortest signed distance on a circle of circumference `period`.
double torus_delta(double a, double b, double period) {
  double d = wrap(a - b, period);
  if (d > period / 2) d -= period;
  return d;
}

}  // namespace

Image checkerboard_pattern(const SensorGeometry& geometry, double period, double amplitude) {
  if (!(period >= 2.0)) throw ConfigError("checkerboard period must be at least 2 pixels");
  Image pattern(geometry.height, geometry.width);
  const double half = period / 2;
  for (int y = 0; y < geometry.height; ++y) {
    for (int x = 0; x < geometry.width; ++x) {
      const auto cx = static_cast<long>(std::floor(x / half));
      const auto cy = static_cast<long>(std::floor(y / half));
      pattern(y, x) = ((cx + cy) % 2 == 0 ? 0.5 : -0.5) * amplitude;
    }
  }
  return pattern;
}

Image gaussian_blobs_pattern(const SensorGeometry& geometry, int count, double sigma, std::uint64_t seed,
                             double amplitude) {
  if (count < 1) throw ConfigError("gaussian blobs need count >= 1");
  if (!(sigma > 0.0)) throw ConfigError("gaussian blob sigma must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, geometry.width), uy(0.0, geometry.height), unit(0.0, 1.0);
  Image pattern = Image::Zero(geometry.height, geometry.width);
  for (int b = 0; b < count; ++b) {
    const double cx = ux(rng), cy = uy(rng);
    const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
    for (int y = 0; y < geometry.height; ++y) {
      const double dy = torus_delta(y, cy, geometry.height);
      for (int x = 0; x < geometry.width; ++x) {
        const double dx = torus_delta(x, cx, geometry.width);
        pattern(y, x) += sign * amplitude * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      }
    }
  }
  return pattern;
}

Image log_intensity_pattern(const Image& unit_image, double offset) {
  if (!(offset > 0.0)) throw ConfigError("log-intensity offset must be positive");
  return (unit_image.max(0.0) + offset).log();
}

Image render_scene(const SyntheticScene& scene, double t) {
  const Image& base = scene.pattern;
  const Eigen::Index h = base.rows(), w = base.cols();
  const double sx = scene.vx * t, sy = scene.vy * t;
  // A global translation has the same sub-pixel weights at every pixel.
  const double fx = std::floor(sx), fy = std::floor(sy);
  const double ax = sx - fx, ay = sy - fy;
  const auto ix = static_cast<long>(fx), iy = static_cast<long>(fy);
  auto idx = [](long v, Eigen::Index n) { return static_cast<Eigen::Index>(((v % n) + n) % n); };
  Image out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    // Source point y - sy lies between rows y - iy - 1 (weight ay) and y - iy (weight 1 - ay).
    const Eigen::Index y0 = idx(static_cast<long>(y) - iy, h), y1 = idx(static_cast<long>(y) - iy - 1, h);
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Index x0 = idx(static_cast<long>(x) - ix, w), x1 = idx(static_cast<long>(x) - ix - 1, w);
      out(y, x) = (1 - ay) * ((1 - ax) * base(y0, x0) + ax * base(y0, x1)) +
                  ay * ((1 - ax) * base(y1, x0) + ax * base(y1, x1));
    }
  }
  return out;
}

EventStream generate_events(const SensorGeometry& geometry, const BrightnessFunction& brightness,
                            double duration, double timestep, double contrast) {
  validate(geometry);
  if (!(contrast > 0.0)) throw ConfigError("contrast threshold must be positive");
  if (!(timestep > 0.0)) throw ConfigError("timestep must be positive");
  if (!(duration >= 0.0)) throw ConfigError("duration must be non-negative");

  struct Stamped {
    double t;
    std::uint32_t pixel;
    std::int8_t p;
  };
  std::vector<Stamped> fired;
  const double tolerance = 1e-9 * contrast;

  Image previous = brightness(0.0);
  if (previous.rows() != geometry.height || previous.cols() != geometry.width) {
    throw ShapeError("brightness function does not match the sensor geometry");
  }
  Image reference = previous;
  const auto steps = static_cast<long>(std::ceil(duration / timestep - 1e-12));
  for (long k = 0; k < steps; ++k) {
    const double t0 = static_cast<double>(k) * timestep;
    const double t1 = std::min(duration, static_cast<double>(k + 1) * timestep);
    Image current = brightness(t1);
    const double jump = (current - previous).abs().maxCoeff();
    if (jump >= 4 * contrast) {
      std::ostringstream msg;
      msg << "brightness changes by " << jump << " within one step at t = " << t0
          << " s; use a timestep below " << timestep * 3 * contrast / jump << " s";
      throw ConfigError(msg.str());
    }
    for (Eigen::Index y = 0; y < geometry.height; ++y) {
      for (Eigen::Index x = 0; x < geometry.width; ++x) {
        const double a = previous(y, x), b = current(y, x);
        double& ref = reference(y, x);
        while (std::abs(b - ref) >= contrast - tolerance) {
          const double sign = b > ref ? 1.0 : -1.0;
          const double level = ref + sign * contrast;
          double alpha = b != a ? (level - a) / (b - a) : 1.0;
          alpha = std::clamp(alpha, 0.0, 1.0);
          fired.push_back({t0 + alpha * (t1 - t0), static_cast<std::uint32_t>(y * geometry.width + x),
                           static_cast<std::int8_t>(sign)});
          ref = level;
        }
      }
    }
    previous = std::move(current);
  }

  EventStream stream{geometry, {}};
  stream.events.reserve(fired.size());
  for (const Stamped& s : fired) {
    stream.events.push_back({static_cast<std::uint64_t>(std::llround(s.t * 1e6)),
                             static_cast<std::uint16_t>(s.pixel % geometry.width),
                             static_cast<std::uint16_t>(s.pixel / geometry.width), s.p});
  }
  // Stable: ties keep step order, then raster order.
  std::stable_sort(stream.events.begin(), stream.events.end(),
                   [](const Event& l, const Event& r) { return l.t < r.t; });
  return stream;
}

EventStream generate_events(const SyntheticScene& scene, double timestep) {
  return generate_events(
      scene.geometry, [&](double t) { return render_scene(scene, t); }, scene.duration, timestep,
      scene.contrast);
}

double suggested_timestep(const SyntheticScene& scene) {
  const double speed = std::max(std::abs(scene.vx), std::abs(scene.vy));
  if (speed == 0.0) return scene.duration > 0.0 ? scene.duration : 1.0;
  // Bilinear rendering moves by at most |v| dt * (largest neighbour difference) per axis.
  const Image& l = scene.pattern;
  const Eigen::Index h = l.rows(), w = l.cols();
  double steepest = 0.0;
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      steepest = std::max({steepest, std::abs(l(y, x) - l(y, (x + 1) % w)), std::abs(l(y, x) - l((y + 1) % h, x))});
    }
  }
  if (steepest == 0.0) return scene.duration > 0.0 ? scene.duration : 1.0;
  // Per-axis changes add, so keep the total under one threshold.
  return scene.contrast / (2.0 * speed * steepest);
}

FlowField ground_truth_flow(const SyntheticScene& scene, const EventPartition& partition) {
  const double d = partition.duration_seconds();
  return FlowField::constant(scene.geometry.height, scene.geometry.width, scene.vx * d, scene.vy * d);
}

Image ground_truth_frame(const SyntheticScene& scene, const EventPartition& partition) {
  if (partition.empty()) throw std::invalid_argument("ground_truth_frame: empty partition");
  return render_scene(scene, static_cast<double>(partition.events.back().t) * 1e-6);
}

}  // namespace evssl
