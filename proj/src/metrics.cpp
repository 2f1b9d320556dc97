#include "evssl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace evssl {

namespace {

void require_same_shape(const Image& a, const Image& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(who) + ": image shapes differ");
  }
}

}  // namespace

FlowMetrics flow_metrics(const FlowField& flow, const FlowField& gt, const EventMask& valid) {
  require_same_shape(flow.u, gt.u, "flow_metrics");
  if (valid.rows() != flow.height() || valid.cols() != flow.width()) {
    throw ShapeError("flow_metrics: mask shape differs from the flow");
  }
  const Eigen::Index n = valid.count();
  if (n == 0) throw std::domain_error("flow_metrics: no valid pixels");
  const Image error = ((flow.u - gt.u).square() + (flow.v - gt.v).square()).sqrt();
  const double total = valid.select(error, 0.0).sum();
  const auto outliers = (valid && (error > 3.0)).count();
  return {total / static_cast<double>(n), 100.0 * static_cast<double>(outliers) / static_cast<double>(n)};
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  Eigen::Array<double, 2 * kRadius + 1, 1> kernel;
  for (int i = -kRadius; i <= kRadius; ++i) kernel[i + kRadius] = std::exp(-(i * i) / (2 * kSigma * kSigma));

  // Separable weighted sums, truncated at the border; weights renormalized per pixel.
  auto blur = [&](const Image& image) {
    const Eigen::Index h = image.rows(), w = image.cols();
    Image rows(h, w), out(h, w), wrows(h, w), wout(h, w);
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        double s = 0.0, ws = 0.0;
        for (int k = -kRadius; k <= kRadius; ++k) {
          const Eigen::Index xx = x + k;
          if (xx < 0 || xx >= w) continue;
          s += kernel[k + kRadius] * image(y, xx);
          ws += kernel[k + kRadius];
        }
        rows(y, x) = s;
        wrows(y, x) = ws;
      }
    }
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        double s = 0.0, ws = 0.0;
        for (int k = -kRadius; k <= kRadius; ++k) {
          const Eigen::Index yy = y + k;
          if (yy < 0 || yy >= h) continue;
          s += kernel[k + kRadius] * rows(yy, x);
          ws += kernel[k + kRadius] * wrows(yy, x);
        }
        out(y, x) = s / ws;
      }
    }
    return out;
  };

  const Image mu_a = blur(a), mu_b = blur(b);
  const Image var_a = (blur(a * a) - mu_a.square()).max(0.0);
  const Image var_b = (blur(b * b) - mu_b.square()).max(0.0);
  const Image cov = blur(a * b) - mu_a * mu_b;
  const Image map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                    ((mu_a.square() + mu_b.square() + c1) * (var_a + var_b + c2));
  return map.mean();
}

FrameMetrics frame_metrics(const Image& reconstruction, const Image& gt) {
  require_same_shape(reconstruction, gt, "frame_metrics");
  return {(reconstruction - gt).square().mean(), ssim(reconstruction, gt)};
}

Raster flow_color_code(const FlowField& flow) {
  const int h = static_cast<int>(flow.height()), w = static_cast<int>(flow.width());
  Raster raster{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3, 0)};
  const Image magnitude = flow.magnitude();
  const double peak = magnitude.size() ? magnitude.maxCoeff() : 0.0;
  if (!(peak > 0.0)) return raster;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double hue = std::atan2(flow.v(y, x), flow.u(y, x)) * 180.0 / std::numbers::pi;
      if (hue < 0.0) hue += 360.0;
      if (hue >= 360.0) hue -= 360.0;
      const double value = magnitude(y, x) / peak;
      // HSV to RGB with saturation 1.
      const double sector = hue / 60.0;
      const double frac = sector - std::floor(sector);
      const double p = 0.0, q = value * (1 - frac), t = value * frac;
      double r = 0, g = 0, b = 0;
      switch (static_cast<int>(sector) % 6) {
        case 0: r = value, g = t, b = p; break;
        case 1: r = q, g = value, b = p; break;
        case 2: r = p, g = value, b = t; break;
        case 3: r = p, g = q, b = value; break;
        case 4: r = t, g = p, b = value; break;
        default: r = value, g = p, b = q; break;
      }
      raster.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(255 * r));
      raster.at(y, x, 1) = static_cast<std::uint8_t>(std::lround(255 * g));
      raster.at(y, x, 2) = static_cast<std::uint8_t>(std::lround(255 * b));
    }
  }
  return raster;
}

}  // namespace evssl
