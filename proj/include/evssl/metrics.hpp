#pragma once

#include "evssl/formats.hpp"
#include "evssl/image.hpp"

namespace evssl {

struct FlowMetrics {
  double aee = 0.0;              // pixels
  double outlier_percent = 0.0;  // endpoint error above 3 px
};

/// Endpoint-error statistics over pixels where `valid` is true. Throws std::domain_error on an
/// empty mask.
FlowMetrics flow_metrics(const FlowField& flow, const FlowField& gt, const EventMask& valid);

struct FrameMetrics {
  double mse = 0.0;
  double ssim = 0.0;
};

/// Mean local SSIM, 11 x 11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, range 1. Windows
/// are truncated at the image border and their weights renormalized.
double ssim(const Image& a, const Image& b);

/// Both images are expected in [0, 1].
FrameMetrics frame_metrics(const Image& reconstruction, const Image& gt);

/// Hue from direction, value from speed relative to the image maximum, saturation 1. 8-bit RGB.
Raster flow_color_code(const FlowField& flow);

}  // namespace evssl
