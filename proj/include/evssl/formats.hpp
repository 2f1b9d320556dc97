#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "evssl/events.hpp"
#include "evssl/image.hpp"

namespace evssl {

/// Writes through a sibling temporary file and renames it over `path` once `body` succeeded.
void write_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body);

// ---- Middlebury .flo --------------------------------------------------------

inline constexpr float kFloMagic = 202021.25f;

void encode_flo(std::ostream& out, const FlowField& flow);
FlowField decode_flo(std::istream& in);
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);

// ---- Netpbm -----------------------------------------------------------------

/// 8-bit raster, row-major, `channels` interleaved samples per pixel (1 for PGM, 3 for PPM).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;

  std::uint8_t& at(int y, int x, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// P5 for one channel, P6 for three; maxval 255.
void encode_netpbm(std::ostream& out, const Raster& raster);
Raster decode_netpbm(std::istream& in);
void write_netpbm(const std::filesystem::path& path, const Raster& raster);
Raster read_netpbm(const std::filesystem::path& path);

/// round(255 x) of an image already clamped to [0, 1].
Raster quantize(const Image& unit_image);
/// Samples / 255.
Image to_unit_image(const Raster& gray);

}  // namespace evssl
