#include "evssl/formats.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace evssl {

void write_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    try {
      body(out);
    } catch (...) {
      out.close();
      std::filesystem::remove(tmp);
      throw;
    }
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw FormatError("write failed: " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

namespace {

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (static_cast<std::size_t>(in.gcount()) != sizeof(T)) {
    throw FormatError(std::string("truncated file while reading ") + what);
  }
  return value;
}

}  // namespace

void encode_flo(std::ostream& out, const FlowField& flow) {
  put(out, kFloMagic);
  put(out, static_cast<std::int32_t>(flow.width()));
  put(out, static_cast<std::int32_t>(flow.height()));
  for (Eigen::Index y = 0; y < flow.height(); ++y) {
    for (Eigen::Index x = 0; x < flow.width(); ++x) {
      put(out, static_cast<float>(flow.u(y, x)));
      put(out, static_cast<float>(flow.v(y, x)));
    }
  }
}

FlowField decode_flo(std::istream& in) {
  if (take<float>(in, "flo magic") != kFloMagic) throw FormatError("not a .flo file (bad magic)");
  const auto w = take<std::int32_t>(in, "flo width");
  const auto h = take<std::int32_t>(in, "flo height");
  if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16)) {
    throw FormatError("implausible .flo size " + std::to_string(w) + "x" + std::to_string(h));
  }
  FlowField flow(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      flow.u(y, x) = take<float>(in, "flo data");
      flow.v(y, x) = take<float>(in, "flo data");
    }
  }
  return flow;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  write_atomic(path, [&](std::ostream& out) { encode_flo(out, flow); });
}

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return decode_flo(in);
}

void encode_netpbm(std::ostream& out, const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3) throw FormatError("netpbm needs 1 or 3 channels");
  if (raster.data.size() != static_cast<std::size_t>(raster.width) * raster.height * raster.channels) {
    throw FormatError("raster size does not match its dimensions");
  }
  out << (raster.channels == 1 ? "P5" : "P6") << '\n' << raster.width << ' ' << raster.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raster.data.data()), static_cast<std::streamsize>(raster.data.size()));
}

namespace {

// Header token reader honouring `#` comments.
int header_int(std::istream& in) {
  int c = in.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      break;
    }
    c = in.peek();
  }
  int value = -1;
  if (!(in >> value)) throw FormatError("malformed netpbm header");
  return value;
}

}  // namespace

Raster decode_netpbm(std::istream& in) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  Raster raster;
  if (in.gcount() == 2 && magic[0] == 'P' && magic[1] == '5') {
    raster.channels = 1;
  } else if (in.gcount() == 2 && magic[0] == 'P' && magic[1] == '6') {
    raster.channels = 3;
  } else {
    throw FormatError("not a binary PGM/PPM file");
  }
  raster.width = header_int(in);
  raster.height = header_int(in);
  const int maxval = header_int(in);
  if (raster.width <= 0 || raster.height <= 0) throw FormatError("netpbm image has no pixels");
  if (maxval != 255) throw FormatError("only maxval 255 is supported, got " + std::to_string(maxval));
  if (!std::isspace(in.get())) throw FormatError("malformed netpbm header");
  raster.data.resize(static_cast<std::size_t>(raster.width) * raster.height * raster.channels);
  in.read(reinterpret_cast<char*>(raster.data.data()), static_cast<std::streamsize>(raster.data.size()));
  if (static_cast<std::size_t>(in.gcount()) != raster.data.size()) throw FormatError("truncated netpbm data");
  return raster;
}

void write_netpbm(const std::filesystem::path& path, const Raster& raster) {
  write_atomic(path, [&](std::ostream& out) { encode_netpbm(out, raster); });
}

Raster read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return decode_netpbm(in);
}

Raster quantize(const Image& unit_image) {
  Raster raster{static_cast<int>(unit_image.cols()), static_cast<int>(unit_image.rows()), 1, {}};
  raster.data.resize(static_cast<std::size_t>(unit_image.size()));
  for (Eigen::Index y = 0; y < unit_image.rows(); ++y) {
    for (Eigen::Index x = 0; x < unit_image.cols(); ++x) {
      const double v = std::clamp(unit_image(y, x), 0.0, 1.0);
      raster.at(static_cast<int>(y), static_cast<int>(x)) = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  }
  return raster;
}

Image to_unit_image(const Raster& gray) {
  if (gray.channels != 1) throw FormatError("expected a grayscale raster");
  Image image(gray.height, gray.width);
  for (int y = 0; y < gray.height; ++y) {
    for (int x = 0; x < gray.width; ++x) image(y, x) = gray.at(y, x) / 255.0;
  }
  return image;
}

}  // namespace evssl
