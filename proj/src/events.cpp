#include "evssl/events.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace evssl {

static_assert(std::endian::native == std::endian::little, "EVT1 I/O assumes a little-endian host");

void validate(const SensorGeometry& geometry) {
  if (geometry.width < 8 || geometry.height < 8) {
    throw ConfigError("sensor geometry must be at least 8x8, got " +
                      std::to_string(geometry.width) + "x" + std::to_string(geometry.height));
  }
}

double EventPartition::duration_seconds() const {
  if (events.size() < 2) return 0.0;
  return static_cast<double>(events.back().t - events.front().t) * 1e-6;
}

namespace {

template <typename T>
bool parse_number(std::string_view token, T& value) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return static_cast<std::size_t>(in.gcount()) == sizeof(T);
}

}  // namespace

EventStream parse_text_events(std::istream& in, const SensorGeometry& geometry) {
  EventStream stream{geometry, {}};
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    auto tokens = split_whitespace(line);
    if (tokens.empty() || tokens.front().front() == '#') continue;
    if (tokens.size() != 4) throw ParseError(line_number, "expected `t x y p`, got " + line);

    double seconds = 0.0;
    long x = 0, y = 0, p = 0;
    if (!parse_number(tokens[0], seconds) || !std::isfinite(seconds) || seconds < 0.0) {
      throw ParseError(line_number, "bad timestamp '" + std::string(tokens[0]) + "'");
    }
    if (!parse_number(tokens[1], x) || !parse_number(tokens[2], y)) {
      throw ParseError(line_number, "bad pixel coordinate");
    }
    if (!parse_number(tokens[3], p) || (p != 0 && p != 1)) {
      throw ParseError(line_number, "polarity must be 0 or 1");
    }
    if (!geometry.contains(static_cast<int>(std::clamp(x, -1L, 70000L)),
                           static_cast<int>(std::clamp(y, -1L, 70000L)))) {
      throw BoundsError("line " + std::to_string(line_number) + ": pixel (" + std::to_string(x) +
                        ", " + std::to_string(y) + ") outside " + std::to_string(geometry.width) +
                        "x" + std::to_string(geometry.height));
    }
    Event e;
    e.t = static_cast<std::uint64_t>(std::llround(seconds * 1e6));
    e.x = static_cast<std::uint16_t>(x);
    e.y = static_cast<std::uint16_t>(y);
    e.p = p == 1 ? 1 : -1;
    stream.events.push_back(e);
  }
  return stream;
}

EventStream read_text_events(const std::filesystem::path& path, const SensorGeometry& geometry) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return parse_text_events(in, geometry);
}

void encode_binary_events(std::ostream& out, const SensorGeometry& geometry,
                          const std::vector<Event>& events) {
  out.write("EVT1", 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(geometry.width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(geometry.height));
  put<std::uint64_t>(out, events.size());
  for (const Event& e : events) {
    put<std::uint64_t>(out, e.t);
    put<std::uint16_t>(out, e.x);
    put<std::uint16_t>(out, e.y);
    put<std::uint8_t>(out, e.p > 0 ? 1 : 0);
    put<std::uint8_t>(out, 0);
  }
}

EventStream decode_binary_events(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() != 4 || std::memcmp(magic.data(), "EVT1", 4) != 0) {
    throw FormatError("not an EVT1 file (bad magic)");
  }
  std::uint32_t width = 0, height = 0;
  std::uint64_t count = 0;
  if (!get(in, width) || !get(in, height) || !get(in, count)) {
    throw FormatError("truncated EVT1 header");
  }
  EventStream stream;
  stream.geometry = {static_cast<int>(width), static_cast<int>(height)};
  stream.events.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 24)));
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    std::uint8_t p = 0, pad = 0;
    if (!get(in, e.t) || !get(in, e.x) || !get(in, e.y) || !get(in, p) || !get(in, pad)) {
      throw FormatError("truncated EVT1 record " + std::to_string(i) + " of " +
                        std::to_string(count));
    }
    if (p > 1) throw FormatError("bad polarity byte in record " + std::to_string(i));
    if (!stream.geometry.contains(e.x, e.y)) {
      throw BoundsError("EVT1 record " + std::to_string(i) + " outside sensor geometry");
    }
    e.p = p == 1 ? 1 : -1;
    stream.events.push_back(e);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("EVT1 count mismatch: trailing bytes after " + std::to_string(count) +
                      " records");
  }
  return stream;
}

EventStream read_binary_events(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return decode_binary_events(in);
}

void write_binary_events(const std::filesystem::path& path, const SensorGeometry& geometry,
                         const std::vector<Event>& events) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  encode_binary_events(out, geometry, events);
  if (!out) throw FormatError("write failed: " + path.string());
}

std::size_t events_per_pixel_count(const SensorGeometry& geometry, double density) {
  if (!(density > 0.0)) throw ConfigError("events_per_pixel must be positive");
  const double n = std::round(density * geometry.width * geometry.height);
  if (n < 2.0) {
    throw ConfigError("events_per_pixel " + std::to_string(density) + " gives " +
                      std::to_string(static_cast<long long>(n)) +
                      " events per partition; at least 2 are required");
  }
  return static_cast<std::size_t>(n);
}

std::vector<EventPartition> partition_by_count(const EventStream& stream, std::size_t count) {
  if (count < 2) throw ConfigError("partition size must be at least 2");
  if (!std::is_sorted(stream.events.begin(), stream.events.end(),
                      [](const Event& a, const Event& b) { return a.t < b.t; })) {
    throw FormatError("event stream is not sorted by timestamp");
  }
  std::vector<EventPartition> partitions;
  const std::size_t full = stream.events.size() / count;
  partitions.reserve(full);
  for (std::size_t k = 0; k < full; ++k) {
    EventPartition part;
    part.geometry = stream.geometry;
    part.events.assign(stream.events.begin() + static_cast<std::ptrdiff_t>(k * count),
                       stream.events.begin() + static_cast<std::ptrdiff_t>((k + 1) * count));
    partitions.push_back(std::move(part));
  }
  return partitions;
}

EventPartition normalize_timestamps(EventPartition partition) {
  auto& events = partition.events;
  partition.t_star.assign(events.size(), 0.0);
  if (events.empty()) return partition;
  const std::uint64_t t0 = events.front().t;
  const std::uint64_t t1 = events.back().t;
  if (t1 == t0) return partition;
  const double span = static_cast<double>(t1 - t0);
  for (std::size_t i = 0; i < events.size(); ++i) {
    partition.t_star[i] = static_cast<double>(events[i].t - t0) / span;
  }
  return partition;
}

AugmentationRecord sample_augmentation(std::mt19937_64& rng, const AugmentationConfig& config) {
  auto fire = [&rng](double prob) {
    if (prob < 0.0 || prob > 1.0) throw ConfigError("augmentation probability outside [0,1]");
    // Draw unconditionally so the RNG stream does not depend on which probabilities are zero.
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return u < prob;
  };
  AugmentationRecord record;
  record.h_flip = fire(config.h_flip_prob);
  record.v_flip = fire(config.v_flip_prob);
  record.polarity_flip = fire(config.polarity_flip_prob);
  record.pause = fire(config.pause_prob);
  return record;
}

EventPartition apply_augmentation(EventPartition partition, const AugmentationRecord& record) {
  const auto& g = partition.geometry;
  for (Event& e : partition.events) {
    if (record.h_flip) e.x = static_cast<std::uint16_t>(g.width - 1 - e.x);
    if (record.v_flip) e.y = static_cast<std::uint16_t>(g.height - 1 - e.y);
    if (record.polarity_flip) e.p = static_cast<std::int8_t>(-e.p);
  }
  return partition;
}

AugmentedPartition augment(EventPartition partition, std::mt19937_64& rng,
                           const AugmentationConfig& config) {
  AugmentationRecord record = sample_augmentation(rng, config);
  return {apply_augmentation(std::move(partition), record), record};
}

}  // namespace evssl
