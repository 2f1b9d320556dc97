#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace evssl {

struct ParseError : std::runtime_error {
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

struct BoundsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SensorGeometry {
  int width = 0;
  int height = 0;

  int pixels() const { return width * height; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  bool operator==(const SensorGeometry&) const = default;
};

/// Validates width, height >= 8.
void validate(const SensorGeometry& geometry);

struct Event {
  std::uint64_t t = 0;  // microseconds
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // +1 or -1

  bool operator==(const Event&) const = default;
};

struct EventStream {
  SensorGeometry geometry;
  std::vector<Event> events;
};

/// A fixed-count slice of a stream. `t_star` is empty until normalize_timestamps() runs.
struct EventPartition {
  std::vector<Event> events;
  SensorGeometry geometry;
  std::vector<double> t_star;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
  bool normalized() const { return t_star.size() == events.size(); }
  /// Duration between first and last event, seconds.
  double duration_seconds() const;
};

// ---- text / binary formats --------------------------------------------------

/// Lines of `t_seconds x y p` with p in {0,1}; '#' lines and blank lines are skipped.
EventStream parse_text_events(std::istream& in, const SensorGeometry& geometry);
EventStream read_text_events(const std::filesystem::path& path, const SensorGeometry& geometry);

// EVT1: "EVT1" u32 width, u32 height, u64 count, then {u64 t, u16 x, u16 y, u8 p, u8 pad}.
EventStream read_binary_events(const std::filesystem::path& path);
void write_binary_events(const std::filesystem::path& path, const SensorGeometry& geometry,
                         const std::vector<Event>& events);
EventStream decode_binary_events(std::istream& in);
void encode_binary_events(std::ostream& out, const SensorGeometry& geometry,
                          const std::vector<Event>& events);

// ---- partitioning -----------------------------------------------------------

/// round(density * width * height); throws ConfigError when that is below 2.
std::size_t events_per_pixel_count(const SensorGeometry& geometry, double density);

/// Consecutive, disjoint partitions of exactly `count` events. The trailing remainder is dropped.
std::vector<EventPartition> partition_by_count(const EventStream& stream, std::size_t count);

/// t*_i = (t_i - t_0) / (t_last - t_0); all zero when the partition has no time extent.
EventPartition normalize_timestamps(EventPartition partition);

// ---- augmentation -----------------------------------------------------------

struct AugmentationConfig {
  double h_flip_prob = 0.0;
  double v_flip_prob = 0.0;
  double polarity_flip_prob = 0.0;
  double pause_prob = 0.0;
};

struct AugmentationRecord {
  bool h_flip = false;
  bool v_flip = false;
  bool polarity_flip = false;
  /// Instructs the trainer to insert a forward pass with an all-zero voxel grid.
  bool pause = false;

  bool any() const { return h_flip || v_flip || polarity_flip || pause; }
};

AugmentationRecord sample_augmentation(std::mt19937_64& rng, const AugmentationConfig& config);
EventPartition apply_augmentation(EventPartition partition, const AugmentationRecord& record);

struct AugmentedPartition {
  EventPartition partition;
  AugmentationRecord record;
};
AugmentedPartition augment(EventPartition partition, std::mt19937_64& rng,
                           const AugmentationConfig& config);

}  // namespace evssl
