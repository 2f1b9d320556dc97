#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "evssl/training.hpp"

namespace evssl {

/// Everything a command needs, parsed from `key = value` text.
struct RunConfig {
  TrainConfig train;

  // paths
  std::string events;           // EVT1, or text events when the name ends in .txt
  std::string output_dir = ".";
  std::string checkpoint;       // model for infer, resume point for training
  std::string flow_checkpoint;  // FlowNet used by train-recon with flow_source = checkpoint
  std::string gt_flow_dir;
  std::string gt_frames_dir;
  std::string predictions_dir;

  // data
  int width = 64;   // geometry of text event files and of synthetic scenes
  int height = 64;
  std::size_t sequence_length = 0;  // partitions per training sequence, 0 = whole recording

  // synthetic scene
  std::string pattern = "checkerboard";  // checkerboard | blobs | image
  double period = 32.0;
  double amplitude = 1.0;
  int blob_count = 12;
  double blob_sigma = 4.0;
  std::string pattern_image;  // PGM, for pattern = image
  double vx = 20.0;
  double vy = 0.0;
  double contrast = 0.5;
  double duration = 1.0;
  double timestep = 0.0;  // 0 picks a safe step from the scene

  // train-recon
  std::string flow_source = "gt";  // gt | joint | checkpoint

  // infer
  bool color = false;

  /// Applies one `key = value` assignment. Throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  /// Fully resolved config, one `key = value` per line, readable by parse_config().
  std::string to_text() const;

  static const std::vector<std::string>& keys();
};

/// Parses `key = value` lines; blank lines and `#` comments are ignored.
RunConfig parse_config(std::istream& in, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Splits "key=value" for command-line overrides.
std::pair<std::string, std::string> split_assignment(const std::string& text);

}  // namespace evssl
