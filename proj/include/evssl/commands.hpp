#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "evssl/config.hpp"
#include "evssl/synth.hpp"

namespace evssl {

// Each command writes its resolved config to <output_dir>/config.txt next to its outputs.
// Validation problems surface as ConfigError / FormatError / ParseError / BoundsError.

/// events.evt1, gt/flow_NNNN.flo and gt/frame_NNNN.pgm, one per partition.
void cmd_synth(const RunConfig& config);
/// flownet.ckp and losses.csv.
void cmd_train_flow(const RunConfig& config);
/// reconnet.ckp and losses.csv (plus flow_losses.csv when FlowNet trains jointly).
void cmd_train_recon(const RunConfig& config);
/// flow_NNNN.flo (and .ppm when `color`) and/or frame_NNNN.pgm, depending on the checkpoint.
void cmd_infer(const RunConfig& config);
/// eval.csv with one row per partition and a final mean row.
void cmd_eval(const RunConfig& config);

SyntheticScene scene_from_config(const RunConfig& config);
EventStream load_events(const RunConfig& config);
std::vector<EventPartition> load_partitions(const RunConfig& config);

std::string indexed_name(const std::string& stem, std::size_t index, const std::string& extension);

}  // namespace evssl
