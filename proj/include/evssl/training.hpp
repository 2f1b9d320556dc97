#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "evssl/events.hpp"
#include "evssl/losses.hpp"
#include "evssl/networks.hpp"

namespace evssl {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 120;
  std::size_t unroll = 20;          // S
  std::size_t temporal_start = 10;  // S0
  LossWeights weights;
  int bins = 5;
  double events_per_pixel = 0.3;
  double flow_scale = 40.0;
  std::uint64_t seed = 0;
  AugmentationConfig augmentation;
  bool clip_gradients = false;
  double clip_norm = 100.0;

  void validate() const;
};

struct AdamMoments {
  Eigen::ArrayXd first;
  Eigen::ArrayXd second;
};

struct AdamState {
  std::map<std::string, AdamMoments> moments;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update on every parameter. Every parameter must carry a gradient.
void adam_step(const std::vector<Parameter*>& params, AdamState& state, const TrainConfig& config);

void zero_grad(const std::vector<Parameter*>& params);

/// Rescales all gradients so that their global L2 norm is at most `max_norm`; returns the norm
/// before clipping.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

/// Consecutive partitions of one recording; recurrent state is reset at its start.
struct Sequence {
  std::vector<EventPartition> partitions;
  std::vector<FlowField> gt_flow;  // optional, one per partition
};

using Dataset = std::vector<Sequence>;

struct TrainStep {
  std::uint64_t step = 0;
  LossReport report;
};

struct TrainLog {
  std::vector<TrainStep> flow;
  std::vector<TrainStep> recon;
  std::size_t skipped_sequences = 0;
};

using StepCallback = std::function<void(const TrainStep&)>;

/// Self-supervised FireFlowNet training, one optimizer step per partition.
TrainLog train_flow(const Dataset& dataset, const TrainConfig& config, FireFlowNet& net,
                    AdamState& adam, const StepCallback& on_step = {});

/// Flow for partition `index` of `sequence`, given the (augmented) network input.
/// The trainer detaches whatever is returned.
using FlowProvider = std::function<Tensor(const Sequence& sequence, std::size_t index,
                                          const EventPartition& input, const AugmentationRecord& record)>;

/// Source of the flow fed to the reconstruction losses: either a FireFlowNet trained jointly
/// (it takes its own optimizer step on every partition before ReconNet sees the flow) or a
/// fixed provider.
struct FlowSource {
  FireFlowNet* joint = nullptr;
  AdamState* joint_adam = nullptr;
  FlowProvider provider;
};

/// Ground-truth flow from Sequence::gt_flow, flipped with the augmentation. The trainer masks
/// every provided flow with the input's event mask.
FlowProvider ground_truth_flow_provider();

/// Unrolled ReconNet training. The recurrent state is reset at every sequence start and the
/// unrolled loss of S + 1 steps is backpropagated at once, after which the graph is truncated.
TrainLog train_recon(const Dataset& dataset, const TrainConfig& config, ReconNet& net, AdamState& adam,
                     const FlowSource& flow, const StepCallback& on_step = {});

/// Runs a trained ReconNet over a sequence and returns one log-brightness image per partition.
std::vector<Image> reconstruct_sequence(const ReconNet& net, const std::vector<EventPartition>& partitions);

// ---- checkpoints ------------------------------------------------------------

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string config;  // resolved `key = value` text
  std::uint64_t step = 0;
};

/// Snapshot of `params`, names prefixed with `prefix`.
void add_parameters(Checkpoint& checkpoint, const std::string& prefix, const std::vector<Parameter*>& params);

/// Copies values with `prefix` into `params`. Throws FormatError listing any checkpoint names
/// under the prefix that the network does not have, and on missing names or shape mismatches.
void load_parameters(const Checkpoint& checkpoint, const std::string& prefix,
                     const std::vector<Parameter*>& params);

bool has_prefix(const Checkpoint& checkpoint, const std::string& prefix);

// CKP1: "CKP1", u32 count, per tensor {u16 name length, name, u8 rank, u32 dims[rank], f64 data},
// then u64 length + config text. The step counter travels inside the text as `step = N`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
void encode_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::istream& in);

}  // namespace evssl
