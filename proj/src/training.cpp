#include "evssl/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace evssl {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (temporal_start > unroll) throw ConfigError("S0 must not exceed S");
  if (bins < 2) throw ConfigError("bins must be at least 2");
  if (!(events_per_pixel > 0.0)) throw ConfigError("events_per_pixel must be positive");
  if (!(flow_scale > 0.0)) throw ConfigError("flow_scale must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  weights.validate();
}

void zero_grad(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->tensor.zero_grad();
}

double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  double squared = 0.0;
  for (const Parameter* p : params) {
    if (p->tensor.has_grad()) squared += p->tensor.grad().square().sum();
  }
  const double norm = std::sqrt(squared);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (Parameter* p : params) {
      if (!p->tensor.has_grad()) continue;
      // Gradients live on the leaf node; rescale through the accumulator.
      Eigen::ArrayXd scaled = p->tensor.grad() * scale;
      p->tensor.zero_grad();
      accumulate_grad(p->tensor, scaled);
    }
  }
  return norm;
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state, const TrainConfig& config) {
  for (const Parameter* p : params) {
    if (!p->tensor.has_grad()) throw std::logic_error("adam_step: parameter '" + p->name + "' has no gradient");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (Parameter* p : params) {
    const Eigen::ArrayXd& g = p->tensor.grad();
    auto [it, inserted] = state.moments.try_emplace(p->name);
    AdamMoments& m = it->second;
    if (inserted || m.first.size() != g.size()) {
      m.first = Eigen::ArrayXd::Zero(g.size());
      m.second = Eigen::ArrayXd::Zero(g.size());
    }
    m.first = config.beta1 * m.first + (1.0 - config.beta1) * g;
    m.second = config.beta2 * m.second + (1.0 - config.beta2) * g.square();
    p->tensor.mutable_values() -=
        config.lr * (m.first / correction1) / ((m.second / correction2).sqrt() + config.adam_epsilon);
  }
}

namespace {

void check_finite(const LossReport& report, std::uint64_t step, const char* who) {
  if (!std::isfinite(report.total)) {
    throw std::runtime_error(std::string(who) + ": non-finite loss at step " + std::to_string(step));
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

EventPartition prepare(const EventPartition& partition, const AugmentationRecord& record) {
  return normalize_timestamps(apply_augmentation(partition, record));
}

// One self-supervised FlowNet update; returns the (undetached) flow of the forward pass.
Tensor flow_update(FireFlowNet& net, AdamState& adam, const TrainConfig& config, const EventPartition& input,
                   const VoxelGrid& voxel, const EventMask& mask, TrainLog& log, const StepCallback& on_step) {
  auto params = net.parameters();
  Tensor flow = net.forward(voxel, mask);
  Loss loss = flow_total_loss(input, flow, config.weights);
  check_finite(loss.report, adam.step + 1, "train_flow");
  zero_grad(params);
  backward(loss.total);
  if (config.clip_gradients) clip_grad_norm(params, config.clip_norm);
  adam_step(params, adam, config);
  TrainStep step{adam.step, std::move(loss.report)};
  if (on_step) on_step(step);
  log.flow.push_back(std::move(step));
  return flow;
}

}  // namespace

TrainLog train_flow(const Dataset& dataset, const TrainConfig& config, FireFlowNet& net, AdamState& adam,
                    const StepCallback& on_step) {
  config.validate();
  TrainLog log;
  std::mt19937_64 rng(config.seed);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t s : epoch_order(dataset.size(), rng)) {
      const Sequence& sequence = dataset[s];
      // Pauses feed an all-zero input whose masked flow and loss are identically zero, so
      // they carry no learning signal for FlowNet and are not turned into steps here.
      const AugmentationRecord record = sample_augmentation(rng, config.augmentation);
      for (const EventPartition& raw : sequence.partitions) {
        EventPartition input = prepare(raw, record);
        if (input.empty()) continue;
        VoxelGrid voxel = build_voxel_grid(input, config.bins);
        flow_update(net, adam, config, input, voxel, event_mask(voxel), log, on_step);
      }
    }
  }
  return log;
}

FlowProvider ground_truth_flow_provider() {
  return [](const Sequence& sequence, std::size_t index, const EventPartition& input,
            const AugmentationRecord& record) {
    if (index >= sequence.gt_flow.size()) {
      throw std::invalid_argument("ground-truth flow provider: sequence has no flow for partition " +
                                  std::to_string(index));
    }
    FlowField flow = sequence.gt_flow[index];
    if (record.h_flip) {
      flow.u = -flow.u.rowwise().reverse().eval();
      flow.v = flow.v.rowwise().reverse().eval();
    }
    if (record.v_flip) {
      flow.u = flow.u.colwise().reverse().eval();
      flow.v = -flow.v.colwise().reverse().eval();
    }
    if (flow.height() != input.geometry.height || flow.width() != input.geometry.width) {
      throw ShapeError("ground-truth flow does not match the sensor geometry");
    }
    return flow_tensor(flow);
  };
}

TrainLog train_recon(const Dataset& dataset, const TrainConfig& config, ReconNet& net, AdamState& adam,
                     const FlowSource& source, const StepCallback& on_step) {
  config.validate();
  if (!source.joint && !source.provider) throw ConfigError("train_recon needs a flow source");
  if (source.joint && !source.joint_adam) throw ConfigError("joint FlowNet training needs an optimizer state");
  if (source.joint && source.joint->bins() != config.bins) throw ConfigError("FlowNet bin count mismatch");
  if (net.bins() != config.bins) throw ConfigError("ReconNet bin count mismatch");

  TrainLog log;
  std::mt19937_64 rng(config.seed);
  auto params = net.parameters();
  const std::size_t window = config.unroll + 1;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t s : epoch_order(dataset.size(), rng)) {
      const Sequence& sequence = dataset[s];
      const AugmentationRecord record = sample_augmentation(rng, config.augmentation);

      // Index of the partition feeding each step; npos marks an inserted pause.
      constexpr std::size_t kPause = static_cast<std::size_t>(-1);
      std::vector<std::size_t> schedule(sequence.partitions.size());
      std::iota(schedule.begin(), schedule.end(), 0);
      if (record.pause && !schedule.empty()) {
        const auto at = std::uniform_int_distribution<std::size_t>(0, schedule.size())(rng);
        schedule.insert(schedule.begin() + static_cast<std::ptrdiff_t>(at), kPause);
      }
      if (schedule.size() < window) {
        std::cerr << "warning: sequence " << s << " has " << schedule.size() << " steps, fewer than S + 1 = "
                  << window << "; skipped\n";
        ++log.skipped_sequences;
        continue;
      }

      const SensorGeometry geometry = sequence.partitions.front().geometry;
      HiddenState state = net.initial_state(geometry.height, geometry.width);
      Tensor previous(Shape{1, geometry.height, geometry.width}, 0.0);
      bool have_previous = false;
      std::vector<ReconStepTerms> steps;

      for (std::size_t index : schedule) {
        EventPartition input;
        input.geometry = geometry;
        VoxelGrid voxel = null_voxel_grid(geometry, config.bins);
        Tensor flow(Shape{2, geometry.height, geometry.width}, 0.0);
        if (index != kPause) {
          input = prepare(sequence.partitions[index], record);
          voxel = build_voxel_grid(input, config.bins);
          const EventMask mask = event_mask(voxel);
          if (source.joint) {
            flow = flow_update(*source.joint, *source.joint_adam, config, input, voxel, mask, log, {});
          } else {
            flow = source.provider(sequence, index, input, record);
          }
          Tensor keep = mask_tensor(mask);
          flow = detach(flow) * concat({keep, keep});
        }

        auto [brightness, next_state] = net.forward(voxel, state);
        ReconStepTerms terms;
        terms.photometric = photometric_loss(reference_increment(input, flow, config.weights),
                                             predicted_increment(previous, flow));
        if (have_previous) terms.temporal = temporal_loss(brightness, previous, flow);
        terms.tv = tv_loss(brightness);
        steps.push_back(std::move(terms));
        previous = brightness;
        have_previous = true;
        state = next_state;

        if (steps.size() == window) {
          Loss loss = recon_total_loss(steps, config.weights, config.unroll, config.temporal_start);
          check_finite(loss.report, adam.step + 1, "train_recon");
          zero_grad(params);
          backward(loss.total);
          if (config.clip_gradients) clip_grad_norm(params, config.clip_norm);
          adam_step(params, adam, config);
          TrainStep step{adam.step, std::move(loss.report)};
          if (on_step) on_step(step);
          log.recon.push_back(std::move(step));
          steps.clear();
          state = detach(state);
          previous = detach(previous);
        }
      }
    }
  }
  return log;
}

std::vector<Image> reconstruct_sequence(const ReconNet& net, const std::vector<EventPartition>& partitions) {
  std::vector<Image> frames;
  if (partitions.empty()) return frames;
  NoGradGuard no_grad;
  const SensorGeometry geometry = partitions.front().geometry;
  HiddenState state = net.initial_state(geometry.height, geometry.width);
  for (const EventPartition& raw : partitions) {
    EventPartition input = raw.normalized() ? raw : normalize_timestamps(raw);
    auto [brightness, next] = net.forward(build_voxel_grid(input, net.bins()), state);
    frames.push_back(brightness.image(0));
    state = next;
  }
  return frames;
}

}  // namespace evssl
