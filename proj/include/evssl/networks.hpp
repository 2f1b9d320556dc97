#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "evssl/geometry.hpp"
#include "evssl/tensor.hpp"

namespace evssl {

struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Square-kernel convolution with "same" zero padding at stride 1.
class Conv2d {
 public:
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel);

  Tensor operator()(const Tensor& input) const;
  void collect(std::vector<Parameter*>& out);

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int kernel() const { return kernel_; }

  Parameter weight;
  Parameter bias;

 private:
  int in_channels_;
  int out_channels_;
  int kernel_;
};

/// relu(x + conv2(relu(conv1(x))))
class ResidualBlock {
 public:
  ResidualBlock(const std::string& name, int channels);
  Tensor operator()(const Tensor& input) const;
  void collect(std::vector<Parameter*>& out);

 private:
  Conv2d conv1_;
  Conv2d conv2_;
};

/// Convolutional GRU with 3x3 gates over [h, x]:
///   z = sigmoid(Wz * [h, x]),  r = sigmoid(Wr * [h, x])
///   c = tanh(Wc * [r . h, x]),  h' = (1 - z) . h + z . c
class ConvGRUCell {
 public:
  ConvGRUCell(const std::string& name, int input_channels, int hidden_channels);
  Tensor operator()(const Tensor& input, const Tensor& hidden) const;
  void collect(std::vector<Parameter*>& out);
  int hidden_channels() const { return hidden_channels_; }

 private:
  int hidden_channels_;
  Conv2d update_;
  Conv2d reset_;
  Conv2d candidate_;
};

/// Glorot-uniform weights, zero biases, drawn in parameter order.
void init_parameters(const std::vector<Parameter*>& params, std::mt19937_64& rng);

std::size_t parameter_count(const std::vector<Parameter*>& params);

/// Three single-strided 3x3 encoders, two residual blocks and a 1x1 tanh prediction layer,
/// all at 32 channels. Output flow is zero wherever the input has no events.
class FireFlowNet {
 public:
  explicit FireFlowNet(int bins = 5, double flow_scale = 40.0);

  Tensor forward(const VoxelGrid& voxel, const EventMask& mask) const;
  Tensor forward(const VoxelGrid& voxel) const { return forward(voxel, event_mask(voxel)); }

  std::vector<Parameter*> parameters();
  void init(std::mt19937_64& rng) { init_parameters(parameters(), rng); }

  int bins() const { return bins_; }
  double flow_scale() const { return flow_scale_; }

 private:
  int bins_;
  double flow_scale_;
  Conv2d e1_, e2_, e3_;
  ResidualBlock r1_, r2_;
  Conv2d pred_;
};

struct HiddenState {
  Tensor first;
  Tensor second;
};

/// FireNet-style recurrent reconstruction network: a 3x3 head, two ConvGRU layers, two
/// residual blocks and a linear 1x1 prediction layer, all at 16 channels. The output is an
/// unbounded log-brightness image of shape 1 x H x W.
class ReconNet {
 public:
  explicit ReconNet(int bins = 5);

  HiddenState initial_state(Eigen::Index height, Eigen::Index width) const;
  std::pair<Tensor, HiddenState> forward(const VoxelGrid& voxel, const HiddenState& state) const;

  std::vector<Parameter*> parameters();
  void init(std::mt19937_64& rng) { init_parameters(parameters(), rng); }

  int bins() const { return bins_; }
  static constexpr int kChannels = 16;

 private:
  int bins_;
  Conv2d head_;
  ConvGRUCell g1_, g2_;
  ResidualBlock r1_, r2_;
  Conv2d pred_;
};

/// Detaches both recurrent states (truncation point for backpropagation through time).
HiddenState detach(const HiddenState& state);

}  // namespace evssl
