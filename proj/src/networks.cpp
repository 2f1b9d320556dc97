#include "evssl/networks.hpp"

#include <cmath>

namespace evssl {

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel)
    : weight{name + ".weight",
             Tensor::parameter({out_channels, in_channels, kernel, kernel},
                               Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(out_channels) * in_channels *
                                                    kernel * kernel))},
      bias{name + ".bias", Tensor::parameter({out_channels}, Eigen::ArrayXd::Zero(out_channels))},
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel) {}

Tensor Conv2d::operator()(const Tensor& input) const {
  return conv2d(input, weight.tensor, bias.tensor, 1, (kernel_ - 1) / 2);
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

ResidualBlock::ResidualBlock(const std::string& name, int channels)
    : conv1_(name + ".conv1", channels, channels, 3), conv2_(name + ".conv2", channels, channels, 3) {}

Tensor ResidualBlock::operator()(const Tensor& input) const {
  return relu(input + conv2_(relu(conv1_(input))));
}

void ResidualBlock::collect(std::vector<Parameter*>& out) {
  conv1_.collect(out);
  conv2_.collect(out);
}

ConvGRUCell::ConvGRUCell(const std::string& name, int input_channels, int hidden_channels)
    : hidden_channels_(hidden_channels),
      update_(name + ".update", input_channels + hidden_channels, hidden_channels, 3),
      reset_(name + ".reset", input_channels + hidden_channels, hidden_channels, 3),
      candidate_(name + ".candidate", input_channels + hidden_channels, hidden_channels, 3) {}

Tensor ConvGRUCell::operator()(const Tensor& input, const Tensor& hidden) const {
  if (hidden.rank() != 3 || hidden.dim(0) != hidden_channels_ || hidden.dim(1) != input.dim(1) ||
      hidden.dim(2) != input.dim(2)) {
    throw ShapeError("ConvGRU hidden state " + to_string(hidden.shape()) +
                     " does not match input " + to_string(input.shape()));
  }
  Tensor stacked = concat({hidden, input});
  Tensor z = sigmoid(update_(stacked));
  Tensor r = sigmoid(reset_(stacked));
  Tensor c = tanh(candidate_(concat({r * hidden, input})));
  return (1.0 - z) * hidden + z * c;
}

void ConvGRUCell::collect(std::vector<Parameter*>& out) {
  update_.collect(out);
  reset_.collect(out);
  candidate_.collect(out);
}

void init_parameters(const std::vector<Parameter*>& params, std::mt19937_64& rng) {
  for (Parameter* p : params) {
    Eigen::ArrayXd& values = p->tensor.mutable_values();
    const Shape& shape = p->tensor.shape();
    if (shape.size() != 4) {
      values.setZero();
      continue;
    }
    const double receptive = static_cast<double>(shape[2] * shape[3]);
    const double fan_in = static_cast<double>(shape[1]) * receptive;
    const double fan_out = static_cast<double>(shape[0]) * receptive;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = dist(rng);
  }
}

std::size_t parameter_count(const std::vector<Parameter*>& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += static_cast<std::size_t>(p->tensor.size());
  return n;
}

// ---- FireFlowNet ------------------------------------------------------------

FireFlowNet::FireFlowNet(int bins, double flow_scale)
    : bins_(bins),
      flow_scale_(flow_scale),
      e1_("E1", bins, 32, 3),
      e2_("E2", 32, 32, 3),
      e3_("E3", 32, 32, 3),
      r1_("R1", 32),
      r2_("R2", 32),
      pred_("pred", 32, 2, 1) {
  if (bins < 2) throw ConfigError("FireFlowNet needs at least 2 input bins");
  if (!(flow_scale > 0.0)) throw ConfigError("flow_scale must be positive");
}

Tensor FireFlowNet::forward(const VoxelGrid& voxel, const EventMask& mask) const {
  if (voxel.bins() != bins_) {
    throw ShapeError("FireFlowNet expects " + std::to_string(bins_) + " bins, got " +
                     std::to_string(voxel.bins()));
  }
  if (mask.rows() != voxel.height() || mask.cols() != voxel.width()) {
    throw ShapeError("FireFlowNet: mask does not match voxel grid");
  }
  Tensor x = relu(e1_(voxel.data));
  x = relu(e2_(x));
  x = relu(e3_(x));
  x = r2_(r1_(x));
  Tensor flow = tanh(pred_(x)) * flow_scale_;
  Tensor keep = mask_tensor(mask);
  return flow * concat({keep, keep});
}

std::vector<Parameter*> FireFlowNet::parameters() {
  std::vector<Parameter*> out;
  e1_.collect(out);
  e2_.collect(out);
  e3_.collect(out);
  r1_.collect(out);
  r2_.collect(out);
  pred_.collect(out);
  return out;
}

// ---- ReconNet ---------------------------------------------------------------

ReconNet::ReconNet(int bins)
    : bins_(bins),
      head_("head", bins, kChannels, 3),
      g1_("G1", kChannels, kChannels),
      g2_("G2", kChannels, kChannels),
      r1_("R1", kChannels),
      r2_("R2", kChannels),
      pred_("pred", kChannels, 1, 1) {
  if (bins < 2) throw ConfigError("ReconNet needs at least 2 input bins");
}

HiddenState ReconNet::initial_state(Eigen::Index height, Eigen::Index width) const {
  return {Tensor(Shape{kChannels, height, width}, 0.0), Tensor(Shape{kChannels, height, width}, 0.0)};
}

std::pair<Tensor, HiddenState> ReconNet::forward(const VoxelGrid& voxel, const HiddenState& state) const {
  if (voxel.bins() != bins_) {
    throw ShapeError("ReconNet expects " + std::to_string(bins_) + " bins, got " +
                     std::to_string(voxel.bins()));
  }
  Tensor x = relu(head_(voxel.data));
  Tensor h1 = g1_(x, state.first);
  Tensor h2 = g2_(h1, state.second);
  Tensor y = r2_(r1_(h2));
  return {pred_(y), HiddenState{h1, h2}};
}

std::vector<Parameter*> ReconNet::parameters() {
  std::vector<Parameter*> out;
  head_.collect(out);
  g1_.collect(out);
  g2_.collect(out);
  r1_.collect(out);
  r2_.collect(out);
  pred_.collect(out);
  return out;
}

HiddenState detach(const HiddenState& state) { return {detach(state.first), detach(state.second)}; }

}  // namespace evssl
