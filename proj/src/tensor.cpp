#include "evssl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace evssl {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Eigen::Index element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1}, std::multiplies<>());
}

void detail::Node::accumulate(const Eigen::ArrayXd& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, double fill) : Tensor(shape, Eigen::ArrayXd::Constant(element_count(shape), fill)) {}

Tensor::Tensor(Shape shape, Eigen::ArrayXd values) : node_(std::make_shared<detail::Node>()) {
  if (values.size() != element_count(shape)) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + to_string(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, Eigen::ArrayXd::Constant(1, value)); }

Tensor Tensor::parameter(Shape shape, Eigen::ArrayXd values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::from_image(const RowArrayXXd& image) {
  Eigen::ArrayXd values = Eigen::Map<const Eigen::ArrayXd>(image.data(), image.size());
  return Tensor(Shape{1, image.rows(), image.cols()}, std::move(values));
}

const Shape& Tensor::shape() const { return node_->shape; }

Eigen::Index Tensor::dim(std::size_t axis) const {
  if (axis >= shape().size()) throw ShapeError("axis out of range for shape " + to_string(shape()));
  return shape()[axis];
}

Eigen::Index Tensor::size() const { return node_->value.size(); }

const Eigen::ArrayXd& Tensor::values() const { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

Eigen::Map<const RowArrayXXd> Tensor::channel(Eigen::Index c) const {
  if (rank() != 3) throw ShapeError("channel() needs a C x H x W tensor, got " + to_string(shape()));
  const Eigen::Index h = shape()[1], w = shape()[2];
  return Eigen::Map<const RowArrayXXd>(node_->value.data() + c * h * w, h, w);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

const Eigen::ArrayXd& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.resize(0); }

Eigen::ArrayXd& Tensor::mutable_values() {
  if (!node_->leaf) throw std::logic_error("only leaf tensors can be updated in place");
  return node_->value;
}

Tensor Tensor::reshape(Shape new_shape) const {
  if (element_count(new_shape) != size()) {
    throw ShapeError("cannot reshape " + to_string(shape()) + " to " + to_string(new_shape));
  }
  Tensor self = *this;
  return make_op(std::move(new_shape), values(), {self},
                 [self](const Eigen::ArrayXd& g) { accumulate_grad(self, g); });
}

// ---- graph ------------------------------------------------------------------

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor make_op(Shape shape, Eigen::ArrayXd value, std::vector<Tensor> inputs,
               std::function<void(const Eigen::ArrayXd&)> backward_fn) {
  Tensor out(std::move(shape), std::move(value));
  const bool needs_grad = g_grad_enabled &&
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (needs_grad) {
    auto& node = *out.node_;
    node.requires_grad = true;
    node.leaf = false;
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) node.parents.push_back(t.node_);
    }
    node.backward = std::move(backward_fn);
  }
  return out;
}

void accumulate_grad(const Tensor& input, const Eigen::ArrayXd& g) {
  if (input.requires_grad()) input.node()->accumulate(g);
}

void backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw ShapeError("backward() needs a scalar root, got " +
                     (root.defined() ? to_string(root.shape()) : std::string("undefined")));
  }
  auto root_node = root.node();
  if (root_node->consumed) throw std::logic_error("backward() called twice on the same graph");
  if (!root_node->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root_node.get(), 0}};
  visited.insert(root_node.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->consumed) {
        throw std::logic_error("backward() reached a graph consumed by an earlier call");
      }
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root_node->grad = Eigen::ArrayXd::Ones(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->leaf || node->grad.size() == 0) continue;
    node->backward(node->grad);
  }
  for (detail::Node* node : order) {
    if (node->leaf) continue;
    node->grad.resize(0);
    node->backward = nullptr;
    node->parents.clear();
    node->consumed = true;
  }
}

Tensor detach(const Tensor& t) { return Tensor(t.shape(), t.values()); }

// ---- elementwise ------------------------------------------------------------

namespace {

enum class Broadcast { None, ScalarA, ScalarB };

Broadcast check_binary(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::None;
  if (a.rank() == 0) return Broadcast::ScalarA;
  if (b.rank() == 0) return Broadcast::ScalarB;
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                   to_string(b.shape()));
}

Eigen::ArrayXd expand(const Tensor& t, Eigen::Index n) {
  if (t.size() == n) return t.values();
  return Eigen::ArrayXd::Constant(n, t.item());
}

// Reduces a full-size gradient onto `t`'s shape (sums when `t` was a broadcast scalar).
Eigen::ArrayXd fold(const Tensor& t, const Eigen::ArrayXd& g) {
  if (t.size() == g.size()) return g;
  return Eigen::ArrayXd::Constant(1, g.sum());
}

template <typename Forward, typename Backward>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Forward forward,
              Backward backward_rule) {
  const Broadcast bc = check_binary(a, b, name);
  const Shape& shape = bc == Broadcast::ScalarA ? b.shape() : a.shape();
  const Eigen::Index n = element_count(shape);
  Eigen::ArrayXd av = expand(a, n);
  Eigen::ArrayXd bv = expand(b, n);
  Eigen::ArrayXd out = forward(av, bv);
  return make_op(shape, std::move(out), {a, b},
                 [a, b, av = std::move(av), bv = std::move(bv), backward_rule](const Eigen::ArrayXd& g) {
                   Eigen::ArrayXd ga, gb;
                   backward_rule(g, av, bv, a.requires_grad() ? &ga : nullptr,
                                 b.requires_grad() ? &gb : nullptr);
                   if (a.requires_grad()) accumulate_grad(a, fold(a, ga));
                   if (b.requires_grad()) accumulate_grad(b, fold(b, gb));
                 });
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& a, Forward forward, Derivative derivative) {
  Eigen::ArrayXd out = forward(a.values());
  if (!a.requires_grad() || !grad_enabled()) return Tensor(a.shape(), std::move(out));
  Eigen::ArrayXd dydx = derivative(a.values(), out);
  return make_op(a.shape(), std::move(out), {a},
                 [a, dydx = std::move(dydx)](const Eigen::ArrayXd& g) { accumulate_grad(a, g * dydx); });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](const auto& x, const auto& y) -> Eigen::ArrayXd { return x + y; },
      [](const Eigen::ArrayXd& g, const auto&, const auto&, Eigen::ArrayXd* ga, Eigen::ArrayXd* gb) {
        if (ga) *ga = g;
        if (gb) *gb = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](const auto& x, const auto& y) -> Eigen::ArrayXd { return x - y; },
      [](const Eigen::ArrayXd& g, const auto&, const auto&, Eigen::ArrayXd* ga, Eigen::ArrayXd* gb) {
        if (ga) *ga = g;
        if (gb) *gb = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](const auto& x, const auto& y) -> Eigen::ArrayXd { return x * y; },
      [](const Eigen::ArrayXd& g, const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, Eigen::ArrayXd* ga,
         Eigen::ArrayXd* gb) {
        if (ga) *ga = g * y;
        if (gb) *gb = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](const auto& x, const auto& y) -> Eigen::ArrayXd { return x / y; },
      [](const Eigen::ArrayXd& g, const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, Eigen::ArrayXd* ga,
         Eigen::ArrayXd* gb) {
        if (ga) *ga = g / y;
        if (gb) *gb = -g * x / y.square();
      });
}

Tensor add(const Tensor& a, double b) {
  return unary(
      a, [b](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x + b; },
      [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd {
        return Eigen::ArrayXd::Ones(x.size());
      });
}

Tensor mul(const Tensor& a, double b) {
  return unary(
      a, [b](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x * b; },
      [b](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd {
        return Eigen::ArrayXd::Constant(x.size(), b);
      });
}

Tensor neg(const Tensor& a) { return mul(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      a, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.exp(); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) -> Eigen::ArrayXd { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.log(); },
      [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd { return x.inverse(); });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.abs(); },
      [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd { return x.sign(); });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.square(); },
      [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.sqrt(); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) -> Eigen::ArrayXd { return 0.5 / y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.max(0.0); },
      [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd {
        return (x > 0.0).cast<double>();
      });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.tanh(); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) -> Eigen::ArrayXd { return 1.0 - y.square(); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return 1.0 / (1.0 + (-x).exp()); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) -> Eigen::ArrayXd { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      a, [lo, hi](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.max(lo).min(hi); },
      [lo, hi](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd {
        return ((x >= lo) && (x <= hi)).cast<double>();
      });
}

// ---- structure --------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw ShapeError("concat needs rank >= 1");
  Eigen::Index rows = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat: incompatible shapes " + to_string(shape) + " and " + to_string(p.shape()));
    }
    rows += p.shape()[0];
  }
  shape[0] = rows;
  Eigen::ArrayXd value(element_count(shape));
  Eigen::Index offset = 0;
  for (const Tensor& p : parts) {
    value.segment(offset, p.size()) = p.values();
    offset += p.size();
  }
  return make_op(shape, std::move(value), parts, [parts](const Eigen::ArrayXd& g) {
    Eigen::Index off = 0;
    for (const Tensor& p : parts) {
      if (p.requires_grad()) accumulate_grad(p, g.segment(off, p.size()));
      off += p.size();
    }
  });
}

Tensor slice(const Tensor& t, Eigen::Index begin, Eigen::Index end) {
  if (t.rank() == 0 || begin < 0 || end > t.shape()[0] || begin >= end) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     to_string(t.shape()));
  }
  Shape shape = t.shape();
  const Eigen::Index stride = t.size() / shape[0];
  shape[0] = end - begin;
  Eigen::ArrayXd value = t.values().segment(begin * stride, (end - begin) * stride);
  return make_op(shape, std::move(value), {t}, [t, begin, stride](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd full = Eigen::ArrayXd::Zero(t.size());
    full.segment(begin * stride, g.size()) = g;
    accumulate_grad(t, full);
  });
}

Tensor select_columns(const Tensor& t, const std::vector<Eigen::Index>& index) {
  if (t.rank() != 2) throw ShapeError("select_columns needs rank 2, got " + to_string(t.shape()));
  const Eigen::Index rows = t.shape()[0], cols = t.shape()[1];
  const auto m = static_cast<Eigen::Index>(index.size());
  Eigen::ArrayXd value(rows * m);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::Index c = index[static_cast<std::size_t>(j)];
      if (c < 0 || c >= cols) throw ShapeError("select_columns: index out of range");
      value[r * m + j] = t.values()[r * cols + c];
    }
  }
  return make_op(Shape{rows, m}, std::move(value), {t}, [t, index, rows, cols, m](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd full = Eigen::ArrayXd::Zero(t.size());
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index j = 0; j < m; ++j) full[r * cols + index[static_cast<std::size_t>(j)]] += g[r * m + j];
    }
    accumulate_grad(t, full);
  });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& t) {
  return make_op(Shape{}, Eigen::ArrayXd::Constant(1, t.values().sum()), {t},
                 [t](const Eigen::ArrayXd& g) { accumulate_grad(t, Eigen::ArrayXd::Constant(t.size(), g[0])); });
}

Tensor mean(const Tensor& t) {
  if (t.size() == 0) throw ShapeError("mean of an empty tensor");
  const double n = static_cast<double>(t.size());
  return make_op(Shape{}, Eigen::ArrayXd::Constant(1, t.values().sum() / n), {t},
                 [t, n](const Eigen::ArrayXd& g) {
                   accumulate_grad(t, Eigen::ArrayXd::Constant(t.size(), g[0] / n));
                 });
}

Tensor sum_of_squares(const Tensor& t) {
  return make_op(Shape{}, Eigen::ArrayXd::Constant(1, t.values().square().sum()), {t},
                 [t](const Eigen::ArrayXd& g) { accumulate_grad(t, 2.0 * g[0] * t.values()); });
}

Tensor masked_sum(const Tensor& t, const Eigen::ArrayXd& mask) {
  if (mask.size() != t.size()) throw ShapeError("masked_sum: mask size mismatch");
  return make_op(Shape{}, Eigen::ArrayXd::Constant(1, (t.values() * mask).sum()), {t},
                 [t, mask](const Eigen::ArrayXd& g) { accumulate_grad(t, g[0] * mask); });
}

Tensor masked_mean(const Tensor& t, const Eigen::ArrayXd& mask) {
  if (mask.size() != t.size()) throw ShapeError("masked_mean: mask size mismatch");
  const double n = mask.sum();
  if (!(n > 0.0)) throw std::domain_error("masked_mean: mask selects no elements");
  return make_op(Shape{}, Eigen::ArrayXd::Constant(1, (t.values() * mask).sum() / n), {t},
                 [t, mask, n](const Eigen::ArrayXd& g) { accumulate_grad(t, (g[0] / n) * mask); });
}

// ---- convolution ------------------------------------------------------------

namespace {

struct ConvGeometry {
  Eigen::Index channels, height, width, kernel, stride, padding, out_height, out_width;
  bool pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
};

RowMatrixXd im2col(const double* input, const ConvGeometry& g) {
  const Eigen::Index out_size = g.out_height * g.out_width;
  RowMatrixXd cols(g.channels * g.kernel * g.kernel, out_size);
  for (Eigen::Index c = 0; c < g.channels; ++c) {
    const double* plane = input + c * g.height * g.width;
    for (Eigen::Index ky = 0; ky < g.kernel; ++ky) {
      for (Eigen::Index kx = 0; kx < g.kernel; ++kx) {
        double* row = cols.data() + ((c * g.kernel + ky) * g.kernel + kx) * out_size;
        for (Eigen::Index oy = 0; oy < g.out_height; ++oy) {
          const Eigen::Index iy = oy * g.stride - g.padding + ky;
          double* dst = row + oy * g.out_width;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_width, 0.0);
            continue;
          }
          const double* src = plane + iy * g.width;
          for (Eigen::Index ox = 0; ox < g.out_width; ++ox) {
            const Eigen::Index ix = ox * g.stride - g.padding + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const RowMatrixXd& cols, const ConvGeometry& g, double* input_grad) {
  const Eigen::Index out_size = g.out_height * g.out_width;
  for (Eigen::Index c = 0; c < g.channels; ++c) {
    double* plane = input_grad + c * g.height * g.width;
    for (Eigen::Index ky = 0; ky < g.kernel; ++ky) {
      for (Eigen::Index kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols.data() + ((c * g.kernel + ky) * g.kernel + kx) * out_size;
        for (Eigen::Index oy = 0; oy < g.out_height; ++oy) {
          const Eigen::Index iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          const double* src = row + oy * g.out_width;
          double* dst = plane + iy * g.width;
          for (Eigen::Index ox = 0; ox < g.out_width; ++ox) {
            const Eigen::Index ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (input.rank() != 3 || weight.rank() != 4) {
    throw ShapeError("conv2d: expected C x H x W input and Cout x Cin x k x k weight, got " +
                     to_string(input.shape()) + " and " + to_string(weight.shape()));
  }
  const Eigen::Index cout = weight.shape()[0];
  const Eigen::Index k = weight.shape()[2];
  if (weight.shape()[1] != input.shape()[0]) {
    throw ShapeError("conv2d: input has " + std::to_string(input.shape()[0]) +
                     " channels, weight expects " + std::to_string(weight.shape()[1]));
  }
  if (weight.shape()[3] != k || (k != 1 && k != 3 && k != 5)) {
    throw ShapeError("conv2d: kernel must be square 1x1, 3x3 or 5x5");
  }
  if (bias.size() != cout) throw ShapeError("conv2d: bias size mismatch");
  if (stride < 1) throw ShapeError("conv2d: stride must be positive");
  if (padding < 0) padding = static_cast<int>((k - 1) / 2);

  ConvGeometry g{input.shape()[0], input.shape()[1], input.shape()[2], k, stride, padding, 0, 0};
  g.out_height = (g.height + 2 * padding - k) / stride + 1;
  g.out_width = (g.width + 2 * padding - k) / stride + 1;
  if (g.out_height <= 0 || g.out_width <= 0) throw ShapeError("conv2d: input smaller than kernel");
  const Eigen::Index out_size = g.out_height * g.out_width;
  const Eigen::Index patch = g.channels * k * k;

  Eigen::Map<const RowMatrixXd> wmat(weight.values().data(), cout, patch);
  Eigen::ArrayXd out_values(cout * out_size);
  Eigen::Map<RowMatrixXd> out(out_values.data(), cout, out_size);
  if (g.pointwise()) {
    out.noalias() = wmat * Eigen::Map<const RowMatrixXd>(input.values().data(), patch, out_size);
  } else {
    out.noalias() = wmat * im2col(input.values().data(), g);
  }
  out.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.values().data(), cout);

  return make_op(Shape{cout, g.out_height, g.out_width}, std::move(out_values), {input, weight, bias},
                 [input, weight, bias, g, cout, out_size, patch](const Eigen::ArrayXd& grad_values) {
                   Eigen::Map<const RowMatrixXd> gout(grad_values.data(), cout, out_size);
                   Eigen::Map<const RowMatrixXd> w(weight.values().data(), cout, patch);
                   if (bias.requires_grad()) {
                     Eigen::ArrayXd gb = gout.rowwise().sum().array();
                     accumulate_grad(bias, gb);
                   }
                   if (weight.requires_grad()) {
                     Eigen::ArrayXd gw(cout * patch);
                     Eigen::Map<RowMatrixXd> gwm(gw.data(), cout, patch);
                     if (g.pointwise()) {
                       gwm.noalias() = gout * Eigen::Map<const RowMatrixXd>(input.values().data(), patch, out_size).transpose();
                     } else {
                       gwm.noalias() = gout * im2col(input.values().data(), g).transpose();
                     }
                     accumulate_grad(weight, gw);
                   }
                   if (input.requires_grad()) {
                     Eigen::ArrayXd gi = Eigen::ArrayXd::Zero(input.size());
                     if (g.pointwise()) {
                       Eigen::Map<RowMatrixXd>(gi.data(), patch, out_size).noalias() = w.transpose() * gout;
                     } else {
                       RowMatrixXd gcols = w.transpose() * gout;
                       col2im(gcols, g, gi.data());
                     }
                     accumulate_grad(input, gi);
                   }
                 });
}

// ---- bilinear sampling / splatting -------------------------------------------

Tensor bilinear_sample(const Tensor& image, const Tensor& grid) {
  if (image.rank() != 3 || grid.rank() != 3 || grid.shape()[0] != 2) {
    throw ShapeError("bilinear_sample: expected C x H x W image and 2 x H' x W' grid, got " +
                     to_string(image.shape()) + " and " + to_string(grid.shape()));
  }
  const Eigen::Index channels = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  const Eigen::Index oh = grid.shape()[1], ow = grid.shape()[2], n = oh * ow;
  const double* gx = grid.values().data();
  const double* gy = gx + n;
  const double* img = image.values().data();

  struct Tap {
    Eigen::Index i00, i01, i10, i11;
    double wx, wy;
    bool inside_x, inside_y;
  };
  std::vector<Tap> taps(static_cast<std::size_t>(n));
  for (Eigen::Index p = 0; p < n; ++p) {
    if (!std::isfinite(gx[p]) || !std::isfinite(gy[p])) {
      throw std::domain_error("bilinear_sample: non-finite sampling coordinate");
    }
    const double cx = std::clamp(gx[p], 0.0, static_cast<double>(w - 1));
    const double cy = std::clamp(gy[p], 0.0, static_cast<double>(h - 1));
    const auto x0 = static_cast<Eigen::Index>(std::floor(cx));
    const auto y0 = static_cast<Eigen::Index>(std::floor(cy));
    const Eigen::Index x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    taps[static_cast<std::size_t>(p)] = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1,
                                         cx - static_cast<double>(x0), cy - static_cast<double>(y0),
                                         gx[p] >= 0.0 && gx[p] <= static_cast<double>(w - 1),
                                         gy[p] >= 0.0 && gy[p] <= static_cast<double>(h - 1)};
  }

  Eigen::ArrayXd out(channels * n);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const double* plane = img + c * h * w;
    for (Eigen::Index p = 0; p < n; ++p) {
      const Tap& t = taps[static_cast<std::size_t>(p)];
      out[c * n + p] = (1 - t.wy) * ((1 - t.wx) * plane[t.i00] + t.wx * plane[t.i01]) +
                       t.wy * ((1 - t.wx) * plane[t.i10] + t.wx * plane[t.i11]);
    }
  }

  return make_op(Shape{channels, oh, ow}, std::move(out), {image, grid},
                 [image, grid, taps = std::move(taps), channels, h, w, n](const Eigen::ArrayXd& g) {
                   if (image.requires_grad()) {
                     Eigen::ArrayXd gi = Eigen::ArrayXd::Zero(image.size());
                     for (Eigen::Index c = 0; c < channels; ++c) {
                       double* plane = gi.data() + c * h * w;
                       for (Eigen::Index p = 0; p < n; ++p) {
                         const Tap& t = taps[static_cast<std::size_t>(p)];
                         const double gp = g[c * n + p];
                         plane[t.i00] += gp * (1 - t.wx) * (1 - t.wy);
                         plane[t.i01] += gp * t.wx * (1 - t.wy);
                         plane[t.i10] += gp * (1 - t.wx) * t.wy;
                         plane[t.i11] += gp * t.wx * t.wy;
                       }
                     }
                     accumulate_grad(image, gi);
                   }
                   if (grid.requires_grad()) {
                     Eigen::ArrayXd gg = Eigen::ArrayXd::Zero(2 * n);
                     const double* img = image.values().data();
                     for (Eigen::Index c = 0; c < channels; ++c) {
                       const double* plane = img + c * h * w;
                       for (Eigen::Index p = 0; p < n; ++p) {
                         const Tap& t = taps[static_cast<std::size_t>(p)];
                         const double gp = g[c * n + p];
                         if (t.inside_x) {
                           gg[p] += gp * ((1 - t.wy) * (plane[t.i01] - plane[t.i00]) +
                                          t.wy * (plane[t.i11] - plane[t.i10]));
                         }
                         if (t.inside_y) {
                           gg[n + p] += gp * ((1 - t.wx) * (plane[t.i10] - plane[t.i00]) +
                                              t.wx * (plane[t.i11] - plane[t.i01]));
                         }
                       }
                     }
                     accumulate_grad(grid, gg);
                   }
                 });
}

Tensor bilinear_splat(const Tensor& values, const Tensor& positions, Eigen::Index height,
                      Eigen::Index width) {
  const Eigen::Index n = values.size();
  if (positions.rank() != 2 || positions.shape()[0] != 2 || positions.shape()[1] != n) {
    throw ShapeError("bilinear_splat: positions must be 2 x N with N = " + std::to_string(n) +
                     ", got " + to_string(positions.shape()));
  }
  const double* px = positions.values().data();
  const double* py = px + n;
  const double* v = values.values().data();

  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(height * width);
  auto visit = [height, width](double x, double y, auto&& fn) {
    const double fx = std::floor(x), fy = std::floor(y);
    const auto x0 = static_cast<Eigen::Index>(fx), y0 = static_cast<Eigen::Index>(fy);
    const double ax = x - fx, ay = y - fy;
    // (dx, dy, kx, ky, dkx/dx sign, dky/dy sign)
    const std::array<std::tuple<int, int, double, double, double, double>, 4> corners{{
        {0, 0, 1 - ax, 1 - ay, -1.0, -1.0},
        {1, 0, ax, 1 - ay, 1.0, -1.0},
        {0, 1, 1 - ax, ay, -1.0, 1.0},
        {1, 1, ax, ay, 1.0, 1.0},
    }};
    for (const auto& [dx, dy, kx, ky, sx, sy] : corners) {
      const Eigen::Index cx = x0 + dx, cy = y0 + dy;
      if (cx < 0 || cy < 0 || cx >= width || cy >= height) continue;
      fn(cy * width + cx, kx, ky, sx, sy);
    }
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(px[i]) || !std::isfinite(py[i])) {
      throw std::domain_error("bilinear_splat: non-finite position");
    }
    // Far-away positions cannot touch the frame; skip before the integer conversion.
    if (px[i] <= -1.0 || py[i] <= -1.0 || px[i] >= static_cast<double>(width) ||
        py[i] >= static_cast<double>(height)) {
      continue;
    }
    visit(px[i], py[i], [&](Eigen::Index idx, double kx, double ky, double, double) { out[idx] += v[i] * kx * ky; });
  }

  return make_op(Shape{1, height, width}, std::move(out), {values, positions},
                 [values, positions, height, width, n, visit](const Eigen::ArrayXd& g) {
                   const double* px = positions.values().data();
                   const double* py = px + n;
                   const double* v = values.values().data();
                   Eigen::ArrayXd gv = Eigen::ArrayXd::Zero(n);
                   Eigen::ArrayXd gp = Eigen::ArrayXd::Zero(2 * n);
                   for (Eigen::Index i = 0; i < n; ++i) {
                     if (px[i] <= -1.0 || py[i] <= -1.0 || px[i] >= static_cast<double>(width) ||
                         py[i] >= static_cast<double>(height)) {
                       continue;
                     }
                     visit(px[i], py[i], [&](Eigen::Index idx, double kx, double ky, double sx, double sy) {
                       gv[i] += g[idx] * kx * ky;
                       gp[i] += g[idx] * v[i] * sx * ky;
                       gp[n + i] += g[idx] * v[i] * kx * sy;
                     });
                   }
                   if (values.requires_grad()) accumulate_grad(values, gv);
                   if (positions.requires_grad()) accumulate_grad(positions, gp);
                 });
}

// ---- finite differences -----------------------------------------------------

Tensor forward_difference(const Tensor& t, Axis axis) {
  if (t.rank() != 3) throw ShapeError("forward_difference needs C x H x W, got " + to_string(t.shape()));
  const Eigen::Index c = t.shape()[0], h = t.shape()[1], w = t.shape()[2];
  const Eigen::Index step = axis == Axis::X ? 1 : w;
  auto valid = [=](Eigen::Index y, Eigen::Index x) { return axis == Axis::X ? x + 1 < w : y + 1 < h; };
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(t.size());
  const double* src = t.values().data();
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        const Eigen::Index i = (ch * h + y) * w + x;
        if (valid(y, x)) out[i] = src[i + step] - src[i];
      }
    }
  }
  return make_op(t.shape(), std::move(out), {t}, [t, c, h, w, step, valid](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd gi = Eigen::ArrayXd::Zero(t.size());
    for (Eigen::Index ch = 0; ch < c; ++ch) {
      for (Eigen::Index y = 0; y < h; ++y) {
        for (Eigen::Index x = 0; x < w; ++x) {
          const Eigen::Index i = (ch * h + y) * w + x;
          if (!valid(y, x)) continue;
          gi[i + step] += g[i];
          gi[i] -= g[i];
        }
      }
    }
    accumulate_grad(t, gi);
  });
}

Tensor central_difference(const Tensor& t, Axis axis) {
  if (t.rank() != 3) throw ShapeError("central_difference needs C x H x W, got " + to_string(t.shape()));
  const Eigen::Index c = t.shape()[0], h = t.shape()[1], w = t.shape()[2];
  auto neighbours = [=](Eigen::Index y, Eigen::Index x) {
    if (axis == Axis::X) {
      return std::pair{y * w + std::max<Eigen::Index>(x - 1, 0), y * w + std::min(x + 1, w - 1)};
    }
    return std::pair{std::max<Eigen::Index>(y - 1, 0) * w + x, std::min(y + 1, h - 1) * w + x};
  };
  Eigen::ArrayXd out(t.size());
  const double* src = t.values().data();
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    const Eigen::Index base = ch * h * w;
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        const auto [lo, hi] = neighbours(y, x);
        out[base + y * w + x] = 0.5 * (src[base + hi] - src[base + lo]);
      }
    }
  }
  return make_op(t.shape(), std::move(out), {t}, [t, c, h, w, neighbours](const Eigen::ArrayXd& g) {
    Eigen::ArrayXd gi = Eigen::ArrayXd::Zero(t.size());
    for (Eigen::Index ch = 0; ch < c; ++ch) {
      const Eigen::Index base = ch * h * w;
      for (Eigen::Index y = 0; y < h; ++y) {
        for (Eigen::Index x = 0; x < w; ++x) {
          const auto [lo, hi] = neighbours(y, x);
          const double gp = 0.5 * g[base + y * w + x];
          gi[base + hi] += gp;
          gi[base + lo] -= gp;
        }
      }
    }
    accumulate_grad(t, gi);
  });
}

}  // namespace evssl
