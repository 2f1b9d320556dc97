#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace evssl {

using Shape = std::vector<Eigen::Index>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowArrayXXd = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
Eigen::Index element_count(const Shape& shape);

namespace detail {
struct Node;
}

/// Dense row-major float64 array with an optional reverse-mode graph handle.
///
/// Tensors share their storage on copy; operations always allocate new results and never
/// write into their inputs. Only leaves created by Tensor::parameter() accumulate gradients
/// across backward() calls, intermediate gradients are released once a backward pass is done.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Eigen::ArrayXd values);

  static Tensor scalar(double value);
  static Tensor parameter(Shape shape, Eigen::ArrayXd values);
  static Tensor from_image(const RowArrayXXd& image);  // 1 x H x W

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  Eigen::Index dim(std::size_t axis) const;
  Eigen::Index size() const;
  bool defined() const { return static_cast<bool>(node_); }

  const Eigen::ArrayXd& values() const;
  double item() const;
  double operator[](Eigen::Index i) const { return values()[i]; }

  /// H x W view of channel `c` of a C x H x W tensor.
  Eigen::Map<const RowArrayXXd> channel(Eigen::Index c) const;
  RowArrayXXd image(Eigen::Index c = 0) const { return channel(c); }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  const Eigen::ArrayXd& grad() const;
  void zero_grad();

  /// In-place value update for parameter leaves; the optimizer is the only caller.
  Eigen::ArrayXd& mutable_values();

  Tensor reshape(Shape shape) const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(Shape, Eigen::ArrayXd, std::vector<Tensor>,
                        std::function<void(const Eigen::ArrayXd&)>);
  friend Tensor detach(const Tensor&);
};

namespace detail {
struct Node {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // empty until materialized
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives this node's gradient and accumulates into the parents.
  std::function<void(const Eigen::ArrayXd&)> backward;

  void accumulate(const Eigen::ArrayXd& g);
};
}  // namespace detail

/// While alive, operations on this thread record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds a result tensor. The closure is kept only when some input requires a gradient.
Tensor make_op(Shape shape, Eigen::ArrayXd value, std::vector<Tensor> inputs,
               std::function<void(const Eigen::ArrayXd&)> backward);

/// Accumulates into an input's gradient from inside a backward closure.
void accumulate_grad(const Tensor& input, const Eigen::ArrayXd& g);

/// Reverse accumulation from a scalar root. Throws for non-scalar roots and for roots whose
/// graph was already consumed by an earlier call.
void backward(const Tensor& root);

/// Same values, no graph history.
Tensor detach(const Tensor& t);

// ---- elementwise ------------------------------------------------------------
// Binary operations accept identical shapes or a rank-0 scalar on either side.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator+(double a, const Tensor& b) { return add(b, a); }
inline Tensor operator-(const Tensor& a, double b) { return add(a, -b); }
inline Tensor operator-(double a, const Tensor& b) { return add(neg(b), a); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- structure --------------------------------------------------------------

/// Concatenates along axis 0; trailing dimensions must agree.
Tensor concat(const std::vector<Tensor>& parts);
/// Rows [begin, end) along axis 0.
Tensor slice(const Tensor& t, Eigen::Index begin, Eigen::Index end);
/// Columns `index` of a rank-2 R x N tensor, giving R x index.size().
Tensor select_columns(const Tensor& t, const std::vector<Eigen::Index>& index);

// ---- reductions (rank-0 results) ---------------------------------------------

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
Tensor sum_of_squares(const Tensor& t);
/// `mask` holds 0/1 weights with the same element count as `t`.
Tensor masked_sum(const Tensor& t, const Eigen::ArrayXd& mask);
Tensor masked_mean(const Tensor& t, const Eigen::ArrayXd& mask);

// ---- image operations (C x H x W) --------------------------------------------

/// Cross-correlation with zero padding. weight: Cout x Cin x k x k, bias: Cout.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1,
              int padding = -1);

/// Samples `image` at absolute coordinates `grid` (2 x H x W, x first), replicating the border.
Tensor bilinear_sample(const Tensor& image, const Tensor& grid);

/// Scatter-adds value_n * kx * ky onto the four pixels around position n (2 x N, x first).
/// Corners outside the height x width frame are dropped. Result is 1 x height x width.
Tensor bilinear_splat(const Tensor& values, const Tensor& positions, Eigen::Index height,
                      Eigen::Index width);

enum class Axis { X, Y };

/// f(p+1) - f(p), zero on the last column/row.
Tensor forward_difference(const Tensor& t, Axis axis);
/// (f(p+1) - f(p-1)) / 2 with replicated borders.
Tensor central_difference(const Tensor& t, Axis axis);

}  // namespace evssl
