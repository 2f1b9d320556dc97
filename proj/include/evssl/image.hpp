#pragma once

#include <Eigen/Core>

#include <cmath>

#include "evssl/tensor.hpp"

namespace evssl {

/// Row-major H x W image; rows index y, columns index x.
template <typename Scalar>
using ImageT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Image = ImageT<double>;
using EventMask = ImageT<bool>;

/// Per-pixel displacement over one partition, in pixels per unit normalized time.
template <typename Scalar>
struct FlowFieldT {
  ImageT<Scalar> u;
  ImageT<Scalar> v;

  FlowFieldT() = default;
  FlowFieldT(Eigen::Index height, Eigen::Index width)
      : u(ImageT<Scalar>::Zero(height, width)), v(ImageT<Scalar>::Zero(height, width)) {}

  static FlowFieldT constant(Eigen::Index height, Eigen::Index width, Scalar du, Scalar dv) {
    FlowFieldT f;
    f.u = ImageT<Scalar>::Constant(height, width, du);
    f.v = ImageT<Scalar>::Constant(height, width, dv);
    return f;
  }

  Eigen::Index height() const { return u.rows(); }
  Eigen::Index width() const { return u.cols(); }

  /// Per-pixel endpoint magnitude.
  ImageT<Scalar> magnitude() const { return (u.square() + v.square()).sqrt(); }
};

using FlowField = FlowFieldT<double>;

/// 2 x H x W tensor (u first).
inline Tensor flow_tensor(const FlowField& flow) {
  const Eigen::Index n = flow.u.size();
  Eigen::ArrayXd values(2 * n);
  values.head(n) = Eigen::Map<const Eigen::ArrayXd>(flow.u.data(), n);
  values.tail(n) = Eigen::Map<const Eigen::ArrayXd>(flow.v.data(), n);
  return Tensor(Shape{2, flow.height(), flow.width()}, std::move(values));
}

inline FlowField flow_field(const Tensor& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2) {
    throw ShapeError("flow tensor must be 2 x H x W, got " + to_string(flow.shape()));
  }
  FlowField f;
  f.u = flow.channel(0);
  f.v = flow.channel(1);
  return f;
}

/// Population variance over all pixels.
template <typename Derived>
typename Derived::Scalar population_variance(const Eigen::ArrayBase<Derived>& image) {
  using Scalar = typename Derived::Scalar;
  const Scalar mu = image.mean();
  return (image - mu).square().mean();
}

/// Pearson correlation of two equally sized images; zero when either is constant.
template <typename DerivedA, typename DerivedB>
double pearson_correlation(const Eigen::ArrayBase<DerivedA>& a, const Eigen::ArrayBase<DerivedB>& b) {
  const auto n = static_cast<double>(a.size());
  const double ma = a.template cast<double>().sum() / n;
  const double mb = b.template cast<double>().sum() / n;
  const auto da = (a.template cast<double>() - ma).eval();
  const auto db = (b.template cast<double>() - mb).eval();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  return denom > 0.0 ? (da * db).sum() / denom : 0.0;
}

}  // namespace evssl
