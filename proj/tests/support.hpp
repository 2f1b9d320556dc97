#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <random>
#include <vector>

#include "evssl/events.hpp"
#include "evssl/geometry.hpp"
#include "evssl/tensor.hpp"

namespace evssl::test {

/// Random sorted partition; timestamps are distinct with probability ~1 and then normalized.
inline EventPartition random_partition(std::mt19937_64& rng, SensorGeometry geometry, std::size_t n,
                                       std::uint64_t span_us = 100000) {
  std::uniform_int_distribution<int> ux(0, geometry.width - 1), uy(0, geometry.height - 1), up(0, 1);
  std::uniform_int_distribution<std::uint64_t> ut(0, span_us);
  EventPartition p;
  p.geometry = geometry;
  for (std::size_t i = 0; i < n; ++i) {
    p.events.push_back({ut(rng), static_cast<std::uint16_t>(ux(rng)), static_cast<std::uint16_t>(uy(rng)),
                        static_cast<std::int8_t>(up(rng) ? 1 : -1)});
  }
  std::sort(p.events.begin(), p.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return normalize_timestamps(std::move(p));
}

inline Eigen::ArrayXd uniform_array(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::ArrayXd a(n);
  for (Eigen::Index i = 0; i < n; ++i) a[i] = u(rng);
  return a;
}

using ScalarFunction = std::function<Tensor(const std::vector<Tensor>&)>;

/// Norm-wise relative error between the reverse-mode gradient of `f` and central differences
/// (step h) over every entry of every input.
inline double gradient_error(const ScalarFunction& f, const std::vector<Tensor>& inputs, double h = 1e-6) {
  std::vector<Tensor> params;
  for (const Tensor& t : inputs) params.push_back(Tensor::parameter(t.shape(), t.values()));
  backward(f(params));

  double diff = 0.0, scale_a = 0.0, scale_n = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Eigen::ArrayXd analytic =
        params[k].has_grad() ? params[k].grad() : Eigen::ArrayXd::Zero(inputs[k].size());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      Eigen::ArrayXd vp = inputs[k].values(), vm = inputs[k].values();
      vp[i] += h;
      vm[i] -= h;
      plus[k] = Tensor(inputs[k].shape(), vp);
      minus[k] = Tensor(inputs[k].shape(), vm);
      const double numeric = (f(plus).item() - f(minus).item()) / (2 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      scale_a += analytic[i] * analytic[i];
      scale_n += numeric * numeric;
    }
  }
  const double scale = std::max({std::sqrt(scale_a), std::sqrt(scale_n), 1e-12});
  return std::sqrt(diff) / scale;
}

/// Same check against the parameters of a network; `loss` rebuilds the graph on every call.
template <typename Param>
double parameter_gradient_error(const std::vector<Param*>& params, const std::function<Tensor()>& loss,
                                double h = 1e-6) {
  for (Param* p : params) p->tensor.zero_grad();
  backward(loss());
  double diff = 0.0, scale_a = 0.0, scale_n = 0.0;
  for (Param* p : params) {
    const Eigen::ArrayXd analytic = p->tensor.has_grad() ? p->tensor.grad() : Eigen::ArrayXd::Zero(p->tensor.size());
    Eigen::ArrayXd& values = p->tensor.mutable_values();
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + h;
      const double up = loss().item();
      values[i] = keep - h;
      const double down = loss().item();
      values[i] = keep;
      const double numeric = (up - down) / (2 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      scale_a += analytic[i] * analytic[i];
      scale_n += numeric * numeric;
    }
  }
  const double scale = std::max({std::sqrt(scale_a), std::sqrt(scale_n), 1e-12});
  return std::sqrt(diff) / scale;
}

/// Uniform random flow, redrawn until every moving warped coordinate sits at least 1e-3 px
/// from a grid line at each reference time. That is far beyond the finite-difference step, so
/// no kink of the bilinear weights is crossed.
inline Tensor smooth_random_flow(std::mt19937_64& rng, const EventPartition& p, double range,
                                 std::initializer_list<double> t_refs) {
  const Shape shape{2, p.geometry.height, p.geometry.width};
  const auto n = static_cast<Eigen::Index>(p.size());
  for (;;) {
    Tensor flow(shape, uniform_array(rng, 2 * p.geometry.height * p.geometry.width, -range, range));
    bool smooth = true;
    for (double t_ref : t_refs) {
      const Eigen::ArrayXd pos = warp_events(p, flow, t_ref).values();
      for (Eigen::Index i = 0; i < n; ++i) {
        // An event at t* = t_ref does not move with the flow.
        if (p.t_star[static_cast<std::size_t>(i)] == t_ref) continue;
        for (Eigen::Index c : {i, n + i}) smooth &= std::abs(pos[c] - std::round(pos[c])) > 1e-3;
      }
    }
    if (smooth) return flow;
  }
}

/// Random weights contracting a tensor to a scalar, so that every output entry is tested.
inline ScalarFunction contract(std::function<Tensor(const std::vector<Tensor>&)> op, const Eigen::ArrayXd& weights) {
  return [op, weights](const std::vector<Tensor>& in) {
    Tensor out = op(in);
    return sum(out * Tensor(out.shape(), weights));
  };
}

}  // namespace evssl::test
