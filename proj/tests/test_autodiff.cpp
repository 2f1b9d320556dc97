#include <gtest/gtest.h>

#include "evssl/tensor.hpp"
#include "support.hpp"

using namespace evssl;
using test::contract;
using test::gradient_error;
using test::uniform_array;

namespace {

Tensor vec(std::initializer_list<double> v) {
  Eigen::ArrayXd a(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) a[i++] = x;
  return Tensor(Shape{a.size()}, a);
}

constexpr double kTol = 1e-5;

}  // namespace

TEST(Elementwise, ReluAndTanh) {
  auto r = relu(vec({-1, 2}));
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 2.0);
  Tensor x = Tensor::parameter(Shape{}, Eigen::ArrayXd::Zero(1));
  Tensor y = tanh(x);
  EXPECT_EQ(y.item(), 0.0);
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Elementwise, ReluSubgradientAtZeroIsZero) {
  Tensor x = Tensor::parameter(Shape{3}, (Eigen::ArrayXd(3) << -1, 0, 1).finished());
  backward(sum(relu(x)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Elementwise, ClampGradient) {
  Tensor x = Tensor::parameter(Shape{3}, (Eigen::ArrayXd(3) << -2, 0.5, 2).finished());
  backward(sum(clamp(x, -1, 1)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
  EXPECT_EQ(x.grad()[2], 0.0);
}

TEST(Elementwise, ShapeMismatch) {
  EXPECT_THROW(add(vec({1, 2}), vec({3})), ShapeError);
  EXPECT_NO_THROW(add(vec({1, 2}), Tensor::scalar(3)));
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  using Unary = Tensor (*)(const Tensor&);
  const std::vector<std::pair<const char*, Unary>> unary = {
      {"exp", [](const Tensor& a) { return exp(a); }},       {"log", [](const Tensor& a) { return log(a); }},
      {"abs", [](const Tensor& a) { return abs(a); }},       {"square", [](const Tensor& a) { return square(a); }},
      {"sqrt", [](const Tensor& a) { return sqrt(a); }},     {"relu", [](const Tensor& a) { return relu(a); }},
      {"tanh", [](const Tensor& a) { return tanh(a); }},     {"sigmoid", [](const Tensor& a) { return sigmoid(a); }},
      {"clamp", [](const Tensor& a) { return clamp(a, 0.6, 1.4); }},
      {"neg", [](const Tensor& a) { return neg(a); }},
  };
  for (const auto& [name, fn] : unary) {
    for (int trial = 0; trial < 20; ++trial) {
      // Positive inputs away from the kinks of abs/relu/clamp.
      Eigen::ArrayXd x = uniform_array(rng, 7, 0.1, 2.0);
      for (auto& v : x) {
        if (std::abs(v - 0.6) < 0.05 || std::abs(v - 1.4) < 0.05) v += 0.1;
      }
      auto f = contract([fn](const std::vector<Tensor>& in) { return fn(in[0]); }, uniform_array(rng, 7, -1, 1));
      EXPECT_LT(gradient_error(f, {Tensor(Shape{7}, x)}), kTol) << name;
    }
  }
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a(Shape{2, 3}, uniform_array(rng, 6, 0.5, 2)), b(Shape{2, 3}, uniform_array(rng, 6, 0.5, 2));
    Tensor s(Shape{}, uniform_array(rng, 1, 0.5, 2));
    const Eigen::ArrayXd w = uniform_array(rng, 6, -1, 1);
    EXPECT_LT(gradient_error(contract([](auto& in) { return in[0] + in[1]; }, w), {a, b}), kTol);
    EXPECT_LT(gradient_error(contract([](auto& in) { return in[0] - in[1]; }, w), {a, b}), kTol);
    EXPECT_LT(gradient_error(contract([](auto& in) { return in[0] * in[1]; }, w), {a, b}), kTol);
    EXPECT_LT(gradient_error(contract([](auto& in) { return in[0] / in[1]; }, w), {a, b}), kTol);
    EXPECT_LT(gradient_error(contract([](auto& in) { return in[0] * in[1]; }, w), {a, s}), kTol);
    EXPECT_LT(gradient_error(contract([](auto& in) { return in[1] / in[0]; }, w), {a, s}), kTol);
  }
}

TEST(Structure, ConcatSliceSelectGradients) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a(Shape{2, 3, 4}, uniform_array(rng, 24, -1, 1)), b(Shape{1, 3, 4}, uniform_array(rng, 12, -1, 1));
    auto f = contract([](auto& in) { return square(concat({in[0], in[1]})); }, uniform_array(rng, 36, -1, 1));
    EXPECT_LT(gradient_error(f, {a, b}), kTol);
    auto g = contract([](auto& in) { return square(slice(in[0], 1, 2)); }, uniform_array(rng, 12, -1, 1));
    EXPECT_LT(gradient_error(g, {a}), kTol);
    Tensor m(Shape{2, 5}, uniform_array(rng, 10, -1, 1));
    auto h = contract([](auto& in) { return square(select_columns(in[0], {4, 0, 0, 2})); },
                      uniform_array(rng, 8, -1, 1));
    EXPECT_LT(gradient_error(h, {m}), kTol);
  }
}

TEST(Reductions, Values) {
  EXPECT_EQ(sum(vec({1, 2, 3})).item(), 6.0);
  EXPECT_EQ(mean(vec({1, 2, 3})).item(), 2.0);
  EXPECT_EQ(sum_of_squares(vec({1, 2, 3})).item(), 14.0);
  Eigen::ArrayXd mask(3);
  mask << 1, 0, 1;
  EXPECT_EQ(masked_mean(vec({1, 2, 3}), mask).item(), 2.0);
  EXPECT_EQ(masked_sum(vec({1, 2, 3}), mask).item(), 4.0);
  EXPECT_THROW(masked_mean(vec({1, 2, 3}), Eigen::ArrayXd::Zero(3)), std::domain_error);
}

TEST(Reductions, Gradients) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a(Shape{3, 4}, uniform_array(rng, 12, -1, 1));
    Eigen::ArrayXd mask = (uniform_array(rng, 12, 0, 1) > 0.4).cast<double>();
    mask[0] = 1;
    EXPECT_LT(gradient_error([](auto& in) { return mean(square(in[0])); }, {a}), kTol);
    EXPECT_LT(gradient_error([](auto& in) { return sum_of_squares(in[0]); }, {a}), kTol);
    EXPECT_LT(gradient_error([mask](auto& in) { return masked_mean(square(in[0]), mask); }, {a}), kTol);
    EXPECT_LT(gradient_error([mask](auto& in) { return masked_sum(exp(in[0]), mask); }, {a}), kTol);
  }
}

TEST(Conv2d, IdentityOneByOne) {
  std::mt19937_64 rng(1);
  Tensor x(Shape{3, 5, 6}, uniform_array(rng, 90, -1, 1));
  Eigen::ArrayXd w = Eigen::ArrayXd::Zero(9);
  w[0] = w[4] = w[8] = 1;
  Tensor y = conv2d(x, Tensor(Shape{3, 3, 1, 1}, w), Tensor(Shape{3}, 0.0));
  EXPECT_TRUE((y.values() == x.values()).all());
}

TEST(Conv2d, AllOnesCenter) {
  Tensor x(Shape{1, 3, 3}, 1.0);
  Tensor y = conv2d(x, Tensor(Shape{1, 1, 3, 3}, 1.0), Tensor(Shape{1}, 0.0));
  EXPECT_EQ(y.channel(0)(1, 1), 9.0);
  EXPECT_EQ(y.channel(0)(0, 0), 4.0);
  EXPECT_EQ(y.channel(0)(0, 1), 6.0);
}

TEST(Conv2d, AgainstDirectLoopOracle) {
  std::mt19937_64 rng(2);
  for (int k : {1, 3, 5}) {
    const int cin = 2, cout = 3, h = 6, w = 7, pad = (k - 1) / 2;
    Tensor x(Shape{cin, h, w}, uniform_array(rng, cin * h * w, -1, 1));
    Tensor wt(Shape{cout, cin, k, k}, uniform_array(rng, cout * cin * k * k, -1, 1));
    Tensor b(Shape{cout}, uniform_array(rng, cout, -1, 1));
    Tensor y = conv2d(x, wt, b);
    for (int o = 0; o < cout; ++o) {
      for (int yy = 0; yy < h; ++yy) {
        for (int xx = 0; xx < w; ++xx) {
          double acc = b[o];
          for (int c = 0; c < cin; ++c) {
            for (int i = 0; i < k; ++i) {
              for (int j = 0; j < k; ++j) {
                const int sy = yy + i - pad, sx = xx + j - pad;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                acc += wt[((o * cin + c) * k + i) * k + j] * x[(c * h + sy) * w + sx];
              }
            }
          }
          EXPECT_NEAR(y[(o * h + yy) * w + xx], acc, 1e-12);
        }
      }
    }
  }
}

TEST(Conv2d, ChannelMismatch) {
  EXPECT_THROW(conv2d(Tensor(Shape{2, 4, 4}), Tensor(Shape{1, 3, 3, 3}), Tensor(Shape{1})), ShapeError);
  EXPECT_THROW(conv2d(Tensor(Shape{2, 4, 4}), Tensor(Shape{1, 2, 2, 2}), Tensor(Shape{1})), ShapeError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = trial % 3 == 0 ? 1 : (trial % 3 == 1 ? 3 : 5);
    const int cin = 2, cout = 2, h = 5, w = 6;
    Tensor x(Shape{cin, h, w}, uniform_array(rng, cin * h * w, -1, 1));
    Tensor wt(Shape{cout, cin, k, k}, uniform_array(rng, cout * cin * k * k, -1, 1));
    Tensor b(Shape{cout}, uniform_array(rng, cout, -1, 1));
    auto f = contract([](auto& in) { return conv2d(in[0], in[1], in[2]); }, uniform_array(rng, cout * h * w, -1, 1));
    EXPECT_LT(gradient_error(f, {x, wt, b}), kTol) << "k=" << k;
  }
}

TEST(BilinearSample, IdentityGrid) {
  std::mt19937_64 rng(4);
  Tensor img(Shape{2, 4, 5}, uniform_array(rng, 40, -1, 1));
  Eigen::ArrayXd g(40);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      g[y * 5 + x] = x;
      g[20 + y * 5 + x] = y;
    }
  }
  EXPECT_TRUE((bilinear_sample(img, Tensor(Shape{2, 4, 5}, g)).values() == img.values()).all());
}

TEST(BilinearSample, HalfPixelShiftOnRamp) {
  Eigen::ArrayXd ramp(20), g(40);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      ramp[y * 5 + x] = 2.0 * x;
      g[y * 5 + x] = x + 0.5;
      g[20 + y * 5 + x] = y;
    }
  }
  Tensor out = bilinear_sample(Tensor(Shape{1, 4, 5}, ramp), Tensor(Shape{2, 4, 5}, g));
  EXPECT_DOUBLE_EQ(out.channel(0)(2, 1), 3.0);
  EXPECT_DOUBLE_EQ(out.channel(0)(2, 4), 8.0);  // replicated border
}

TEST(BilinearSample, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor img(Shape{2, 5, 6}, uniform_array(rng, 60, -1, 1));
    // Non-integer coordinates, some outside the frame.
    Eigen::ArrayXd g = uniform_array(rng, 60, -1.5, 6.5);
    for (auto& v : g) {
      if (std::abs(v - std::round(v)) < 0.02) v += 0.05;
    }
    auto f = contract([](auto& in) { return bilinear_sample(in[0], in[1]); }, uniform_array(rng, 60, -1, 1));
    EXPECT_LT(gradient_error(f, {img, Tensor(Shape{2, 5, 6}, g)}), kTol);
  }
}

TEST(BilinearSplat, CornerWeights) {
  Tensor one(Shape{1}, 1.0);
  Tensor at = bilinear_splat(one, Tensor(Shape{2, 1}, (Eigen::ArrayXd(2) << 2, 3).finished()), 5, 5);
  EXPECT_EQ(at.channel(0)(3, 2), 1.0);
  EXPECT_EQ(at.values().sum(), 1.0);
  Tensor quarter = bilinear_splat(one, Tensor(Shape{2, 1}, (Eigen::ArrayXd(2) << 2.25, 3).finished()), 5, 5);
  EXPECT_DOUBLE_EQ(quarter.channel(0)(3, 2), 0.75);
  EXPECT_DOUBLE_EQ(quarter.channel(0)(3, 3), 0.25);
  Tensor outside = bilinear_splat(one, Tensor(Shape{2, 1}, (Eigen::ArrayXd(2) << -0.5, 0).finished()), 5, 5);
  EXPECT_DOUBLE_EQ(outside.values().sum(), 0.5);
}

TEST(BilinearSplat, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 12;
    Tensor values(Shape{n}, uniform_array(rng, n, -1, 1));
    Eigen::ArrayXd pos = uniform_array(rng, 2 * n, -0.8, 5.8);
    for (auto& v : pos) {
      if (std::abs(v - std::round(v)) < 0.02) v += 0.05;
    }
    auto f = contract([](auto& in) { return bilinear_splat(in[0], in[1], 5, 6); }, uniform_array(rng, 30, -1, 1));
    EXPECT_LT(gradient_error(f, {values, Tensor(Shape{2, n}, pos)}), kTol);
  }
}

TEST(Differences, ForwardAndCentral) {
  Eigen::ArrayXd ramp(12);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) ramp[y * 4 + x] = x;
  }
  Tensor img(Shape{1, 3, 4}, ramp);
  auto fx = forward_difference(img, Axis::X).channel(0);
  EXPECT_EQ(fx(1, 0), 1.0);
  EXPECT_EQ(fx(1, 3), 0.0);
  auto cx = central_difference(img, Axis::X).channel(0);
  EXPECT_EQ(cx(1, 0), 0.5);
  EXPECT_EQ(cx(1, 1), 1.0);
  EXPECT_EQ(cx(1, 3), 0.5);
  EXPECT_TRUE((central_difference(img, Axis::Y).values() == 0).all());

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a(Shape{2, 4, 5}, uniform_array(rng, 40, -1, 1));
    const Eigen::ArrayXd w = uniform_array(rng, 40, -1, 1);
    for (Axis axis : {Axis::X, Axis::Y}) {
      EXPECT_LT(gradient_error(contract([axis](auto& in) { return forward_difference(in[0], axis); }, w), {a}), kTol);
      EXPECT_LT(gradient_error(contract([axis](auto& in) { return central_difference(in[0], axis); }, w), {a}), kTol);
    }
  }
}

TEST(Backward, LinearAndAccumulation) {
  Eigen::ArrayXd xv(3);
  xv << 1, 2, 3;
  Tensor w = Tensor::parameter(Shape{3}, Eigen::ArrayXd::Ones(3));
  backward(sum(w * Tensor(Shape{3}, xv)));
  EXPECT_TRUE((w.grad() == xv).all());

  Tensor v = Tensor::parameter(Shape{3}, Eigen::ArrayXd::Ones(3));
  backward(sum(v) + sum(v));
  EXPECT_TRUE((v.grad() == 2.0).all());
}

TEST(Backward, ErrorsOnNonScalarAndRepeat) {
  Tensor w = Tensor::parameter(Shape{3}, Eigen::ArrayXd::Ones(3));
  EXPECT_THROW(backward(w * 2.0), ShapeError);
  Tensor root = sum(square(w));
  backward(root);
  EXPECT_THROW(backward(root), std::logic_error);
}

TEST(Backward, CompositeGraph) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a(Shape{1, 4, 4}, uniform_array(rng, 16, -1, 1));
    Tensor k(Shape{2, 1, 3, 3}, uniform_array(rng, 18, -1, 1));
    Tensor b(Shape{2}, uniform_array(rng, 2, -1, 1));
    auto f = [](const std::vector<Tensor>& in) {
      Tensor h = tanh(conv2d(in[0], in[1], in[2]));
      return mean(sigmoid(h) * h) + sum_of_squares(slice(h, 0, 1)) * 0.1;
    };
    EXPECT_LT(gradient_error(f, {a, k, b}), kTol);
  }
}

TEST(Detach, StopsGradients) {
  Tensor w = Tensor::parameter(Shape{2}, Eigen::ArrayXd::Ones(2));
  Tensor d = detach(square(w));
  EXPECT_TRUE((d.values() == 1.0).all());
  EXPECT_FALSE(d.requires_grad());
  backward(sum(d * w * 0.0) + sum(w) * 0.0 + sum(d));
  EXPECT_TRUE((w.grad() == 0.0).all());
  Tensor dd = detach(detach(w));
  EXPECT_TRUE((dd.values() == w.values()).all());
  EXPECT_FALSE(dd.requires_grad());
}

TEST(Autodiff, NoInputMutationAndDeterminism) {
  std::mt19937_64 rng(9);
  const Eigen::ArrayXd xv = uniform_array(rng, 32, -1, 1);
  Tensor x(Shape{2, 4, 4}, xv);
  auto run = [&] {
    Tensor w = Tensor::parameter(Shape{2, 2, 3, 3}, Eigen::ArrayXd::Constant(36, 0.1));
    Tensor y = sum(tanh(conv2d(x, w, Tensor(Shape{2}, 0.0))));
    backward(y);
    return std::make_pair(y.item(), Eigen::ArrayXd(w.grad()));
  };
  auto [y1, g1] = run();
  auto [y2, g2] = run();
  EXPECT_EQ(y1, y2);
  EXPECT_TRUE((g1 == g2).all());
  EXPECT_TRUE((x.values() == xv).all());
}

TEST(NoGrad, RecordsNoGraph) {
  Tensor w = Tensor::parameter(Shape{2}, Eigen::ArrayXd::Ones(2));
  {
    NoGradGuard guard;
    EXPECT_FALSE(square(w).requires_grad());
  }
  EXPECT_TRUE(square(w).requires_grad());
}
