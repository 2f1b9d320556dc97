#include <gtest/gtest.h>

#include "evssl/geometry.hpp"
#include "evssl/synth.hpp"
#include "support.hpp"

using namespace evssl;
using test::gradient_error;
using test::random_partition;
using test::uniform_array;

namespace {

const SensorGeometry k8{8, 8};

EventPartition single(std::uint16_t x, std::uint16_t y, std::int8_t p, double t_star, SensorGeometry g = k8) {
  EventPartition part;
  part.geometry = g;
  part.events = {{0, x, y, p}};
  part.t_star = {t_star};
  return part;
}

Tensor zero_flow(SensorGeometry g) { return Tensor(Shape{2, g.height, g.width}, 0.0); }

Tensor constant_flow(SensorGeometry g, double u, double v) {
  return flow_tensor(FlowField::constant(g.height, g.width, u, v));
}

}  // namespace

TEST(VoxelGrid, BinPlacement) {
  auto v = build_voxel_grid(single(3, 4, 1, 0.0), 5);
  EXPECT_EQ(v.data.values().sum(), 1.0);
  EXPECT_EQ(v.data[(0 * 8 + 4) * 8 + 3], 1.0);

  auto split = build_voxel_grid(single(3, 4, 1, 0.375), 5);
  EXPECT_DOUBLE_EQ(split.data[(1 * 8 + 4) * 8 + 3], 0.5);
  EXPECT_DOUBLE_EQ(split.data[(2 * 8 + 4) * 8 + 3], 0.5);
}

TEST(VoxelGrid, PolarityCancellationAndMask) {
  EventPartition p = single(2, 2, 1, 0.0);
  p.events.push_back({0, 2, 2, -1});
  p.t_star.push_back(0.0);
  auto v = build_voxel_grid(p, 5);
  EXPECT_TRUE((v.data.values() == 0.0).all());
  EXPECT_FALSE(event_mask(v).any());
  EXPECT_EQ(event_mask(build_voxel_grid(single(1, 6, -1, 0.7), 5)).count(), 1);
  EXPECT_FALSE(event_mask(null_voxel_grid(k8, 5)).any());
}

TEST(VoxelGrid, MassConservationProperty) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_partition(rng, {12, 10}, 1 + trial * 3);
    const int bins = 2 + trial % 6;
    auto v = build_voxel_grid(p, bins);
    double polarity = 0.0;
    for (const Event& e : p.events) polarity += e.p;
    EXPECT_NEAR(v.data.values().sum(), polarity, 1e-9);
    // Per pixel too.
    Image per_pixel = Image::Zero(10, 12);
    for (const Event& e : p.events) per_pixel(e.y, e.x) += e.p;
    Image summed = Image::Zero(10, 12);
    for (int b = 0; b < bins; ++b) summed += v.data.channel(b);
    EXPECT_LT((summed - per_pixel).abs().maxCoeff(), 1e-9);
  }
}

TEST(Warp, Examples) {
  auto p = single(5, 3, 1, 0.4);
  Tensor flow = constant_flow(k8, 1, 0);
  Tensor w1 = warp_events(p, flow, 1.0);
  EXPECT_DOUBLE_EQ(w1[0], 5.6);
  EXPECT_DOUBLE_EQ(w1[1], 3.0);
  Tensor w0 = warp_events(p, flow, 0.0);
  EXPECT_DOUBLE_EQ(w0[0], 4.6);
  std::mt19937_64 rng(1);
  auto r = random_partition(rng, k8, 30);
  Tensor z = warp_events(r, zero_flow(k8), 1.0);
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(z[static_cast<Eigen::Index>(i)], r.events[i].x);
    EXPECT_EQ(z[static_cast<Eigen::Index>(r.size() + i)], r.events[i].y);
  }
}

TEST(Warp, SamplesFlowAtSourcePixel) {
  // Only the source pixel's flow matters.
  auto p = single(2, 5, 1, 0.0);
  FlowField f(8, 8);
  f.u(5, 2) = 1.5;
  f.v(5, 2) = -0.5;
  f.u(5, 3) = 100.0;
  Tensor w = warp_events(p, flow_tensor(f), 1.0);
  EXPECT_DOUBLE_EQ(w[0], 3.5);
  EXPECT_DOUBLE_EQ(w[1], 4.5);
}

TEST(Accumulate, SingleEvent) {
  auto p = single(3, 2, 1, 0.5);
  auto img = accumulate_warped_images(p, warp_events(p, zero_flow(k8), 1.0), 1.0);
  EXPECT_EQ(img.positive.count.channel(0)(2, 3), 1.0);
  EXPECT_NEAR(img.positive.average_timestamp.channel(0)(2, 3), 0.5 / (1 + kEpsilon), 1e-15);
  EXPECT_EQ(img.positive.source_density.channel(0)(2, 3), 1.0);
  EXPECT_EQ(img.negative.count.values().sum(), 0.0);
}

TEST(Accumulate, HalfPixelSplit) {
  auto p = single(5, 7, 1, 0.0);
  Tensor warped(Shape{2, 1}, (Eigen::ArrayXd(2) << 5.5, 7.0).finished());
  auto img = accumulate_warped_images(p, warped, 1.0);
  EXPECT_DOUBLE_EQ(img.positive.count.channel(0)(7, 5), 0.5);
  EXPECT_DOUBLE_EQ(img.positive.count.channel(0)(7, 6), 0.5);
}

TEST(Accumulate, StackedSourcePixelHandCount) {
  // Three +1 events at one source pixel warped to the same target: each splats 1/3 into P.
  EventPartition p;
  p.geometry = k8;
  p.events = {{0, 4, 4, 1}, {5, 4, 4, 1}, {10, 4, 4, 1}};
  p.t_star = {0.0, 0.5, 1.0};
  auto img = accumulate_warped_images(p, warp_events(p, zero_flow(k8), 1.0), 1.0);
  const double h = 1.0 + 1.0 + 1.0;
  const double p_hand = 1.0 / 3 + 1.0 / 3 + 1.0 / 3;
  EXPECT_DOUBLE_EQ(img.positive.count.channel(0)(4, 4), h);
  EXPECT_NEAR(img.positive.source_density.channel(0)(4, 4), p_hand, 1e-15);
  auto g = average_iwe(img);
  EXPECT_NEAR(g.positive.channel(0)(4, 4), h / (p_hand + kEpsilon), 1e-12);
  EXPECT_NEAR(g.positive.channel(0)(4, 4), 3.0, 1e-8);
  EXPECT_NEAR(img.positive.average_timestamp.channel(0)(4, 4), 1.5 / (3 + kEpsilon), 1e-15);
}

TEST(AverageIwe, Definition) {
  WarpedImages images;
  auto make = [](double v) { return Tensor(Shape{1, 1, 1}, v); };
  images.positive = {make(3), make(0), make(1)};
  images.negative = {make(4), make(0), make(2)};
  auto g = average_iwe(images);
  EXPECT_NEAR(g.positive.item(), 3.0, 1e-8);
  EXPECT_NEAR(g.negative.item(), 2.0, 1e-8);
  images.positive = {make(0), make(0), make(0)};
  EXPECT_EQ(average_iwe(images).positive.item(), 0.0);
}

TEST(Accumulate, ConservationProperties) {
  std::mt19937_64 rng(22);
  const SensorGeometry g{16, 12};
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_partition(rng, g, 40);
    FlowField f(g.height, g.width);
    f.u = Image(Eigen::Map<const Image>(uniform_array(rng, g.pixels(), -3, 3).data(), g.height, g.width));
    f.v = Image(Eigen::Map<const Image>(uniform_array(rng, g.pixels(), -3, 3).data(), g.height, g.width));
    for (double t_ref : {0.0, 1.0}) {
      Tensor warped = warp_events(p, flow_tensor(f), t_ref);
      auto img = accumulate_warped_images(p, warped, t_ref);
      for (const PolarityImages* pol : {&img.positive, &img.negative}) {
        EXPECT_GE(pol->average_timestamp.values().minCoeff(), 0.0);
        EXPECT_LE(pol->average_timestamp.values().maxCoeff(), 1.0);
        EXPECT_GE(pol->count.values().minCoeff(), 0.0);
        EXPECT_GE(pol->source_density.values().minCoeff(), 0.0);
      }
      // Interior mass: count events that landed strictly inside the frame.
      double inside_pos = 0, inside_neg = 0, landed_pos = 0, landed_neg = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double x = warped[static_cast<Eigen::Index>(i)];
        const double y = warped[static_cast<Eigen::Index>(p.size() + i)];
        if (x > 0 && x < g.width - 1 && y > 0 && y < g.height - 1) {
          (p.events[i].p > 0 ? inside_pos : inside_neg) += 1;
        }
        (p.events[i].p > 0 ? landed_pos : landed_neg) += 1;
      }
      if (inside_pos == landed_pos) EXPECT_NEAR(img.positive.count.values().sum(), landed_pos, 1e-9);
      if (inside_neg == landed_neg) EXPECT_NEAR(img.negative.count.values().sum(), landed_neg, 1e-9);
    }
  }
}

TEST(Accumulate, InteriorSplatMassWithSmallFlow) {
  std::mt19937_64 rng(23);
  const SensorGeometry g{16, 16};
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_partition(rng, g, 30);
    for (auto& e : p.events) {
      e.x = static_cast<std::uint16_t>(2 + e.x % 12);
      e.y = static_cast<std::uint16_t>(2 + e.y % 12);
    }
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    auto img = accumulate_warped_images(p, warp_events(p, constant_flow(g, u(rng), u(rng)), 1.0), 1.0);
    double pos = 0, neg = 0;
    for (const Event& e : p.events) (e.p > 0 ? pos : neg) += 1;
    EXPECT_NEAR(img.positive.count.values().sum(), pos, 1e-9);
    EXPECT_NEAR(img.negative.count.values().sum(), neg, 1e-9);
  }
}

TEST(Accumulate, ZeroFlowWarpIdentity) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_partition(rng, k8, 25);
    auto img = accumulate_warped_images(p, warp_events(p, zero_flow(k8), 1.0), 1.0);
    Image pos = Image::Zero(8, 8), neg = Image::Zero(8, 8);
    for (const Event& e : p.events) (e.p > 0 ? pos : neg)(e.y, e.x) += 1;
    EXPECT_TRUE((img.positive.count.image() == pos).all());
    EXPECT_TRUE((img.negative.count.image() == neg).all());
  }
}

TEST(Accumulate, GradientsWithRespectToFlow) {
  std::mt19937_64 rng(25);
  const SensorGeometry g{8, 8};
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_partition(rng, g, 20);
    const double t_ref = trial % 2 ? 1.0 : 0.0;
    const Tensor flow = test::smooth_random_flow(rng, p, 2.3, {t_ref});
    const Eigen::ArrayXd w = uniform_array(rng, 64, -1, 1);
    auto count_fn = test::contract(
        [&](auto& in) { return accumulate_warped_images(p, warp_events(p, in[0], t_ref), t_ref).positive.count; }, w);
    auto time_fn = test::contract(
        [&](auto& in) {
          return accumulate_warped_images(p, warp_events(p, in[0], t_ref), t_ref).negative.average_timestamp;
        },
        w);
    EXPECT_LT(gradient_error(count_fn, {flow}), 1e-5);
    EXPECT_LT(gradient_error(time_fn, {flow}), 1e-5);
  }
}

TEST(Fwl, ZeroFlowIsOneAndEmptyThrows) {
  std::mt19937_64 rng(26);
  auto p = random_partition(rng, k8, 40);
  EXPECT_EQ(fwl(p, FlowField(8, 8)), 1.0);
  EventPartition empty;
  empty.geometry = k8;
  EXPECT_THROW(fwl(empty, FlowField(8, 8)), std::domain_error);
}

TEST(Fwl, TranslatingBarSharpensWithTrueFlow) {
  SyntheticScene scene;
  scene.geometry = {32, 32};
  scene.pattern = Image::Zero(32, 32);
  scene.pattern.block(0, 8, 32, 4) = 1.0;
  scene.vx = 40;
  scene.contrast = 0.25;
  scene.duration = 0.25;
  auto stream = generate_events(scene, suggested_timestep(scene));
  auto parts = partition_by_count(stream, stream.events.size() / 2);
  ASSERT_FALSE(parts.empty());
  auto p = normalize_timestamps(parts[0]);
  const FlowField gt = ground_truth_flow(scene, p);
  const double with_gt = fwl(p, gt);
  EXPECT_GT(with_gt, 1.0);
  // Variance computed independently from the counts image.
  Tensor warped = warp_events(p, flow_tensor(gt), 1.0);
  auto img = accumulate_warped_images(p, warped, 1.0);
  const Image combined = img.positive.count.image() + img.negative.count.image();
  const Image raw = event_count_image(p);
  EXPECT_NEAR(with_gt, population_variance(combined) / population_variance(raw), 1e-12);
}
