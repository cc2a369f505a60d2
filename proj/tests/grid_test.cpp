#include "ttdps/grid.hpp"

#include <gtest/gtest.h>

#include "ttdps/rng.hpp"

namespace ttdps {
namespace {

TEST(BuildGrid, SpacingFromNodeCount) {
  EXPECT_DOUBLE_EQ(build_grid(128).h, 1.0 / 127.0);
  EXPECT_DOUBLE_EQ(build_grid(8).h, 1.0 / 7.0);
  EXPECT_THROW(build_grid(100), InvalidArgument);
  EXPECT_THROW(build_grid(4), InvalidArgument);
  EXPECT_THROW(build_grid(2048), InvalidArgument);
}

TEST(BuildConfig, HorizontalShapes) {
  const auto cfg = build_config(Pattern::kHorizontal, build_grid(128), 12, 24);
  ASSERT_EQ(cfg.transmitters.size(), 12u);
  ASSERT_EQ(cfg.receivers.size(), 24u);
  for (Node t : cfg.transmitters) EXPECT_EQ(t.col, 0);
  for (Node r : cfg.receivers) EXPECT_EQ(r.col, 127);
}

TEST(BuildConfig, SurroundingSixAndTwentyFourPerSide) {
  const Grid2D g = build_grid(128);
  const auto cfg = build_config(Pattern::kSurrounding, g, 24, 96);
  ASSERT_EQ(cfg.transmitters.size(), 24u);
  ASSERT_EQ(cfg.receivers.size(), 96u);
  int bottom = 0, right = 0, top = 0, left = 0;
  for (Node t : cfg.transmitters) {
    bottom += t.row == 0;
    top += t.row == 127;
    left += t.col == 0;
    right += t.col == 127;
  }
  EXPECT_EQ(bottom, 6);
  EXPECT_EQ(right, 6);
  EXPECT_EQ(top, 6);
  EXPECT_EQ(left, 6);
  EXPECT_THROW(build_config(Pattern::kSurrounding, g, 6, 96), InvalidArgument);
}

TEST(BuildConfig, VerticalHandEvaluatedSlots) {
  const auto cfg = build_config(Pattern::kVertical, build_grid(8), 2, 4);
  ASSERT_EQ(cfg.transmitters.size(), 2u);
  EXPECT_EQ(cfg.transmitters[0], (Node{0, 2}));
  EXPECT_EQ(cfg.transmitters[1], (Node{0, 6}));
  const std::vector<Node> rx{{7, 1}, {7, 3}, {7, 5}, {7, 7}};
  EXPECT_EQ(cfg.receivers, rx);
}

TEST(BuildConfig, DeterministicAndOnBoundary) {
  for (Pattern p : {Pattern::kHorizontal, Pattern::kVertical, Pattern::kSurrounding}) {
    const Grid2D g = build_grid(64);
    const auto a = build_config(p, g, 12, 24);
    const auto b = build_config(p, g, 12, 24);
    EXPECT_EQ(a.transmitters, b.transmitters);
    EXPECT_EQ(a.receivers, b.receivers);
    for (Node q : a.transmitters) EXPECT_TRUE(on_boundary(g, q));
    for (Node q : a.receivers) EXPECT_TRUE(on_boundary(g, q));
  }
}

TEST(AvgPool, HandValues) {
  Raster r(Grid2D::unchecked(2), {1, 3, 5, 7});
  const Raster p = avg_pool(r);
  ASSERT_EQ(p.side(), 1);
  EXPECT_DOUBLE_EQ(p[0], 4.0);

  Raster c(build_grid(8), 0.37);
  const Raster pooled = avg_pool(c);
  for (double v : pooled.values()) EXPECT_DOUBLE_EQ(v, 0.37);
  EXPECT_THROW(avg_pool(Raster(Grid2D::with_nodes(5))), InvalidArgument);
}

TEST(AvgPool, TwiceEqualsFourByFourBlocks) {
  Raster ramp(build_grid(8));
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) ramp(r, c) = 3.0 * r + 0.5 * c * c;
  const Raster twice = avg_pool(avg_pool(ramp));
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      double s = 0.0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) s += ramp(4 * a + i, 4 * b + j);
      EXPECT_NEAR(twice(a, b), s / 16.0, 1e-12);
    }
}

TEST(AvgPool, PreservesMean) {
  RngStream rng(3, StreamPurpose::kMonteCarlo);
  Raster r(build_grid(32));
  for (double& v : r.values()) v = rng.uniform();
  EXPECT_NEAR(avg_pool(r).mean(), r.mean(), 1e-14);
}

TEST(PoolMeasurements, HandValues) {
  MeasurementMatrix y(4, 1);
  y(0, 0) = 1; y(1, 0) = 3; y(2, 0) = 5; y(3, 0) = 7;
  const auto p = pool_measurements(y, 1);
  ASSERT_EQ(p.rows(), 2);
  EXPECT_DOUBLE_EQ(p(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(p(1, 0), 6.0);
  const auto id = pool_measurements(y, 0);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(id(i, 0), y(i, 0));
  EXPECT_THROW(pool_measurements(y, -1), InvalidArgument);
  EXPECT_THROW(pool_measurements(y, 3), InvalidArgument);
}

TEST(PoolMeasurements, ConstantAndComposition) {
  MeasurementMatrix c(16, 3, 0.8);
  const auto pooled = pool_measurements(c, 2);
  for (double v : pooled.values()) EXPECT_DOUBLE_EQ(v, 0.8);

  RngStream rng(5, StreamPurpose::kMonteCarlo);
  MeasurementMatrix y(16, 3);
  for (double& v : y.values()) v = rng.uniform();
  const auto direct = pool_measurements(y, 3);
  const auto nested = pool_measurements(pool_measurements(y, 1), 2);
  ASSERT_TRUE(direct.same_shape(nested));
  for (std::size_t i = 0; i < direct.values().size(); ++i)
    EXPECT_NEAR(direct.values()[i], nested.values()[i], 1e-14);
}

TEST(CoarsenConfig, DevicesStayOnBoundary) {
  for (Pattern p : {Pattern::kHorizontal, Pattern::kVertical, Pattern::kSurrounding}) {
    const auto fine = build_config(p, build_grid(64), 24, 96 / (p == Pattern::kSurrounding ? 1 : 2));
    for (int k = 1; k <= 2; ++k) {
      const auto coarse = coarsen_config(fine, k);
      EXPECT_EQ(coarse.grid.n, 64 >> k);
      EXPECT_EQ(coarse.transmitters.size(), fine.transmitters.size());
      EXPECT_EQ(coarse.receivers.size(), fine.receivers.size() >> k);
      for (Node q : coarse.transmitters) EXPECT_TRUE(on_boundary(coarse.grid, q));
      for (Node q : coarse.receivers) EXPECT_TRUE(on_boundary(coarse.grid, q));
    }
  }
}

}  // namespace
}  // namespace ttdps
