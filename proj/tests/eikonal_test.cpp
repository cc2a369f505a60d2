#include "ttdps/eikonal.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_support.hpp"

namespace ttdps {
namespace {

double max_distance_error(int n, Node src) {
  const Grid2D g = Grid2D::with_nodes(n);
  const auto sol = solve_eikonal(Raster(g, 1.0), src);
  double err = 0.0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double d = g.h * std::hypot(r - src.row, c - src.col);
      err = std::max(err, std::abs(sol.travel_time.values(r, c) - d));
    }
  return err;
}

TEST(SolveEikonal, ZeroAtSourcePositiveElsewhere) {
  const Grid2D g = Grid2D::with_nodes(33);
  const Raster c = testing::affine(testing::smooth_random(g, 11), 0.5, 0.3);
  const Node src{5, 17};
  const auto sol = solve_eikonal(c, src);
  const auto& T = sol.travel_time.values;
  EXPECT_EQ(T.at(src), 0.0);
  for (int r = 0; r < g.n; ++r)
    for (int q = 0; q < g.n; ++q) {
      if (Node{r, q} != src) {
        EXPECT_GT(T(r, q), 0.0);
      }
    }
}

TEST(SolveEikonal, CornerSourceMatchesDistance) {
  EXPECT_LE(max_distance_error(65, {0, 0}), 0.05);
}

TEST(SolveEikonal, ErrorShrinksUnderRefinement) {
  const double coarse = max_distance_error(65, {32, 32});
  const double fine = max_distance_error(129, {64, 64});
  EXPECT_LE(coarse, 0.05);
  EXPECT_LE(fine / coarse, 0.75);
}

TEST(SolveEikonal, SpeedScalingIsExact) {
  const Grid2D g = Grid2D::with_nodes(33);
  const Raster c = testing::affine(testing::smooth_random(g, 4), 0.4, 0.2);
  const auto base = solve_eikonal(c, {16, 0});
  for (double alpha : {0.5, 2.0}) {
    const auto scaled = solve_eikonal(testing::affine(c, 0.0, alpha), {16, 0});
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double expect = base.travel_time.values[i] / alpha;
      EXPECT_NEAR(scaled.travel_time.values[i], expect, 1e-12 * std::max(1.0, expect));
    }
  }
  const auto half = solve_eikonal(Raster(g, 0.5), {3, 3});
  const auto unit = solve_eikonal(Raster(g, 1.0), {3, 3});
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_NEAR(half.travel_time.values[i], 2.0 * unit.travel_time.values[i], 1e-12);
}

TEST(SolveEikonal, CausalOrderIsMonotonePermutation) {
  const Grid2D g = Grid2D::with_nodes(33);
  const Raster c = testing::affine(testing::smooth_random(g, 9), 0.5, 0.45);
  const auto sol = solve_eikonal(c, {0, 20});
  const auto& order = sol.order.order;
  ASSERT_EQ(order.size(), g.size());
  std::vector<std::int32_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], static_cast<std::int32_t>(i));
  for (std::size_t i = 1; i < order.size(); ++i)
    EXPECT_LE(sol.travel_time.values[order[i - 1]], sol.travel_time.values[order[i]]);
}

TEST(SolveEikonal, RejectsBadInput) {
  const Grid2D g = Grid2D::with_nodes(9);
  EXPECT_THROW(solve_eikonal(Raster(g, 1.0), {9, 0}), InvalidArgument);
  Raster c(g, 1.0);
  c(4, 4) = 0.0;
  EXPECT_THROW(solve_eikonal(c, {0, 0}), InvalidArgument);
}

TEST(SolveEikonal, SlowValuesAreClampedToMinimumSpeed) {
  const Grid2D g = Grid2D::with_nodes(17);
  Raster slow(g, 0.5), floor(g, 0.5);
  slow(8, 8) = 1e-4;
  floor(8, 8) = kMinVelocity;
  const auto a = solve_eikonal(slow, {0, 0});
  const auto b = solve_eikonal(floor, {0, 0});
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_EQ(a.travel_time.values[i], b.travel_time.values[i]);
}

TEST(ForwardMap, UnitSpeedMatchesDistances) {
  const Grid2D g = Grid2D::with_nodes(65);
  const auto cfg = build_config(Pattern::kHorizontal, g, 12, 24);
  const auto y = forward_map(Raster(g, 1.0), cfg);
  ASSERT_EQ(y.rows(), 24);
  ASSERT_EQ(y.cols(), 12);
  for (int r = 0; r < y.rows(); ++r)
    for (int k = 0; k < y.cols(); ++k) {
      const Node a = cfg.receivers[r], b = cfg.transmitters[k];
      EXPECT_NEAR(y(r, k), g.h * std::hypot(a.row - b.row, a.col - b.col), 0.05);
    }
}

TEST(ForwardMap, CoincidentDevicesGiveZero) {
  const Grid2D g = Grid2D::with_nodes(17);
  SourceReceiverConfig cfg{Pattern::kHorizontal, g, {{0, 4}}, {{0, 4}}, 0};
  const auto y = forward_map(Raster(g, 0.7), cfg);
  EXPECT_EQ(y(0, 0), 0.0);
}

TEST(ForwardMap, FasterMediumNeverArrivesLater) {
  const Grid2D g = Grid2D::with_nodes(33);
  const auto cfg = build_config(Pattern::kSurrounding, g, 8, 32);
  const Raster c = testing::affine(testing::smooth_random(g, 21), 0.5, 0.3);
  Raster faster = c;
  const Raster bump = testing::affine(testing::smooth_random(g, 22), 0.06, 0.05);
  for (std::size_t i = 0; i < c.size(); ++i) faster[i] += bump[i];
  const auto slow = forward_map(c, cfg);
  const auto fast = forward_map(faster, cfg);
  for (std::size_t i = 0; i < slow.values().size(); ++i)
    EXPECT_LE(fast.values()[i], slow.values()[i] + 1e-15);
}

TEST(ForwardMap, ThreadCountDoesNotChangeResult) {
  const Grid2D g = Grid2D::with_nodes(33);
  const auto cfg = build_config(Pattern::kSurrounding, g, 8, 32);
  const Raster c = testing::affine(testing::smooth_random(g, 2), 0.5, 0.3);
  const auto a = forward_map(c, cfg, 1);
  const auto b = forward_map(c, cfg, 4);
  for (std::size_t i = 0; i < a.values().size(); ++i) EXPECT_EQ(a.values()[i], b.values()[i]);
}

}  // namespace
}  // namespace ttdps
