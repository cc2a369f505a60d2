#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ttdps/metrics.hpp"
#include "ttdps/rng.hpp"

using namespace ttdps;

namespace {

Raster random_raster(int n, std::uint64_t seed) {
  RngStream rng(seed, StreamPurpose::kMonteCarlo);
  Raster r(build_grid(n));
  for (double& v : r.values()) v = rng.uniform();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ttdps_metrics_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Rmse, HandCases) {
  const Raster a = random_raster(16, 1);
  EXPECT_EQ(rmse(a, a), 0.0);
  Raster b = a;
  for (double& v : b.values()) v += 0.1;
  EXPECT_NEAR(rmse(a, b), 0.1, 1e-15);
  EXPECT_THROW(rmse(a, random_raster(8, 1)), InvalidArgument);
}

TEST(Rmse, MatchesDirectSum) {
  const Raster a = random_raster(16, 2), b = random_raster(16, 3);
  long double acc = 0;
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) acc += (long double)(a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
  EXPECT_NEAR(rmse(a, b), std::sqrt(static_cast<double>(acc / 256)), 1e-12);
}

TEST(Ssim, IdenticalImagesGiveOne) {
  const Raster a = random_raster(32, 4);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, ConstantImagesClosedForm) {
  const Grid2D g = build_grid(16);
  const double c1 = 1e-4;
  // Zero variances: the contrast-structure factor is C2/C2 = 1.
  const double expected = (2 * 0.3 * 0.7 + c1) / (0.3 * 0.3 + 0.7 * 0.7 + c1);
  EXPECT_NEAR(ssim(Raster(g, 0.3), Raster(g, 0.7)), expected, 1e-12);
}

TEST(Ssim, SymmetricAndBounded) {
  const Raster a = random_raster(32, 5), b = random_raster(32, 6);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_GE(ssim(a, b), -1.0);
  EXPECT_LE(ssim(a, b), 1.0);
  EXPECT_LT(ssim(a, b), 0.5);
}

TEST(Ssim, RejectsSmallImages) {
  const Raster a = random_raster(8, 7);
  EXPECT_THROW(ssim(a, a), InvalidArgument);
}

TEST(Evaluate, PerfectResultsAndAggregates) {
  const fs::path res = scratch("res"), truth = scratch("truth");
  std::vector<double> rm;
  for (int i = 0; i < 3; ++i) {
    const Raster t = random_raster(16, 10 + i);
    Raster r = t;
    for (double& v : r.values()) v = std::clamp(v + 0.05 * (i + 1), 0.0, 1.0);
    write_raster(truth / ("s" + std::to_string(i) + ".f32"), t);
    write_raster(res / ("s" + std::to_string(i) + ".f32"), r);
    rm.push_back(rmse(read_raster(res / ("s" + std::to_string(i) + ".f32")).raster,
                      read_raster(truth / ("s" + std::to_string(i) + ".f32")).raster));
  }
  const EvalReport rep = evaluate(res, truth, "dps");
  ASSERT_EQ(rep.entries.size(), 3u);
  EXPECT_NEAR(rep.mean_rmse, (rm[0] + rm[1] + rm[2]) / 3, 1e-15);
  EXPECT_EQ(rep.median_rmse, rm[1]);
  const EvalReport self = evaluate(truth, truth);
  EXPECT_EQ(self.mean_rmse, 0.0);
  EXPECT_NEAR(self.mean_ssim, 1.0, 1e-12);
  // Byte-stable outputs.
  EXPECT_EQ(report_csv(rep), report_csv(evaluate(res, truth, "dps")));
  EXPECT_EQ(to_json(rep).dump(), to_json(evaluate(res, truth, "dps")).dump());
  EXPECT_EQ(report_csv(rep).substr(0, 13), "id,rmse,ssim\n");
  fs::remove_all(res);
  fs::remove_all(truth);
}

TEST(Evaluate, UnpairedIdsAreListed) {
  const fs::path res = scratch("res2"), truth = scratch("truth2");
  write_raster(truth / "a.f32", random_raster(16, 1));
  write_raster(truth / "b.f32", random_raster(16, 2));
  write_raster(res / "a.f32", random_raster(16, 1));
  try {
    evaluate(res, truth);
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("b (no result)"), std::string::npos);
  }
  fs::remove_all(res);
  fs::remove_all(truth);
}

TEST(Median, OddAndEven) {
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_THROW(median({}), InvalidArgument);
}
