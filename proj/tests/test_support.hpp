#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "ttdps/grid.hpp"
#include "ttdps/rng.hpp"

namespace ttdps::testing {

/// Sum of a few low-frequency cosines, scaled to unit max amplitude.
inline Raster smooth_random(const Grid2D& g, std::uint64_t seed, int modes = 4) {
  RngStream rng(seed, StreamPurpose::kMonteCarlo);
  Raster out(g, 0.0);
  double peak = 0.0;
  struct Mode { double kx, ky, phase, amp; };
  std::vector<Mode> ms;
  for (int m = 0; m < modes; ++m)
    ms.push_back({rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5), rng.uniform(0, 2 * std::numbers::pi),
                  rng.uniform(-1.0, 1.0)});
  for (int r = 0; r < g.n; ++r)
    for (int c = 0; c < g.n; ++c) {
      double v = 0.0;
      for (const auto& m : ms)
        v += m.amp * std::cos(std::numbers::pi * (m.kx * c * g.h + m.ky * r * g.h) + m.phase);
      out(r, c) = v;
      peak = std::max(peak, std::abs(v));
    }
  for (double& v : out.values()) v /= peak;
  return out;
}

inline Raster affine(const Raster& base, double offset, double scale) {
  Raster out = base;
  for (double& v : out.values()) v = offset + scale * v;
  return out;
}

inline Raster axpy(const Raster& x, double a, const Raster& y) {
  Raster out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * y[i];
  return out;
}

}  // namespace ttdps::testing
