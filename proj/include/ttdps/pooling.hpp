#pragma once

// Orthonormal 2x2 pooling between ladder levels. A level-k vector is an
// image of side n/2^k stored row-major. The restriction U^T sums each 2x2
// block and halves it, so U^T U = I and U^T x = 2 * avg_pool(x).

#include <cmath>
#include <string>

#include <Eigen/Core>

#include "ttdps/errors.hpp"
#include "ttdps/grid.hpp"
#include "ttdps/score.hpp"

namespace ttdps {

inline int side_of(Eigen::Index dim) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(dim))));
  detail::require(static_cast<Eigen::Index>(side) * side == dim,
                  "vector length " + std::to_string(dim) + " is not a square image");
  return side;
}

/// One level down: U^T x.
inline Vector project_level(const Vector& x) {
  const int n = side_of(x.size());
  detail::require(n % 2 == 0, "cannot pool an image of odd side " + std::to_string(n));
  const int m = n / 2;
  Vector out(static_cast<Eigen::Index>(m) * m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      const Eigen::Index p = static_cast<Eigen::Index>(2 * a) * n + 2 * b;
      out[a * m + b] = 0.5 * (x[p] + x[p + 1] + x[p + n] + x[p + n + 1]);
    }
  return out;
}

/// k levels down.
inline Vector project_levels(Vector x, int k) {
  for (int i = 0; i < k; ++i) x = project_level(x);
  return x;
}

/// One level up: U y (each coarse value spread over its block, scaled 1/2).
inline Vector lift_level(const Vector& y) {
  const int m = side_of(y.size());
  const int n = 2 * m;
  Vector out(static_cast<Eigen::Index>(n) * n);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      const double v = 0.5 * y[a * m + b];
      const Eigen::Index p = static_cast<Eigen::Index>(2 * a) * n + 2 * b;
      out[p] = out[p + 1] = out[p + n] = out[p + n + 1] = v;
    }
  return out;
}

inline Vector lift_levels(Vector y, int k) {
  for (int i = 0; i < k; ++i) y = lift_level(y);
  return y;
}

/// x - U U^T x: the part of x invisible one level down.
inline Vector orth_complement(const Vector& x) { return x - lift_level(project_level(x)); }

/// Physical velocity raster of a level-k diffusion coordinate vector
/// (divides out the 2^k orthonormal scale).
inline Raster to_physical(const Vector& x, int level) {
  const int n = side_of(x.size());
  Raster r(Grid2D::unchecked(n));
  const double scale = std::ldexp(1.0, -level);
  for (Eigen::Index i = 0; i < x.size(); ++i) r[static_cast<std::size_t>(i)] = scale * x[i];
  return r;
}

/// Level-k coordinates of a physical raster already pooled to level k.
inline Vector from_physical(const Raster& r, int level) {
  Vector x(static_cast<Eigen::Index>(r.size()));
  const double scale = std::ldexp(1.0, level);
  for (std::size_t i = 0; i < r.size(); ++i) x[static_cast<Eigen::Index>(i)] = scale * r[i];
  return x;
}

}  // namespace ttdps
