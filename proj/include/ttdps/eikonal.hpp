#pragma once

// First-order fast marching for c |grad T| = 1 with a point source, plus the
// discrete forward map sampling travel times at the receivers.
//
// Each node's final value satisfies exactly one of
//   disk node:   T = |x - x_s| / c(x_s)            (within 3h of the source)
//   one-sided:   T - T_a = h / c
//   two-sided:   (T - T_a)^2 + (T - T_b)^2 = (h / c)^2
// where a / b are the accepted upwind neighbours recorded in the stencil at
// acceptance. The adjoint solver differentiates these same equations.

#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <utility>
#include <vector>

#include "ttdps/errors.hpp"
#include "ttdps/grid.hpp"
#include "ttdps/parallel.hpp"

namespace ttdps {

/// Radius, in cells, of the disk initialised with the exact constant-speed
/// solution.
inline constexpr double kSourceDiskCells = 3.0;

/// Upwind neighbours (flat indices, -1 when unused) that produced a node's
/// accepted value.
struct Stencil {
  std::int32_t x_nb = -1;
  std::int32_t y_nb = -1;
};

/// Acceptance history of one fast-marching solve.
struct CausalOrder {
  std::vector<std::int32_t> order;    // node indices in heap pop order
  std::vector<Stencil> stencil;       // per node, indexed by flat index
  std::vector<std::uint8_t> in_disk;  // per node: 1 if disk-initialised
  Node source;
  double source_speed = 0.0;
};

struct TravelTimeField {
  Raster values;
  Node source;
};

struct EikonalSolution {
  TravelTimeField travel_time;
  CausalOrder order;
};

namespace detail {

inline std::vector<double> checked_speeds(const Raster& c) {
  std::vector<double> speed(c.values().begin(), c.values().end());
  for (double& v : speed) {
    if (!std::isfinite(v) || v <= 0.0)
      throw InvalidArgument("velocity must be positive and finite, got " + std::to_string(v));
    v = std::max(v, kMinVelocity);
  }
  return speed;
}

}  // namespace detail

/// Fast marching solve from a source node. Speeds below c_min are raised to
/// c_min; non-positive speeds are rejected.
inline EikonalSolution solve_eikonal(const Raster& c, Node source) {
  const Grid2D& g = c.grid();
  detail::require(on_grid(g, source), "source node off grid");
  const std::vector<double> speed = detail::checked_speeds(c);
  const int n = g.n;
  const double h = g.h;
  const std::size_t size = g.size();
  constexpr double kInf = std::numeric_limits<double>::infinity();

  std::vector<double> T(size, kInf);
  std::vector<std::uint8_t> accepted(size, 0);
  CausalOrder co;
  co.stencil.assign(size, Stencil{});
  co.in_disk.assign(size, 0);
  co.order.reserve(size);
  co.source = source;
  co.source_speed = speed[flat_index(g, source)];

  // Exact solution inside the source disk. Disk values are fixed but still
  // pass through the heap so the pop order stays monotone in T.
  using Entry = std::pair<double, std::int32_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  const double radius = kSourceDiskCells * h * (1.0 + 1e-12);
  const int reach = static_cast<int>(kSourceDiskCells) + 1;
  for (int r = std::max(0, source.row - reach); r <= std::min(n - 1, source.row + reach); ++r) {
    for (int q = std::max(0, source.col - reach); q <= std::min(n - 1, source.col + reach); ++q) {
      const double dist = h * std::hypot(r - source.row, q - source.col);
      if (dist <= radius) {
        const auto idx = static_cast<std::int32_t>(r * n + q);
        T[idx] = dist / co.source_speed;
        co.in_disk[idx] = 1;
        heap.emplace(T[idx], idx);
      }
    }
  }

  auto update = [&](std::int32_t p) {
    if (co.in_disk[p]) return;
    const int row = p / n, col = p % n;
    double a = kInf, b = kInf;
    std::int32_t ia = -1, ib = -1;
    for (int dc : {-1, 1}) {
      const int q = col + dc;
      if (q < 0 || q >= n) continue;
      const std::int32_t j = p + dc;
      if (accepted[j] && T[j] < a) a = T[j], ia = j;
    }
    for (int dr : {-1, 1}) {
      const int r = row + dr;
      if (r < 0 || r >= n) continue;
      const std::int32_t j = p + dr * n;
      if (accepted[j] && T[j] < b) b = T[j], ib = j;
    }
    const double f = h / speed[p];
    double value;
    Stencil st;
    if (ia >= 0 && ib >= 0 && std::abs(a - b) < f) {
      value = 0.5 * (a + b + std::sqrt(2.0 * f * f - (a - b) * (a - b)));
      st = {ia, ib};
    } else if (ia >= 0 && (ib < 0 || a <= b)) {
      value = a + f;
      st = {ia, -1};
    } else {
      value = b + f;
      st = {-1, ib};
    }
    if (value < T[p]) {
      T[p] = value;
      co.stencil[p] = st;
      heap.emplace(value, p);
    }
  };

  while (!heap.empty()) {
    const auto [t, p] = heap.top();
    heap.pop();
    if (accepted[p]) continue;
    accepted[p] = 1;
    co.order.push_back(p);
    const int row = p / n, col = p % n;
    if (col > 0 && !accepted[p - 1]) update(p - 1);
    if (col < n - 1 && !accepted[p + 1]) update(p + 1);
    if (row > 0 && !accepted[p - n]) update(p - n);
    if (row < n - 1 && !accepted[p + n]) update(p + n);
  }

  return {TravelTimeField{Raster(g, std::move(T)), source}, std::move(co)};
}

inline EikonalSolution solve_eikonal(const VelocityField& c, Node source) {
  return solve_eikonal(c.raster(), source);
}

/// One solve per transmitter, indexed like config.transmitters.
inline std::vector<EikonalSolution> solve_all(const Raster& c, const SourceReceiverConfig& config,
                                              unsigned threads = 0) {
  detail::require(c.grid() == config.grid, "velocity grid does not match configuration grid");
  std::vector<EikonalSolution> out(config.transmitters.size());
  parallel_for(
      out.size(), [&](std::size_t k) { out[k] = solve_eikonal(c, config.transmitters[k]); },
      threads);
  return out;
}

inline MeasurementMatrix sample_receivers(const std::vector<EikonalSolution>& solutions,
                                          const SourceReceiverConfig& config) {
  MeasurementMatrix y(static_cast<int>(config.receivers.size()),
                      static_cast<int>(config.transmitters.size()));
  for (std::size_t k = 0; k < solutions.size(); ++k)
    for (std::size_t r = 0; r < config.receivers.size(); ++r)
      y(static_cast<int>(r), static_cast<int>(k)) =
          solutions[k].travel_time.values.at(config.receivers[r]);
  return y;
}

/// Noise-free travel times: entry (r, k) is the first arrival at receiver r
/// from transmitter k.
inline MeasurementMatrix forward_map(const Raster& c, const SourceReceiverConfig& config,
                                     unsigned threads = 0) {
  return sample_receivers(solve_all(c, config, threads), config);
}

inline MeasurementMatrix forward_map(const VelocityField& c, const SourceReceiverConfig& config,
                                     unsigned threads = 0) {
  return forward_map(c.raster(), config, threads);
}

}  // namespace ttdps
