#pragma once

// Uniform-grid geometry, rasters, transmitter/receiver layouts and the
// average-pooling operators used to move fields and data between levels.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttdps/errors.hpp"

namespace ttdps {

inline constexpr double kMinVelocity = 0.01;
inline constexpr double kMaxVelocity = 1.0;

/// Square grid of n x n nodes covering [0,1]^2 with spacing h = 1/(n-1).
/// Node (row, col) sits at x = col*h, y = row*h; storage is row-major.
struct Grid2D {
  int n = 0;
  double h = 0.0;

  /// Any grid with at least three nodes per side. Solver-level code accepts
  /// these; the diffusion ladder additionally needs power-of-two sides.
  static Grid2D with_nodes(int n) {
    detail::require(n >= 3, "grid needs at least 3 nodes per side, got " + std::to_string(n));
    return Grid2D{n, 1.0 / (n - 1)};
  }

  /// No size check; only for intermediate arrays smaller than a solver grid.
  static Grid2D unchecked(int n) { return Grid2D{n, n > 1 ? 1.0 / (n - 1) : 1.0}; }

  std::size_t size() const { return static_cast<std::size_t>(n) * static_cast<std::size_t>(n); }
  bool operator==(const Grid2D& o) const { return n == o.n; }
};

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

/// Grid with the power-of-two side length required for exact 2x pooling.
inline Grid2D build_grid(int n) {
  if (!is_power_of_two(n) || n < 8 || n > 1024)
    throw InvalidArgument("grid side must be a power of two in [8, 1024], got " +
                          std::to_string(n));
  return Grid2D::with_nodes(n);
}

struct Node {
  int row = 0;
  int col = 0;
  auto operator<=>(const Node&) const = default;
};

inline bool on_grid(const Grid2D& g, Node p) {
  return p.row >= 0 && p.col >= 0 && p.row < g.n && p.col < g.n;
}
inline bool on_boundary(const Grid2D& g, Node p) {
  return on_grid(g, p) && (p.row == 0 || p.col == 0 || p.row == g.n - 1 || p.col == g.n - 1);
}
inline std::size_t flat_index(const Grid2D& g, Node p) {
  return static_cast<std::size_t>(p.row) * static_cast<std::size_t>(g.n) +
         static_cast<std::size_t>(p.col);
}

/// n x n array of doubles bound to a grid.
class Raster {
 public:
  Raster() = default;
  explicit Raster(Grid2D grid, double fill = 0.0) : grid_(grid), values_(grid.size(), fill) {}
  Raster(Grid2D grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
    detail::require(values_.size() == grid_.size(), "raster value count does not match grid");
  }

  const Grid2D& grid() const { return grid_; }
  int side() const { return grid_.n; }
  std::size_t size() const { return values_.size(); }

  double& operator()(int row, int col) { return values_[static_cast<std::size_t>(row) * grid_.n + col]; }
  double operator()(int row, int col) const {
    return values_[static_cast<std::size_t>(row) * grid_.n + col];
  }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double at(Node p) const { return values_[flat_index(grid_, p)]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& data() { return values_; }
  const std::vector<double>& data() const { return values_; }

  double mean() const {
    return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
  }
  double min() const { return *std::min_element(values_.begin(), values_.end()); }
  double max() const { return *std::max_element(values_.begin(), values_.end()); }

 private:
  Grid2D grid_;
  std::vector<double> values_;
};

/// Wave speed raster with every value in [c_min, c_max].
class VelocityField {
 public:
  VelocityField() = default;

  /// Validates the range invariant; throws InvalidArgument on violation.
  explicit VelocityField(Raster r) : raster_(std::move(r)) {
    for (double v : raster_.values()) {
      if (!std::isfinite(v) || v < kMinVelocity || v > kMaxVelocity)
        throw InvalidArgument("velocity value " + std::to_string(v) + " outside [0.01, 1]");
    }
  }
  VelocityField(Grid2D grid, double value) : VelocityField(Raster(grid, value)) {}

  /// Clamps into [c_min, c_max]; non-finite entries are rejected.
  static VelocityField clamped(Raster r, double lo = kMinVelocity, double hi = kMaxVelocity) {
    for (double& v : r.values()) {
      if (!std::isfinite(v)) throw NumericalFailure("non-finite velocity value");
      v = std::clamp(v, lo, hi);
    }
    VelocityField out;
    out.raster_ = std::move(r);
    return out;
  }

  const Raster& raster() const { return raster_; }
  const Grid2D& grid() const { return raster_.grid(); }
  double operator[](std::size_t i) const { return raster_[i]; }
  double operator()(int row, int col) const { return raster_(row, col); }
  std::size_t size() const { return raster_.size(); }

 private:
  Raster raster_;
};

enum class Pattern { kHorizontal, kVertical, kSurrounding };

inline std::string_view to_string(Pattern p) {
  switch (p) {
    case Pattern::kHorizontal: return "horizontal";
    case Pattern::kVertical: return "vertical";
    case Pattern::kSurrounding: return "surrounding";
  }
  return "unknown";
}

inline Pattern parse_pattern(std::string_view s) {
  if (s == "horizontal") return Pattern::kHorizontal;
  if (s == "vertical") return Pattern::kVertical;
  if (s == "surrounding") return Pattern::kSurrounding;
  throw InvalidArgument("unknown configuration pattern '" + std::string(s) + "'");
}

/// Transmitter and receiver nodes on the boundary of a given grid.
struct SourceReceiverConfig {
  Pattern pattern = Pattern::kHorizontal;
  Grid2D grid;
  std::vector<Node> transmitters;
  std::vector<Node> receivers;
  int level = 0;
};

namespace detail {

/// Position of device i of m spread over a side of n nodes.
inline int device_slot(int i, int m, int n) {
  return static_cast<int>(std::floor((i + 0.5) * static_cast<double>(n) / m));
}

enum class Side { kBottom, kRight, kTop, kLeft };

inline Node side_node(Side s, int slot, int n) {
  switch (s) {
    case Side::kBottom: return {0, slot};
    case Side::kRight: return {slot, n - 1};
    case Side::kTop: return {n - 1, slot};
    case Side::kLeft: return {slot, 0};
  }
  return {};
}

inline void place(std::vector<Node>& out, Side s, int m, int n) {
  for (int i = 0; i < m; ++i) out.push_back(side_node(s, device_slot(i, m, n), n));
}

inline void check_devices(const Grid2D& g, const std::vector<Node>& nodes, std::string_view what) {
  require(!nodes.empty(), std::string(what) + " list is empty");
  std::set<Node> seen;
  for (Node p : nodes) {
    require(on_boundary(g, p), std::string(what) + " not on grid boundary");
    require(seen.insert(p).second, "duplicate " + std::string(what) + " node");
  }
}

}  // namespace detail

inline void validate(const SourceReceiverConfig& cfg) {
  detail::check_devices(cfg.grid, cfg.transmitters, "transmitter");
  detail::check_devices(cfg.grid, cfg.receivers, "receiver");
}

/// Evenly spaced devices: horizontal puts transmitters on the left edge and
/// receivers on the right, vertical puts transmitters on the bottom and
/// receivers on the top, surrounding spreads a quarter of each on every
/// side (bottom, right, top, left order).
inline SourceReceiverConfig build_config(Pattern pattern, const Grid2D& grid, int n_tx, int n_rx) {
  using detail::Side;
  detail::require(n_tx >= 1 && n_rx >= 1, "device counts must be positive");
  SourceReceiverConfig cfg{pattern, grid, {}, {}, 0};
  const int n = grid.n;
  switch (pattern) {
    case Pattern::kHorizontal:
      detail::require(n_tx <= n && n_rx <= n, "device count exceeds side length");
      detail::place(cfg.transmitters, Side::kLeft, n_tx, n);
      detail::place(cfg.receivers, Side::kRight, n_rx, n);
      break;
    case Pattern::kVertical:
      detail::require(n_tx <= n && n_rx <= n, "device count exceeds side length");
      detail::place(cfg.transmitters, Side::kBottom, n_tx, n);
      detail::place(cfg.receivers, Side::kTop, n_rx, n);
      break;
    case Pattern::kSurrounding:
      detail::require(n_tx % 4 == 0 && n_rx % 4 == 0,
                      "surrounding configuration needs device counts divisible by 4");
      detail::require(n_tx / 4 <= n && n_rx / 4 <= n, "device count exceeds side length");
      for (Side s : {Side::kBottom, Side::kRight, Side::kTop, Side::kLeft}) {
        detail::place(cfg.transmitters, s, n_tx / 4, n);
        detail::place(cfg.receivers, s, n_rx / 4, n);
      }
      break;
  }
  validate(cfg);
  return cfg;
}

/// First-arrival times; rows are receivers, columns are transmitters.
class MeasurementMatrix {
 public:
  MeasurementMatrix() = default;
  MeasurementMatrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(static_cast<std::size_t>(rows) * cols, fill) {
    receiver_ids.resize(rows);
    transmitter_ids.resize(cols);
    std::iota(receiver_ids.begin(), receiver_ids.end(), 0);
    std::iota(transmitter_ids.begin(), transmitter_ids.end(), 0);
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double& operator()(int r, int c) { return values_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return values_[static_cast<std::size_t>(r) * cols_ + c]; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool same_shape(const MeasurementMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::vector<int> receiver_ids;
  std::vector<int> transmitter_ids;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

/// One level of 2x2 average pooling.
inline Raster avg_pool(const Raster& in) {
  const int n = in.side();
  detail::require(n % 2 == 0, "avg_pool needs an even side length, got " + std::to_string(n));
  const int m = n / 2;
  Raster out(Grid2D::unchecked(m));
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      out(a, b) = 0.25 * (in(2 * a, 2 * b) + in(2 * a + 1, 2 * b) + in(2 * a, 2 * b + 1) +
                          in(2 * a + 1, 2 * b + 1));
  return out;
}

/// Averages consecutive groups of 2^k receiver rows. Trailing rows that do
/// not fill a whole group are dropped.
inline MeasurementMatrix pool_measurements(const MeasurementMatrix& y, int k) {
  detail::require(k >= 0, "pooling depth must be non-negative");
  if (k == 0) return y;
  const int group = 1 << k;
  detail::require(y.rows() >= group, "too few receivers for pooling depth " + std::to_string(k));
  const int rows = y.rows() / group;
  MeasurementMatrix out(rows, y.cols());
  out.transmitter_ids = y.transmitter_ids;
  for (int m = 0; m < rows; ++m) {
    out.receiver_ids[m] = m;
    for (int c = 0; c < y.cols(); ++c) {
      double s = 0.0;
      for (int i = 0; i < group; ++i) s += y(group * m + i, c);
      out(m, c) = s / group;
    }
  }
  return out;
}

/// The same devices seen from a grid pooled k times. Transmitters keep
/// their identity (index halved); receivers are grouped like the rows of
/// pool_measurements and placed at the rounded group mean.
inline SourceReceiverConfig coarsen_config(const SourceReceiverConfig& cfg, int k) {
  detail::require(k >= 0, "pooling depth must be non-negative");
  if (k == 0) return cfg;
  const int scale = 1 << k;
  detail::require(cfg.grid.n % scale == 0, "grid side not divisible by 2^k");
  const int m = cfg.grid.n / scale;
  detail::require(m >= 3, "coarse grid too small");
  SourceReceiverConfig out{cfg.pattern, Grid2D::with_nodes(m), {}, {}, cfg.level + k};
  auto snap = [m](double r, double c) {
    Node p{std::clamp(static_cast<int>(std::lround(r)), 0, m - 1),
           std::clamp(static_cast<int>(std::lround(c)), 0, m - 1)};
    // Nearest boundary node.
    const int d_bottom = p.row, d_top = m - 1 - p.row, d_left = p.col, d_right = m - 1 - p.col;
    const int d = std::min({d_bottom, d_top, d_left, d_right});
    if (d == 0) return p;
    if (d == d_bottom) p.row = 0;
    else if (d == d_top) p.row = m - 1;
    else if (d == d_left) p.col = 0;
    else p.col = m - 1;
    return p;
  };
  for (Node t : cfg.transmitters) out.transmitters.push_back(snap(t.row / scale, t.col / scale));
  const int groups = static_cast<int>(cfg.receivers.size()) / scale;
  detail::require(groups >= 1, "too few receivers for pooling depth " + std::to_string(k));
  for (int g = 0; g < groups; ++g) {
    double r = 0.0, c = 0.0;
    for (int i = 0; i < scale; ++i) {
      r += cfg.receivers[g * scale + i].row;
      c += cfg.receivers[g * scale + i].col;
    }
    out.receivers.push_back(snap(r / scale / scale, c / scale / scale));
  }
  return out;
}

}  // namespace ttdps
