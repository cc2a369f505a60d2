#pragma once

// Adjoint-state gradient of the travel-time misfit
//
//   E(c) = 1/2 sum_k || y_obs[:, k] - T_k |_receivers ||^2
//
// The adjoint field is obtained by sweeping the fast-marching pop order
// backwards. Writing D_p = sum over the recorded upwind neighbours u of
// (T_p - T_u), the sweep solves the upwind flux balance
//
//   lambda_p D_p = sum_{q downwind of p} lambda_q (T_q - T_p) + residual_p
//
// which is the conservative discretisation of div(lambda grad T) = 0 with
// the receiver flux lambda dT/dn = y_obs - T. With this scaling the ascent
// gradient is g = sum_k lambda_k / c^3 and dE = <g, dc> h^2.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "ttdps/eikonal.hpp"
#include "ttdps/errors.hpp"
#include "ttdps/grid.hpp"
#include "ttdps/parallel.hpp"

namespace ttdps {

struct AdjointField {
  Raster values;
  Node source;
};

struct MisfitGradient {
  Raster values;
  double mu = 0.0;
  bool smoothed = false;
};

/// Default smoothing strength, about a two-cell correlation length.
inline double default_mu(const Grid2D& g) { return 4.0 * g.h * g.h; }

namespace detail {

inline void check_shapes(const SourceReceiverConfig& config, const MeasurementMatrix& y) {
  require(y.rows() == static_cast<int>(config.receivers.size()) &&
              y.cols() == static_cast<int>(config.transmitters.size()),
          "measurement shape " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
              " does not match configuration " + std::to_string(config.receivers.size()) + "x" +
              std::to_string(config.transmitters.size()));
}

/// Largest one-sided outward normal derivative over the sides a boundary
/// node lies on.
inline double normal_derivative(const Raster& T, Node p) {
  const int n = T.side();
  const double h = T.grid().h;
  double best = 0.0;
  auto consider = [&](double d) {
    if (std::abs(d) > std::abs(best)) best = d;
  };
  if (p.col == 0) consider((T(p.row, 0) - T(p.row, 1)) / h);
  if (p.col == n - 1) consider((T(p.row, n - 1) - T(p.row, n - 2)) / h);
  if (p.row == 0) consider((T(0, p.col) - T(1, p.col)) / h);
  if (p.row == n - 1) consider((T(n - 1, p.col) - T(n - 2, p.col)) / h);
  return best;
}

}  // namespace detail

inline double misfit(const MeasurementMatrix& predicted, const MeasurementMatrix& y_obs) {
  detail::require(predicted.same_shape(y_obs), "measurement shapes differ");
  double e = 0.0;
  for (std::size_t i = 0; i < y_obs.values().size(); ++i) {
    const double r = y_obs.values()[i] - predicted.values()[i];
    e += r * r;
  }
  return 0.5 * e;
}

inline double misfit(const Raster& c, const SourceReceiverConfig& config,
                     const MeasurementMatrix& y_obs, unsigned threads = 0) {
  detail::check_shapes(config, y_obs);
  return misfit(forward_map(c, config, threads), y_obs);
}

/// Adjoint field for one source. `residual[r]` is y_obs - T at receiver r.
inline AdjointField solve_adjoint(const TravelTimeField& T, const CausalOrder& order,
                                  std::span<const Node> receivers,
                                  std::span<const double> residual) {
  const Grid2D& g = T.values.grid();
  const std::size_t size = g.size();
  detail::require(order.order.size() == size && order.stencil.size() == size &&
                      order.in_disk.size() == size,
                  "causal order does not match travel-time grid");
  detail::require(order.source == T.source, "causal order belongs to a different source");
  detail::require(receivers.size() == residual.size(), "one residual per receiver required");

  const auto& t = T.values;
  // dE/dT accumulated in reverse pop order.
  std::vector<double> dE_dT(size, 0.0);
  for (std::size_t r = 0; r < receivers.size(); ++r) {
    detail::require(on_grid(g, receivers[r]), "receiver off grid");
    if (std::abs(detail::normal_derivative(t, receivers[r])) < 1e-12)
      throw DegenerateBoundary("vanishing normal derivative of T at receiver " + std::to_string(r));
    dE_dT[flat_index(g, receivers[r])] -= residual[r];
  }

  Raster lambda(g, 0.0);
  for (auto it = order.order.rbegin(); it != order.order.rend(); ++it) {
    const std::int32_t p = *it;
    if (order.in_disk[p]) continue;
    const Stencil st = order.stencil[p];
    const double da = st.x_nb >= 0 ? t[p] - t[st.x_nb] : 0.0;
    const double db = st.y_nb >= 0 ? t[p] - t[st.y_nb] : 0.0;
    const double D = da + db;
    const double w = dE_dT[p];
    if (w == 0.0) continue;
    if (st.x_nb >= 0) dE_dT[st.x_nb] += w * da / D;
    if (st.y_nb >= 0) dE_dT[st.y_nb] += w * db / D;
    lambda[p] = -w / D;
  }

  // Disk nodes depend only on the source speed: T = dist / c_s.
  const Node s = order.source;
  double dE_dcs = 0.0;
  for (std::size_t p = 0; p < size; ++p) {
    if (!order.in_disk[p] || dE_dT[p] == 0.0) continue;
    const int row = static_cast<int>(p) / g.n, col = static_cast<int>(p) % g.n;
    const double dist = g.h * std::hypot(row - s.row, col - s.col);
    dE_dcs -= dE_dT[p] * dist / (order.source_speed * order.source_speed);
  }
  const double cs = order.source_speed;
  lambda[flat_index(g, s)] += dE_dcs * cs * cs * cs / (g.h * g.h);
  return {std::move(lambda), T.source};
}

/// Unsmoothed ascent gradient sum_k lambda_k / c^3. Nodes clamped to c_min
/// by the forward solver carry no sensitivity.
inline MisfitGradient gradient_raw(const Raster& c, std::span<const AdjointField> fields) {
  Raster out(c.grid(), 0.0);
  for (const auto& f : fields) {
    detail::require(f.values.grid() == c.grid(), "adjoint field grid mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += f.values[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double ci = c[i];
    out[i] = ci < kMinVelocity ? 0.0 : out[i] / (ci * ci * ci);
  }
  return {std::move(out), 0.0, false};
}

namespace detail {

/// (I - mu Laplacian) u with the 5-point stencil and reflecting boundary.
inline void apply_screened(const Raster& u, double coef, Raster& out) {
  const int n = u.side();
  for (int r = 0; r < n; ++r) {
    for (int q = 0; q < n; ++q) {
      const double c = u(r, q);
      double acc = 0.0;
      if (q > 0) acc += c - u(r, q - 1);
      if (q < n - 1) acc += c - u(r, q + 1);
      if (r > 0) acc += c - u(r - 1, q);
      if (r < n - 1) acc += c - u(r + 1, q);
      out(r, q) = c + coef * acc;
    }
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace detail

/// Solves (I - mu Laplacian) u = g, homogeneous Neumann boundary, by
/// conjugate gradients to relative residual 1e-10.
inline MisfitGradient elliptic_smooth(const Raster& g, double mu) {
  detail::require(mu >= 0.0, "smoothing strength must be non-negative");
  if (mu == 0.0) return {g, 0.0, true};
  const double h = g.grid().h;
  const double coef = mu / (h * h);
  const std::size_t size = g.size();

  Raster x(g.grid(), 0.0);
  Raster r = g;
  Raster p = g;
  Raster Ap(g.grid(), 0.0);
  const double b_norm = std::sqrt(detail::dot(g.values(), g.values()));
  if (b_norm == 0.0) return {x, mu, true};
  double rr = b_norm * b_norm;
  const double tol = 1e-10 * b_norm;
  const int max_iter = 10 * g.side();
  for (int it = 0; it < max_iter; ++it) {
    detail::apply_screened(p, coef, Ap);
    const double alpha = rr / detail::dot(p.values(), Ap.values());
    for (std::size_t i = 0; i < size; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * Ap[i];
    }
    const double rr_new = detail::dot(r.values(), r.values());
    if (!std::isfinite(rr_new)) throw NumericalFailure("elliptic smoothing diverged");
    if (std::sqrt(rr_new) <= tol) return {std::move(x), mu, true};
    const double beta = rr_new / rr;
    for (std::size_t i = 0; i < size; ++i) p[i] = r[i] + beta * p[i];
    rr = rr_new;
  }
  throw NumericalFailure("elliptic smoothing: CG did not converge in " + std::to_string(max_iter) +
                         " iterations");
}

/// Everything one guided step needs from the PDE side.
struct MisfitEvaluation {
  double misfit = 0.0;
  double residual_norm = 0.0;
  MeasurementMatrix predicted;
  MisfitGradient gradient;
};

/// Forward solves, adjoint solves, assembly and smoothing in one pass.
inline MisfitEvaluation evaluate_misfit(const Raster& c, const SourceReceiverConfig& config,
                                        const MeasurementMatrix& y_obs, double mu,
                                        unsigned threads = 0) {
  detail::check_shapes(config, y_obs);
  const auto solutions = solve_all(c, config, threads);
  MisfitEvaluation ev;
  ev.predicted = sample_receivers(solutions, config);
  ev.misfit = misfit(ev.predicted, y_obs);
  ev.residual_norm = std::sqrt(2.0 * ev.misfit);

  std::vector<AdjointField> fields(solutions.size());
  parallel_for(
      solutions.size(),
      [&](std::size_t k) {
        std::vector<double> residual(config.receivers.size());
        for (std::size_t r = 0; r < residual.size(); ++r)
          residual[r] = y_obs(static_cast<int>(r), static_cast<int>(k)) -
                        ev.predicted(static_cast<int>(r), static_cast<int>(k));
        fields[k] = solve_adjoint(solutions[k].travel_time, solutions[k].order, config.receivers,
                                  residual);
      },
      threads);
  ev.gradient = gradient_raw(c, fields);
  if (mu > 0.0) ev.gradient = elliptic_smooth(ev.gradient.values, mu);
  ev.gradient.mu = mu;
  ev.gradient.smoothed = mu > 0.0;
  return ev;
}

/// Smoothed ascent gradient of E in the H^1_mu metric.
inline MisfitGradient misfit_gradient(const Raster& c, const SourceReceiverConfig& config,
                                      const MeasurementMatrix& y_obs, double mu,
                                      unsigned threads = 0) {
  return evaluate_misfit(c, config, y_obs, mu, threads).gradient;
}

}  // namespace ttdps
