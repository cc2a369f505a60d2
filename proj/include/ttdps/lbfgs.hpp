#pragma once

// Projected L-BFGS on the travel-time misfit with a Gaussian-smoothed
// adjoint gradient. Deterministic baseline for the samplers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <numeric>
#include <vector>

#include "ttdps/adjoint.hpp"
#include "ttdps/errors.hpp"
#include "ttdps/grid.hpp"
#include "ttdps/reconstruct.hpp"

namespace ttdps {

struct LbfgsOptions {
  int max_iter = 30;
  int memory = 10;
  /// Gradient smoothing kernel std in cells; 0 disables smoothing.
  double sigma_g = 2.0;
  double c_min = kMinVelocity;
  double c_max = kMaxVelocity;
  double armijo_c1 = 1e-4;
  int max_halvings = 30;
  double rel_tol = 1e-8;
  /// Largest per-node change of the very first step.
  double first_step = 0.05;
  unsigned threads = 0;
};

/// Separable Gaussian blur, truncated at 3 sigma and renormalised near the
/// boundary.
inline Raster gaussian_blur(const Raster& in, double sigma_cells) {
  detail::require(sigma_cells >= 0.0, "blur width must be non-negative");
  if (sigma_cells == 0.0) return in;
  const int n = in.side();
  const int radius = static_cast<int>(std::ceil(3.0 * sigma_cells));
  std::vector<double> w(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) w[i + radius] = std::exp(-0.5 * i * i / (sigma_cells * sigma_cells));
  auto pass = [&](const Raster& src, bool along_rows) {
    Raster out(src.grid(), 0.0);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        double acc = 0.0, norm = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int rr = along_rows ? r : r + i;
          const int cc = along_rows ? c + i : c;
          if (rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
          acc += w[i + radius] * src(rr, cc);
          norm += w[i + radius];
        }
        out(r, c) = acc / norm;
      }
    return out;
  };
  return pass(pass(in, true), false);
}

inline ReconstructionResult lbfgs_run(const MeasurementMatrix& y, const SourceReceiverConfig& config,
                                      const VelocityField& init, const LbfgsOptions& opt = {}) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  detail::require(opt.max_iter >= 0 && opt.memory >= 1, "invalid L-BFGS options");
  detail::require(init.grid() == config.grid, "initial field does not match the configuration grid");
  detail::check_shapes(config, y);
  const std::size_t size = config.grid.size();
  const double h2 = config.grid.h * config.grid.h;

  ReconstructionResult res;
  res.level_seconds.assign(1, 0.0);
  long long calls = 0;
  auto evaluate = [&](const Raster& c) {
    calls += 2 * static_cast<long long>(config.transmitters.size());
    return evaluate_misfit(c, config, y, 0.0, opt.threads);
  };
  auto project = [&](Raster& c) {
    for (double& v : c.values()) v = std::clamp(v, opt.c_min, opt.c_max);
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  };

  Raster c = init.raster();
  project(c);
  MisfitEvaluation ev = evaluate(c);
  double E = ev.misfit;
  res.history.push_back(E);
  const Raster blurred0 = gaussian_blur(ev.gradient.values, opt.sigma_g);
  std::vector<double> g(blurred0.values().begin(), blurred0.values().end());

  struct Pair {
    std::vector<double> s, y;
    double rho;
  };
  std::deque<Pair> mem;

  auto steepest = [&](const std::vector<double>& grad) {
    double peak = 0.0;
    for (double v : grad) peak = std::max(peak, std::abs(v));
    std::vector<double> d(size, 0.0);
    if (peak > 0.0)
      for (std::size_t i = 0; i < size; ++i) d[i] = -grad[i] * opt.first_step / peak;
    return d;
  };
  auto two_loop = [&](const std::vector<double>& grad) {
    std::vector<double> q = grad;
    std::vector<double> alpha(mem.size());
    for (std::size_t j = mem.size(); j-- > 0;) {
      alpha[j] = mem[j].rho * dot(mem[j].s, q);
      for (std::size_t i = 0; i < size; ++i) q[i] -= alpha[j] * mem[j].y[i];
    }
    const Pair& last = mem.back();
    const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
    for (double& v : q) v *= gamma;
    for (std::size_t j = 0; j < mem.size(); ++j) {
      const double beta = mem[j].rho * dot(mem[j].y, q);
      for (std::size_t i = 0; i < size; ++i) q[i] += (alpha[j] - beta) * mem[j].s[i];
    }
    for (double& v : q) v = -v;
    return q;
  };

  for (int it = 0; it < opt.max_iter && E > 0.0; ++it) {
    std::vector<double> d = mem.empty() ? steepest(g) : two_loop(g);
    const std::vector<double> raw(ev.gradient.values.values().begin(), ev.gradient.values.values().end());
    if (dot(raw, d) >= 0.0) {
      mem.clear();
      d = steepest(g);
    }
    double step = 1.0;
    bool accepted = false;
    Raster trial = c;
    MisfitEvaluation trial_ev;
    for (int k = 0; k <= opt.max_halvings; ++k, step *= 0.5) {
      for (std::size_t i = 0; i < size; ++i) trial[i] = c[i] + step * d[i];
      project(trial);
      double slope = 0.0;
      for (std::size_t i = 0; i < size; ++i) slope += raw[i] * (trial[i] - c[i]);
      slope *= h2;
      trial_ev = evaluate(trial);
      if (trial_ev.misfit < E && trial_ev.misfit <= E + opt.armijo_c1 * std::min(slope, 0.0)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.line_search_failed = true;
      break;
    }
    const Raster blurred = gaussian_blur(trial_ev.gradient.values, opt.sigma_g);
    std::vector<double> g_new(blurred.values().begin(), blurred.values().end());
    Pair pr{std::vector<double>(size), std::vector<double>(size), 0.0};
    for (std::size_t i = 0; i < size; ++i) {
      pr.s[i] = trial[i] - c[i];
      pr.y[i] = g_new[i] - g[i];
    }
    const double sy = dot(pr.s, pr.y);
    if (sy > 1e-12 * std::sqrt(dot(pr.s, pr.s) * dot(pr.y, pr.y))) {
      pr.rho = 1.0 / sy;
      mem.push_back(std::move(pr));
      if (static_cast<int>(mem.size()) > opt.memory) mem.pop_front();
    }
    const double rel = (E - trial_ev.misfit) / E;
    c = std::move(trial);
    ev = std::move(trial_ev);
    E = ev.misfit;
    g = std::move(g_new);
    res.history.push_back(E);
    if (rel < opt.rel_tol) break;
  }

  res.velocity = VelocityField::clamped(std::move(c), opt.c_min, opt.c_max);
  res.final_misfit = E;
  res.solver_calls = calls;
  res.total_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  res.level_seconds[0] = res.total_seconds;
  return res;
}

}  // namespace ttdps
