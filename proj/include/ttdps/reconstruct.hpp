#pragma once

// Diffusion posterior sampling with PDE-based guidance, in full space and on
// the coarse-to-fine subspace ladder. Both samplers share one step function,
// so a ladder whose coarse levels own no steps reproduces the full-space
// trajectory exactly.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ttdps/adjoint.hpp"
#include "ttdps/diffusion.hpp"
#include "ttdps/eikonal.hpp"
#include "ttdps/errors.hpp"
#include "ttdps/grid.hpp"
#include "ttdps/pooling.hpp"
#include "ttdps/rng.hpp"
#include "ttdps/score.hpp"
#include "ttdps/subspace.hpp"

namespace ttdps {

enum class StepMode { kFixed, kResidualProportional, kResidualNormalized };
enum class JacobianMode { kExactVjp, kJacobianFree };

inline std::string_view to_string(StepMode m) {
  switch (m) {
    case StepMode::kFixed: return "fixed";
    case StepMode::kResidualProportional: return "residual-proportional";
    case StepMode::kResidualNormalized: return "residual-normalized";
  }
  return "?";
}

inline StepMode parse_step_mode(std::string_view s) {
  if (s == "fixed") return StepMode::kFixed;
  if (s == "residual-proportional") return StepMode::kResidualProportional;
  if (s == "residual-normalized") return StepMode::kResidualNormalized;
  throw InvalidArgument("unknown step mode '" + std::string(s) + "'");
}

inline std::string_view to_string(JacobianMode m) {
  return m == JacobianMode::kExactVjp ? "exact-vjp" : "jacobian-free";
}

inline JacobianMode parse_jacobian_mode(std::string_view s) {
  if (s == "exact-vjp") return JacobianMode::kExactVjp;
  if (s == "jacobian-free") return JacobianMode::kJacobianFree;
  throw InvalidArgument("unknown jacobian mode '" + std::string(s) + "'");
}

struct SamplerConfig {
  NoiseSchedule schedule;
  /// Reverse steps between T_end and eps_final.
  int steps = 500;
  double rho = 1.0;
  /// Optional per-level multipliers on rho (index = ladder level).
  std::vector<double> level_rho;
  StepMode step_mode = StepMode::kResidualProportional;
  /// Negative selects 4 h^2 on each level's grid.
  double mu = -1.0;
  JacobianMode jacobian_mode = JacobianMode::kExactVjp;
  double c_min = kMinVelocity;
  double c_max = kMaxVelocity;
  /// eps_final / T_end.
  double eps_ratio = 1e-3;
  std::uint64_t seed = 0;
  unsigned threads = 0;

  void validate() const {
    schedule.validate();
    detail::require(rho >= 0.0, "rho must be non-negative");
    detail::require(steps >= 10, "need at least 10 reverse steps");
    detail::require(eps_ratio > 0.0 && eps_ratio < 1.0, "eps_final must lie in (0, T_end)");
    detail::require(kMinVelocity <= c_min && c_min < c_max && c_max <= kMaxVelocity,
                    "clamp range must lie inside [0.01, 1]");
    for (double r : level_rho) detail::require(r >= 0.0, "per-level rho must be non-negative");
  }

  double eps_final() const { return eps_ratio * schedule.t_end; }
  double rho_at(int level) const {
    return level < static_cast<int>(level_rho.size()) ? rho * level_rho[level] : rho;
  }
};

struct ReconstructionResult {
  VelocityField velocity;
  /// Misfit of the denoised estimate at every step (every iteration for L-BFGS).
  std::vector<double> history;
  /// Effective guidance scale rho' used at every step.
  std::vector<double> step_sizes;
  /// Ladder level of every step.
  std::vector<int> step_levels;
  std::vector<double> level_seconds;
  double total_seconds = 0.0;
  long long solver_calls = 0;
  double final_misfit = 0.0;
  bool line_search_failed = false;
  std::uint64_t seed = 0;
  SamplerConfig config;
};

/// Everything one guided step produces.
struct Guidance {
  Vector direction;    // added to the prior score in the drift
  Vector prior_score;  // s(x_t, t)
  double misfit = 0.0;
  double residual_norm = 0.0;
  double step_size = 0.0;
};

/// Guidance term -rho' d/dx_t E(clamp(x0_hat / 2^k)), with x0_hat from
/// Tweedie. `step` only labels errors.
inline Guidance likelihood_grad(const DiffusionState& state, const ScoreFunction& score_fn,
                                const MeasurementMatrix& y_k, const SourceReceiverConfig& config_k,
                                const SamplerConfig& cfg, int step = -1) {
  detail::require(score_fn.level() == state.level && config_k.level == state.level,
                  "state, score and configuration levels differ");
  detail::require(static_cast<std::size_t>(state.x.size()) == config_k.grid.size(),
                  "state dimension does not match the level grid");
  const NoiseSchedule& s = cfg.schedule;
  Guidance g;
  g.prior_score = score_fn.score(state.x, state.t);
  const double ab = s.alpha_bar(state.t);
  const Vector x0 = tweedie(state.x, state.t, g.prior_score, s);

  const double scale = std::ldexp(1.0, state.level);
  Raster c(config_k.grid);
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    const double v = x0[i] / scale;
    if (!std::isfinite(v))
      throw NumericalFailure("non-finite denoised estimate at step " + std::to_string(step));
    c[static_cast<std::size_t>(i)] = std::clamp(v, cfg.c_min, cfg.c_max);
  }
  const double mu = cfg.mu < 0.0 ? default_mu(config_k.grid) : cfg.mu;
  const MisfitEvaluation ev = evaluate_misfit(c, config_k, y_k, mu, cfg.threads);
  g.misfit = ev.misfit;
  g.residual_norm = ev.residual_norm;

  const double rho = cfg.rho_at(state.level);
  switch (cfg.step_mode) {
    case StepMode::kFixed: g.step_size = rho; break;
    case StepMode::kResidualProportional: g.step_size = rho * ev.residual_norm; break;
    case StepMode::kResidualNormalized: g.step_size = rho / std::max(ev.residual_norm, 1e-8); break;
  }
  if (g.step_size == 0.0) {
    g.direction = Vector::Zero(state.x.size());
    return g;
  }

  Vector w(state.x.size());
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w[i] = ev.gradient.values[static_cast<std::size_t>(i)] / scale;
  Vector back = w;
  if (cfg.jacobian_mode == JacobianMode::kExactVjp) back += (1.0 - ab) * score_fn.vjp(state.x, state.t, w);
  g.direction = (-g.step_size / std::sqrt(ab)) * back;
  if (!g.direction.allFinite())
    throw NumericalFailure("non-finite guidance at step " + std::to_string(step));
  return g;
}

/// Tweedie estimate at the final time eps.
inline Vector final_denoise(const DiffusionState& state, const ScoreFunction& score_fn,
                            const NoiseSchedule& s, double eps) {
  return tweedie(state.x, eps, score_fn.score(state.x, eps), s);
}

inline Vector final_denoise(const DiffusionState& state, const ScoreFunction& score_fn,
                            const NoiseSchedule& s) {
  return final_denoise(state, score_fn, s, 1e-3 * s.t_end);
}

namespace detail {

/// Index of the grid time nearest t on t_i = T_end - i dt, kept inside
/// [0, steps - 1] so the finest level always owns at least one step.
inline int snap_to_grid(double t, double t_end, double dt, int steps) {
  const long i = std::lround((t_end - t) / dt);
  return static_cast<int>(std::clamp<long>(i, 0, steps - 1));
}

inline ReconstructionResult run_ladder(const MeasurementMatrix& y, const SourceReceiverConfig& config,
                                       const SubspaceLadder* ladder,
                                       const std::vector<const ScoreFunction*>& scores,
                                       const SamplerConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  const auto run_start = Clock::now();
  cfg.validate();
  validate(config);
  check_shapes(config, y);
  const NoiseSchedule& s = cfg.schedule;
  const int K = ladder ? ladder->depth() : 0;
  require(static_cast<int>(scores.size()) == K + 1, "one score function per ladder level required");
  if (ladder) {
    ladder->validate(s);
    require(ladder->side == config.grid.n, "ladder side does not match the grid");
  }
  for (int k = 0; k <= K; ++k) {
    require(scores[k] != nullptr && scores[k]->level() == k, "score for level " + std::to_string(k) + " missing");
    const Eigen::Index side = config.grid.n >> k;
    require(static_cast<Eigen::Index>(scores[k]->dimension()) == side * side,
            "score for level " + std::to_string(k) + " has the wrong dimension");
  }

  const int N = cfg.steps;
  const double eps = cfg.eps_final();
  const double dt = (s.t_end - eps) / N;
  auto grid_time = [&](int i) { return i == N ? eps : s.t_end - i * dt; };

  // bound[k] = first step owned by a level finer than k; bound[0] = N.
  std::vector<int> bound(K + 2, 0);
  bound[0] = N;
  for (int k = 1; k <= K; ++k) bound[k] = snap_to_grid(ladder->times[k - 1], s.t_end, dt, N);
  bound[K + 1] = 0;
  for (int k = 1; k <= K; ++k) bound[k] = std::min(bound[k], bound[k - 1]);

  std::vector<MeasurementMatrix> y_k(K + 1);
  std::vector<SourceReceiverConfig> cfg_k(K + 1);
  for (int k = 0; k <= K; ++k) {
    y_k[k] = pool_measurements(y, k);
    cfg_k[k] = coarsen_config(config, k);
  }

  ReconstructionResult res;
  res.seed = cfg.seed;
  res.config = cfg;
  res.level_seconds.assign(K + 1, 0.0);
  res.history.reserve(N);

  int level = 0;
  for (int k = K; k >= 0; --k)
    if (bound[k] > bound[k + 1]) {
      level = k;
      break;
    }
  DiffusionState st;
  st.level = level;
  st.t = s.t_end;
  st.x = Vector(static_cast<Eigen::Index>(scores[level]->dimension()));
  RngStream init(cfg.seed, StreamPurpose::kInit, 0);
  init.fill_normal(std::span<double>(st.x.data(), static_cast<std::size_t>(st.x.size())));

  for (int k = level; k >= 0; --k) {
    if (k < level) {
      // Boundary t_{k+1}: lift with matched orthogonal noise.
      const auto t0 = Clock::now();
      RngStream inject(cfg.seed, StreamPurpose::kInject, static_cast<std::uint64_t>(k + 1));
      const double sigma = sigma_marginal(ladder->orth_energy[k], st.t, s);
      st.x = inject_up(st.x, sigma, inject);
      st.level = k;
      res.level_seconds[k] += std::chrono::duration<double>(Clock::now() - t0).count();
    }
    const auto t0 = Clock::now();
    RngStream noise(cfg.seed, StreamPurpose::kReverse, static_cast<std::uint64_t>(k));
    for (int i = bound[k + 1]; i < bound[k]; ++i) {
      const Guidance g = likelihood_grad(st, *scores[k], y_k[k], cfg_k[k], cfg, i);
      st = reverse_step_with(st, grid_time(i) - grid_time(i + 1), g.prior_score + g.direction, s, noise);
      st.t = grid_time(i + 1);
      if (!st.x.allFinite()) throw NumericalFailure("non-finite state at step " + std::to_string(i));
      res.history.push_back(g.misfit);
      res.step_sizes.push_back(g.step_size);
      res.step_levels.push_back(k);
      res.solver_calls += 2 * static_cast<long long>(cfg_k[k].transmitters.size());
    }
    res.level_seconds[k] += std::chrono::duration<double>(Clock::now() - t0).count();
  }

  const auto t0 = Clock::now();
  const Vector x0 = final_denoise(st, *scores[0], s, eps);
  Raster c(config.grid);
  for (Eigen::Index i = 0; i < x0.size(); ++i) c[static_cast<std::size_t>(i)] = x0[i];
  res.velocity = VelocityField::clamped(std::move(c), cfg.c_min, cfg.c_max);
  res.final_misfit = misfit(res.velocity.raster(), config, y, cfg.threads);
  res.solver_calls += static_cast<long long>(config.transmitters.size());
  res.level_seconds[0] += std::chrono::duration<double>(Clock::now() - t0).count();
  res.total_seconds = std::chrono::duration<double>(Clock::now() - run_start).count();
  return res;
}

}  // namespace detail

/// Full-space posterior sampling.
inline ReconstructionResult dps_run(const MeasurementMatrix& y, const SourceReceiverConfig& config,
                                    const ScoreFunction& score_fn, const SamplerConfig& cfg) {
  return detail::run_ladder(y, config, nullptr, {&score_fn}, cfg);
}

/// Coarse-to-fine posterior sampling. scores[k] serves level k.
inline ReconstructionResult subspace_dps_run(const MeasurementMatrix& y,
                                             const SourceReceiverConfig& config,
                                             const SubspaceLadder& ladder,
                                             const std::vector<const ScoreFunction*>& scores,
                                             const SamplerConfig& cfg) {
  return detail::run_ladder(y, config, &ladder, scores, cfg);
}

}  // namespace ttdps
