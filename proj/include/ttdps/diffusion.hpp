#pragma once

// Variance-preserving SDE with linear beta(t): noise schedule, perturbation
// kernel, Tweedie denoiser, Euler-Maruyama reverse step, and the denoising
// score-matching loss.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ttdps/errors.hpp"
#include "ttdps/rng.hpp"
#include "ttdps/score.hpp"

namespace ttdps {

struct NoiseSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  double t_end = 1.0;

  void validate() const {
    // beta_min == beta_max is allowed (constant-rate schedules).
    detail::require(beta_min > 0.0 && beta_min <= beta_max, "need 0 < beta_min <= beta_max");
    detail::require(t_end > 0.0, "diffusion horizon must be positive");
  }

  double beta(double t) const { return beta_min + t * (beta_max - beta_min); }

  /// exp(-int_0^t beta), closed form.
  double alpha_bar(double t) const {
    if (!(t >= 0.0 && t <= t_end * (1.0 + 1e-12)))
      throw InvalidArgument("time " + std::to_string(t) + " outside [0, " + std::to_string(t_end) +
                            "]");
    return std::exp(-beta_min * t - 0.5 * (beta_max - beta_min) * t * t);
  }
};

inline double alpha_bar(const NoiseSchedule& s, double t) { return s.alpha_bar(t); }

struct DiffusionState {
  Vector x;
  double t = 0.0;
  int level = 0;
};

/// sqrt(abar) x0 + sqrt(1 - abar) noise.
inline Vector perturb(const Vector& x0, double t, const Vector& noise, const NoiseSchedule& s) {
  detail::require(x0.size() == noise.size(), "noise shape does not match sample");
  const double ab = s.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

/// Posterior mean E[x0 | x_t] from the score at x_t.
inline Vector tweedie(const Vector& x_t, double t, const Vector& score_value,
                      const NoiseSchedule& s) {
  detail::require(x_t.size() == score_value.size(), "score shape does not match state");
  const double ab = s.alpha_bar(t);
  if (ab < 1e-12) throw NumericalFailure("Tweedie estimate undefined: alpha_bar below 1e-12");
  return (x_t + (1.0 - ab) * score_value) / std::sqrt(ab);
}

/// One Euler-Maruyama step of the reverse SDE from t to t - dt driven by a
/// precomputed drift score (prior score plus any guidance).
inline DiffusionState reverse_step_with(const DiffusionState& state, double dt,
                                        const Vector& drift_score, const NoiseSchedule& s,
                                        RngStream& rng) {
  detail::require(dt > 0.0, "step size must be positive");
  detail::require(state.t - dt >= -1e-12 * s.t_end, "step would cross t = 0");
  detail::require(drift_score.size() == state.x.size(), "score shape does not match state");
  const double b = s.beta(state.t);
  Vector z(state.x.size());
  rng.fill_normal(std::span<double>(z.data(), static_cast<std::size_t>(z.size())));
  DiffusionState next;
  next.x = state.x + (0.5 * b * state.x + b * drift_score) * dt + std::sqrt(b * dt) * z;
  next.t = std::max(0.0, state.t - dt);
  next.level = state.level;
  return next;
}

inline DiffusionState reverse_step(const DiffusionState& state, double dt,
                                   const ScoreFunction& score_fn, const NoiseSchedule& s,
                                   RngStream& rng) {
  return reverse_step_with(state, dt, score_fn.score(state.x, state.t), s, rng);
}

/// Unconditional sampler on a uniform grid from t_end down to t_stop.
inline DiffusionState sample_unconditional(const ScoreFunction& score_fn, const NoiseSchedule& s,
                                           int steps, double t_stop, RngStream& init,
                                           RngStream& noise) {
  detail::require(steps >= 1, "need at least one step");
  DiffusionState st;
  st.x = Vector(static_cast<Eigen::Index>(score_fn.dimension()));
  init.fill_normal(std::span<double>(st.x.data(), static_cast<std::size_t>(st.x.size())));
  st.t = s.t_end;
  st.level = score_fn.level();
  const double dt = (s.t_end - t_stop) / steps;
  for (int i = 0; i < steps; ++i) {
    const double t_next = i + 1 == steps ? t_stop : s.t_end - (i + 1) * dt;
    st = reverse_step(st, st.t - t_next, score_fn, s, noise);
    st.t = t_next;
  }
  return st;
}

/// Mean over the batch of || s(x_t, t) + noise / sqrt(1 - abar) ||^2.
inline double dsm_loss(const ScoreFunction& score_fn, std::span<const Vector> batch_x0,
                       std::span<const double> t_samples, std::span<const Vector> noise_samples,
                       const NoiseSchedule& s) {
  detail::require(!batch_x0.empty(), "empty batch");
  detail::require(t_samples.size() == batch_x0.size() && noise_samples.size() == batch_x0.size(),
                  "one time and one noise draw per sample required");
  double total = 0.0;
  for (std::size_t i = 0; i < batch_x0.size(); ++i) {
    const double t = t_samples[i];
    if (!(t > 0.0)) throw InvalidArgument("score-matching target undefined at t = 0");
    const double sigma = std::sqrt(1.0 - s.alpha_bar(t));
    const Vector xt = perturb(batch_x0[i], t, noise_samples[i], s);
    total += (score_fn.score(xt, t) + noise_samples[i] / sigma).squaredNorm();
  }
  return total / static_cast<double>(batch_x0.size());
}

}  // namespace ttdps
