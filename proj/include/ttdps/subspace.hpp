#pragma once

// Coarse-to-fine ladder: boundary-time noise injection, variance matching
// for the re-injected orthogonal component, the orthogonal Fisher
// divergence, and transition-time selection.

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ttdps/diffusion.hpp"
#include "ttdps/errors.hpp"
#include "ttdps/gmm.hpp"
#include "ttdps/parallel.hpp"
#include "ttdps/pooling.hpp"
#include "ttdps/rng.hpp"
#include "ttdps/score.hpp"

namespace ttdps {

inline constexpr int kMaxLadderDepth = 2;
inline constexpr double kDefaultFisherThreshold = 1e-3;

/// Levels 0..K of an image of side n. times[k-1] is t_k, where level k takes
/// over from level k-1 on the way up in t.
struct SubspaceLadder {
  int side = 0;
  std::vector<double> times;
  double threshold = kDefaultFisherThreshold;
  /// Per-transition orthogonal energy per coordinate, E||x0_perp||^2 / (d_{k-1} - d_k),
  /// used to match the injected noise variance.
  std::vector<double> orth_energy;

  int depth() const { return static_cast<int>(times.size()); }
  Eigen::Index dim(int k) const {
    const Eigen::Index m = side >> k;
    return m * m;
  }

  /// t_K may equal T_end (that level is then never visited).
  void validate(const NoiseSchedule& s) const {
    detail::require(depth() >= 1 && depth() <= kMaxLadderDepth,
                    "ladder depth must be between 1 and " + std::to_string(kMaxLadderDepth));
    detail::require(side > 0 && side % (1 << depth()) == 0 && (side >> depth()) >= 3,
                    "image side " + std::to_string(side) + " does not support " +
                        std::to_string(depth()) + " pooling levels");
    for (int k = 0; k < depth(); ++k) {
      detail::require(times[k] > 0.0 && times[k] <= s.t_end, "ladder times must lie in (0, T_end]");
      if (k > 0) detail::require(times[k] > times[k - 1], "ladder times must be strictly increasing");
    }
    detail::require(orth_energy.size() == times.size(), "one orthogonal energy per transition required");
    for (double e : orth_energy) detail::require(e >= 0.0, "orthogonal energy must be non-negative");
  }
};

/// U y + (I - U U^T) z with z ~ N(0, sigma I): the coarse content is kept
/// exactly and fresh noise fills the orthogonal complement.
inline Vector inject_up(const Vector& x_coarse, double sigma, RngStream& rng) {
  detail::require(sigma >= 0.0, "injection variance must be non-negative");
  const Vector up = lift_level(x_coarse);
  Vector z(up.size());
  rng.fill_normal(std::span<double>(z.data(), static_cast<std::size_t>(z.size())), std::sqrt(sigma));
  return up + orth_complement(z);
}

/// E||orth_complement(x0)||^2 / (d_{k-1} - d_k) for level-(k-1) samples.
inline double orth_energy_per_coord(std::span<const Vector> samples) {
  detail::require(!samples.empty(), "empty dataset");
  double e = 0.0;
  for (const auto& x : samples) e += orth_complement(x).squaredNorm();
  const double removed = 0.75 * static_cast<double>(samples.front().size());
  return e / static_cast<double>(samples.size()) / removed;
}

/// Same quantity in closed form for a mixture at level k-1.
inline double orth_energy_per_coord(const GmmPrior& prior_km1) {
  return prior_km1.expected_orth_energy() / (0.75 * static_cast<double>(prior_km1.dimension()));
}

/// Variance of each orthogonal coordinate of x_t: abar e + 1 - abar.
inline double sigma_marginal(double orth_energy, double t, const NoiseSchedule& s) {
  const double ab = s.alpha_bar(t);
  return ab * orth_energy + 1.0 - ab;
}

/// Dataset form. Samples are level-(k-1) vectors.
inline double sigma_marginal(std::span<const Vector> samples, double t, const NoiseSchedule& s) {
  return sigma_marginal(orth_energy_per_coord(samples), t, s);
}

/// Prior form. `prior` lives at full resolution; k is the coarser level of
/// the (k-1, k) pair.
inline double sigma_marginal(const GmmPrior& prior, int k, double t, const NoiseSchedule& s) {
  detail::require(k >= 1, "level pair needs k >= 1");
  return sigma_marginal(orth_energy_per_coord(project_gmm(prior, k - 1)), t, s);
}

/// Draws one level-(k-1) clean sample.
using SampleSource = std::function<Vector(RngStream&)>;

inline SampleSource source_from(const GmmPrior& prior_km1) {
  return [prior_km1](RngStream& rng) { return prior_km1.sample(rng); };
}

inline SampleSource source_from(std::vector<Vector> samples) {
  detail::require(!samples.empty(), "empty dataset");
  return [data = std::move(samples)](RngStream& rng) {
    return data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(data.size()) - 1))];
  };
}

struct FisherEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Monte-Carlo orthogonal Fisher divergence at one time
///   Sigma / (d_{k-1} - d_k) E|| P s(x_t, t) + x_t_perp / Sigma ||^2
/// with P = I - U U^T applied to the level-(k-1) score.
inline FisherEstimate fisher_divergence(const ScoreFunction& score_km1, const SampleSource& source,
                                        double orth_energy, double t, const NoiseSchedule& s,
                                        int sample_count, std::uint64_t seed, unsigned threads = 0) {
  detail::require(sample_count >= 16, "fisher divergence needs at least 16 samples");
  const double sigma = sigma_marginal(orth_energy, t, s);
  const double removed = 0.75 * static_cast<double>(score_km1.dimension());
  std::vector<double> term(static_cast<std::size_t>(sample_count));
  parallel_for(
      term.size(),
      [&](std::size_t i) {
        RngStream rng(seed, StreamPurpose::kFisher, i);
        const Vector x0 = source(rng);
        detail::require(static_cast<std::size_t>(x0.size()) == score_km1.dimension(),
                        "sample dimension does not match the score");
        Vector noise(x0.size());
        rng.fill_normal(std::span<double>(noise.data(), static_cast<std::size_t>(noise.size())));
        const Vector xt = perturb(x0, t, noise, s);
        term[i] = (orth_complement(score_km1.score(xt, t)) + orth_complement(xt) / sigma).squaredNorm();
      },
      threads);
  double mean = 0.0;
  for (double v : term) mean += v;
  mean /= sample_count;
  double var = 0.0;
  for (double v : term) var += (v - mean) * (v - mean);
  var /= (sample_count - 1);
  const double scale = sigma / removed;
  return {scale * mean, scale * std::sqrt(var / sample_count)};
}

struct FisherCurve {
  std::vector<double> times;
  std::vector<double> values;
  std::vector<double> stderrs;
  int sample_count = 0;
};

inline FisherCurve fisher_curve(const ScoreFunction& score_km1, const SampleSource& source,
                                double orth_energy, std::span<const double> times,
                                const NoiseSchedule& s, int sample_count, std::uint64_t seed,
                                unsigned threads = 0) {
  FisherCurve c;
  c.sample_count = sample_count;
  for (std::size_t i = 0; i < times.size(); ++i) {
    // Distinct streams per grid time keep points independent.
    const auto est = fisher_divergence(score_km1, source, orth_energy, times[i], s, sample_count,
                                       seed * 1000003ULL + i, threads);
    c.times.push_back(times[i]);
    c.values.push_back(est.value);
    c.stderrs.push_back(est.standard_error);
  }
  return c;
}

inline void write_fisher_csv(std::ostream& out, const FisherCurve& c) {
  out << "t,D_F,stderr\n";
  out.precision(17);
  for (std::size_t i = 0; i < c.times.size(); ++i)
    out << c.times[i] << ',' << c.values[i] << ',' << c.stderrs[i] << '\n';
}

/// Earliest grid time at which each curve is at or below the threshold.
/// curves[k-1] describes the (k-1, k) transition.
inline std::vector<double> select_times(std::span<const FisherCurve> curves,
                                        double threshold = kDefaultFisherThreshold) {
  detail::require(!curves.empty(), "no Fisher curves supplied");
  std::vector<double> out;
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& c = curves[k];
    detail::require(c.times.size() == c.values.size(), "curve times and values differ in length");
    bool found = false;
    for (std::size_t i = 0; i < c.times.size(); ++i) {
      if (c.values[i] <= threshold) {
        out.push_back(c.times[i]);
        found = true;
        break;
      }
    }
    if (!found)
      throw ScheduleInfeasible("Fisher curve for transition " + std::to_string(k + 1) +
                               " never reaches threshold " + std::to_string(threshold));
    if (k > 0 && !(out[k] > out[k - 1]))
      throw ScheduleInfeasible("selected transition times are not strictly increasing");
  }
  return out;
}

}  // namespace ttdps
