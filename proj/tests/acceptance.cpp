// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "ttdps/adjoint.hpp"
#include "ttdps/denoiser.hpp"
#include "ttdps/diffusion.hpp"
#include "ttdps/eikonal.hpp"
#include "ttdps/gmm.hpp"
#include "ttdps/lbfgs.hpp"
#include "ttdps/metrics.hpp"
#include "ttdps/phantoms.hpp"
#include "ttdps/reconstruct.hpp"
#include "ttdps/subspace.hpp"

using namespace ttdps;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!ok) detail << " [failed: " << what << "]";
  }
};

Vector randn(RngStream& rng, Eigen::Index d, double scale = 1.0) {
  Vector v(d);
  rng.fill_normal(std::span<double>(v.data(), static_cast<std::size_t>(d)), scale);
  return v;
}

double time_for_alpha_bar(const NoiseSchedule& s, double ab) {
  const double a = 0.5 * (s.beta_max - s.beta_min), b = s.beta_min, c = std::log(ab);
  return (-b + std::sqrt(b * b - 4 * a * c)) / (2 * a);
}

// ---- 1

double distance_error(int n) {
  const Grid2D g = Grid2D::with_nodes(n);
  const Node src{n / 2, n / 2};
  const auto sol = solve_eikonal(Raster(g, 1.0), src);
  double err = 0.0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      err = std::max(err, std::abs(sol.travel_time.values(r, c) - g.h * std::hypot(r - src.row, c - src.col)));
  return err;
}

void eikonal(Outcome& o) {
  const auto t0 = Clock::now();
  const double e65 = distance_error(65), e129 = distance_error(129);
  const double secs = seconds_since(t0);
  o.detail << "Linf(65)=" << e65 << " Linf(129)/Linf(65)=" << e129 / e65 << " time=" << secs << "s";
  o.check(e65 <= 0.05, "Linf(65) <= 0.05");
  o.check(e129 / e65 <= 0.75, "refinement ratio <= 0.75");
  o.check(secs < 1.0, "runtime < 1 s");
}

// ---- 2

double adjoint_median_error(int n, Pattern p) {
  using testing::affine;
  using testing::axpy;
  using testing::smooth_random;
  const Grid2D g = Grid2D::with_nodes(n);
  const bool around = p == Pattern::kSurrounding;
  const auto cfg = build_config(p, g, around ? 4 : 3, around ? 16 : 8);
  const Raster c = affine(smooth_random(g, 2000 + n), 0.5, 0.2);
  const auto y = forward_map(affine(smooth_random(g, 1000 + n), 0.55, 0.3), cfg, 1);
  const auto ev = evaluate_misfit(c, cfg, y, 0.0, 1);
  std::vector<double> errs;
  for (int d = 0; d < 5; ++d) {
    const Raster dc = smooth_random(g, 500 + d);
    const double eps = 1e-4;
    const double fd = (misfit(axpy(c, eps, dc), cfg, y, 1) - misfit(axpy(c, -eps, dc), cfg, y, 1)) / (2 * eps);
    double adj = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) adj += ev.gradient.values[i] * dc[i];
    adj *= g.h * g.h;
    errs.push_back(std::abs(adj - fd) / std::abs(fd));
  }
  return median(errs);
}

void adjoint(Outcome& o) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int n : {17, 33})
    for (Pattern p : {Pattern::kHorizontal, Pattern::kVertical, Pattern::kSurrounding}) {
      const double e = adjoint_median_error(n, p);
      o.detail << to_string(p) << n << "=" << e << " ";
      worst = std::max(worst, e);
    }
  const double secs = seconds_since(t0);
  o.detail << "time=" << secs << "s";
  o.check(worst <= 0.02, "median relative error <= 2%");
  o.check(secs < 30.0, "runtime < 30 s");
}

// ---- 3

void diffusion(Outcome& o) {
  const NoiseSchedule s;
  const double ab_err = std::abs(s.alpha_bar(1.0) - std::exp(-10.05));

  const Vector m = Vector::LinSpaced(6, -0.5, 0.8);
  const double s0sq = 0.4;
  const GmmPrior gauss({{1.0, m, Covariance::make_isotropic(6, s0sq)}});
  RngStream rng(2, StreamPurpose::kMonteCarlo);
  double tw_err = 0.0;
  for (double t : {0.05, 0.3, 0.7}) {
    const Vector xt = randn(rng, 6);
    const double ab = s.alpha_bar(t), v = ab * s0sq + 1.0 - ab;
    const Vector expect = m * (1.0 - ab) / v + std::sqrt(ab) * s0sq * xt / v;
    tw_err = std::max(tw_err, (tweedie(xt, t, gmm_score(gauss, xt, t, s), s) - expect).cwiseAbs().maxCoeff());
  }

  std::vector<Vector> x0, noise;
  std::vector<double> ts;
  RngStream tr(4, StreamPurpose::kTraining);
  for (int i = 0; i < 8; ++i) {
    x0.push_back(randn(tr, 5));
    noise.push_back(randn(tr, 5));
    ts.push_back(tr.uniform(0.05, 1.0));
  }
  LambdaScore conditional(5, [&](const Vector& x, double t) -> Vector {
    for (std::size_t i = 0; i < x0.size(); ++i)
      if (ts[i] == t) return -noise[i] / std::sqrt(1.0 - s.alpha_bar(t));
    return Vector::Zero(x.size());
  });
  const double dsm = dsm_loss(conditional, x0, ts, noise, s);
  o.detail << "|abar(1)-exp(-10.05)|=" << ab_err << " tweedie=" << tw_err << " dsm=" << dsm;
  o.check(ab_err <= 1e-12, "alpha_bar(1)");
  o.check(tw_err <= 1e-10, "Tweedie Gaussian posterior mean");
  o.check(dsm <= 1e-12, "DSM loss of the exact conditional score");
}

// ---- 4

GmmPrior random_gmm(std::uint64_t seed, Eigen::Index d) {
  RngStream rng(seed, StreamPurpose::kMonteCarlo);
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Eigen::MatrixXd full = a * a.transpose() / static_cast<double>(d);
  full.diagonal().array() += 0.2;
  Vector diag(d);
  for (Eigen::Index i = 0; i < d; ++i) diag[i] = rng.uniform(0.2, 1.5);
  Eigen::MatrixXd w(d, 2);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.5 * rng.normal();
  const Vector m0 = randn(rng, d), m1 = randn(rng, d), m2 = randn(rng, d);
  return GmmPrior({{0.5, m0, Covariance::make_full(full)},
                   {0.3, m1, Covariance::make_diagonal(diag)},
                   {0.2, m2, Covariance::make_low_rank(w, 0.3)}});
}

void gmm(Outcome& o) {
  const NoiseSchedule s;
  double worst_score = 0.0, worst_vjp = 0.0;
  for (int d = 4; d <= 16; d += 4) {
    const GmmPrior p = random_gmm(100 + d, d);
    RngStream rng(d, StreamPurpose::kMonteCarlo);
    for (double t : {0.02, 0.2, 0.6}) {
      const Vector x = randn(rng, d), v = randn(rng, d);
      const double eps = 1e-5;
      const Vector sc = gmm_score(p, x, t, s);
      Vector fd(d);
      for (int i = 0; i < d; ++i) {
        const Vector e = eps * Vector::Unit(d, i);
        fd[i] = (gmm_log_density(p, x + e, t, s) - gmm_log_density(p, x - e, t, s)) / (2 * eps);
      }
      worst_score = std::max(worst_score, (sc - fd).norm() / sc.norm());
      const Vector jv = gmm_vjp(p, x, t, v, s);
      const Vector fdj = (gmm_score(p, x + eps * v, t, s) - gmm_score(p, x - eps * v, t, s)) / (2 * eps);
      worst_vjp = std::max(worst_vjp, (jv - fdj).norm() / jv.norm());
    }
  }
  const Vector m = Vector::LinSpaced(6, -1.0, 2.0);
  const GmmPrior sym({{0.5, m, Covariance::make_isotropic(6, 0.3)}, {0.5, -m, Covariance::make_isotropic(6, 0.3)}});
  bool zero = true;
  for (double t : {0.01, 0.5, 1.0}) zero = zero && gmm_score(sym, Vector::Zero(6), t, s) == Vector::Zero(6);
  o.detail << "score rel err=" << worst_score << " vjp rel err=" << worst_vjp << " symmetric zero=" << zero;
  o.check(worst_score <= 1e-5, "score vs finite differences");
  o.check(worst_vjp <= 1e-5, "VJP vs finite differences");
  o.check(zero, "symmetric modes give an exactly zero score");
}

// ---- 5

void subspace_algebra(Outcome& o) {
  double ortho = 0.0, noisy_inject = 0.0, pyth = 0.0;
  bool exact = true;
  RngStream rng(5, StreamPurpose::kMonteCarlo);
  for (int side : {4, 8, 16, 32}) {
    const Eigen::Index d = static_cast<Eigen::Index>(side) * side;
    Eigen::MatrixXd u(d, d / 4);  // columns are lifted unit vectors
    for (Eigen::Index j = 0; j < d / 4; ++j) u.col(j) = lift_level(Vector::Unit(d / 4, j));
    ortho = std::max(ortho, (u.transpose() * u - Eigen::MatrixXd::Identity(d / 4, d / 4)).cwiseAbs().maxCoeff());
    for (int i = 0; i < 10; ++i) {
      const Vector y = randn(rng, d / 4);
      exact = exact && project_level(inject_up(y, 0.0, rng)) == y;
      noisy_inject = std::max(noisy_inject, (project_level(inject_up(y, 0.7, rng)) - y).cwiseAbs().maxCoeff());
      const Vector x = randn(rng, d);
      pyth = std::max(pyth, std::abs(x.squaredNorm() - project_level(x).squaredNorm() -
                                     orth_complement(x).squaredNorm()));
    }
  }
  // White noise has unit orthogonal energy, so its marginal stays at 1 for every t.
  const NoiseSchedule s;
  std::vector<Vector> white;
  RngStream wr(6, StreamPurpose::kMonteCarlo);
  for (int i = 0; i < 10000; ++i) white.push_back(randn(wr, 64));
  double worst_sigma = 0.0;
  for (double t : {0.05, 0.3, 0.7, 1.0})
    worst_sigma = std::max(worst_sigma, std::abs(sigma_marginal(white, t, s) - 1.0));
  o.detail << "|U^T U - I|=" << ortho << " project(inject)=y exact=" << exact << " (noisy " << noisy_inject
           << ") pythagoras=" << pyth << " |sigma_white-1|=" << worst_sigma;
  o.check(ortho <= 1e-12, "orthonormal restriction");
  o.check(exact && noisy_inject <= 1e-12, "project after inject is the identity");
  o.check(pyth <= 1e-10, "Pythagoras");
  o.check(worst_sigma <= 0.05, "white-noise sigma_marginal within 5%");
}

// ---- 6

void fisher(Outcome& o) {
  const NoiseSchedule s;
  const GmmPrior prior({{1.0, Vector::Zero(64), Covariance::make_isotropic(64, 1.0)}});
  const GmmScore score(prior, s);
  double worst = 0.0;
  for (int i = 1; i <= 10; ++i) {
    const double t = 0.1 * i;
    worst = std::max(worst, fisher_divergence(score, source_from(prior), orth_energy_per_coord(prior), t, s, 4096, 1)
                                .value);
  }
  const int points = 10001;
  FisherCurve c;
  for (int i = 0; i < points; ++i) {
    c.times.push_back(static_cast<double>(i) / (points - 1));
    c.values.push_back(std::exp(-10.0 * c.times.back()));
    c.stderrs.push_back(0.0);
  }
  const double picked = select_times(std::vector<FisherCurve>{c}, 1e-3).front();
  const double exact = std::log(1000.0) / 10.0;
  o.detail << "max D_F=" << worst << " selected=" << picked << " analytic=" << exact;
  o.check(worst <= 1e-3, "D_F <= 1e-3 for the exact isotropic score");
  o.check(picked >= exact && picked - exact <= 1.0 / (points - 1), "earliest crossing to grid resolution");
}

// ---- 7

void ladder_collapse(Outcome& o) {
  const int n = 16;
  const Grid2D g = Grid2D::with_nodes(n);
  const NoiseSchedule s;
  const Eigen::Index d = n * n;
  Eigen::MatrixXd w(d, 3);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      w(r * n + c, 0) = 0.04 * std::cos(std::numbers::pi * (c + 0.5) / n);
      w(r * n + c, 1) = 0.04 * std::cos(std::numbers::pi * (r + 0.5) / n);
      w(r * n + c, 2) = 0.04 * std::cos(std::numbers::pi * (r + c + 1.0) / n);
    }
  const GmmPrior prior({{1.0, Vector::Constant(d, 0.5), Covariance::make_low_rank(w, 1e-4)}});
  const auto cfg = build_config(Pattern::kSurrounding, g, 4, 16);
  RngStream rng(16, StreamPurpose::kPhantom);
  Raster truth(g);
  const Vector x = prior.sample(rng);
  for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = std::clamp(x[static_cast<Eigen::Index>(i)], 0.05, 1.0);
  const auto y = forward_map(truth, cfg);
  const GmmScore s0(prior, s, 0), s1(project_gmm(prior, 1), s, 1);
  const SubspaceLadder ladder{n, {s.t_end}, kDefaultFisherThreshold, {orth_energy_per_coord(prior)}};
  bool identical = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    SamplerConfig sc;
    sc.steps = 100;
    sc.seed = seed;
    const auto full = dps_run(y, cfg, s0, sc);
    const auto sub = subspace_dps_run(y, cfg, ladder, {&s0, &s1}, sc);
    identical = identical && full.history == sub.history && full.step_sizes == sub.step_sizes &&
                full.velocity.raster().data() == sub.velocity.raster().data();
  }
  o.detail << "bit-identical over 3 seeds=" << identical;
  o.check(identical, "collapsed ladder reproduces dps_run");
}

// ---- 8

void end_to_end(Outcome& o) {
  constexpr int n = 64, phantoms = 8, train_count = 4096;
  const auto t0 = Clock::now();
  const Grid2D g = build_grid(n);
  const NoiseSchedule s;
  const auto cfg = build_config(Pattern::kSurrounding, g, 16, 64);
  PhantomSpec spec;
  std::vector<Vector> train;
  for (int i = 0; i < train_count; ++i) {
    PhantomSpec p = spec;
    p.seed = dataset_seed(0, DatasetSplit::kTrain, i);
    train.push_back(from_physical(gen_kit4(p, g).raster(), 0));
  }
  GmmFitOptions fo;
  fo.components = 1;
  fo.rank = 256;
  const GmmPrior prior = fit_gmm(train, fo);
  const GmmScore s0(prior, s, 0), s1(project_gmm(prior, 1), s, 1);
  const SubspaceLadder ladder{n, {0.5}, kDefaultFisherThreshold, {orth_energy_per_coord(prior)}};
  std::vector<double> rl, rd, rs;
  for (int i = 0; i < phantoms; ++i) {
    PhantomSpec p = spec;
    p.seed = dataset_seed(0, DatasetSplit::kTest, i);
    const auto truth = gen_kit4(p, g);
    const auto y = simulate(truth, cfg, 0.01, 100 + static_cast<std::uint64_t>(i));
    LbfgsOptions lo;
    lo.max_iter = 30;
    rl.push_back(rmse(lbfgs_run(y, cfg, VelocityField(g, 0.5), lo).velocity.raster(), truth.raster()));
    SamplerConfig sc;
    sc.steps = 500;
    sc.rho = 0.1;
    sc.step_mode = StepMode::kResidualNormalized;
    sc.seed = static_cast<std::uint64_t>(i);
    rd.push_back(rmse(dps_run(y, cfg, s0, sc).velocity.raster(), truth.raster()));
    rs.push_back(rmse(subspace_dps_run(y, cfg, ladder, {&s0, &s1}, sc).velocity.raster(), truth.raster()));
    std::printf("      phantom %d: lbfgs %.4f dps %.4f subspace %.4f\n", i, rl.back(), rd.back(), rs.back());
    std::fflush(stdout);
  }
  const double secs = seconds_since(t0);
  const double ml = median(rl), md = median(rd), ms = median(rs);
  o.detail << "median RMSE lbfgs=" << ml << " dps=" << md << " subspace=" << ms << " time=" << secs << "s";
  o.check(md <= ml, "median DPS <= median L-BFGS");
  o.check(ms <= 1.5 * md, "median subspace <= 1.5 x median DPS");
  o.check(secs < 1800.0, "runtime < 30 min");
}

// ---- 9

constexpr double kTwoLevelTimes[2] = {0.4, 0.7};

void timing_ratio(Outcome& o) {
  constexpr int n = 128;
  const auto t0 = Clock::now();
  const Grid2D g = build_grid(n);
  const NoiseSchedule s;
  const auto cfg = build_config(Pattern::kSurrounding, g, 16, 64);
  PhantomSpec spec;
  std::vector<Vector> train;
  for (int i = 0; i < 256; ++i) {
    PhantomSpec p = spec;
    p.seed = dataset_seed(0, DatasetSplit::kTrain, i);
    train.push_back(from_physical(gen_kit4(p, g).raster(), 0));
  }
  GmmFitOptions fo;
  fo.components = 1;
  fo.rank = 16;
  const GmmPrior prior = fit_gmm(train, fo);
  const GmmPrior p1 = project_gmm(prior, 1), p2 = project_gmm(prior, 2);
  const GmmScore s0(prior, s, 0), s1(p1, s, 1), s2(p2, s, 2);
  spec.seed = dataset_seed(0, DatasetSplit::kTest, 0);
  const auto y = simulate(gen_kit4(spec, g), cfg, 0.01, 1);
  SamplerConfig sc;
  sc.steps = 500;
  sc.rho = 0.1;
  sc.step_mode = StepMode::kResidualNormalized;
  sc.seed = 9;
  const double full = dps_run(y, cfg, s0, sc).total_seconds;
  const SubspaceLadder one{n, {0.5 * s.t_end}, kDefaultFisherThreshold, {orth_energy_per_coord(prior)}};
  const double t_one = subspace_dps_run(y, cfg, one, {&s0, &s1}, sc).total_seconds;
  const SubspaceLadder two{n, {kTwoLevelTimes[0], kTwoLevelTimes[1]}, kDefaultFisherThreshold,
                           {orth_energy_per_coord(prior), orth_energy_per_coord(p1)}};
  const double t_two = subspace_dps_run(y, cfg, two, {&s0, &s1, &s2}, sc).total_seconds;
  const double secs = seconds_since(t0);
  o.detail << "full=" << full << "s one-level ratio=" << t_one / full << " two-level ratio=" << t_two / full
           << " (times " << kTwoLevelTimes[0] << ", " << kTwoLevelTimes[1] << ") time=" << secs << "s";
  o.check(t_one / full <= 0.70, "one-level ratio <= 0.70");
  o.check(t_two / full <= 0.55, "two-level ratio <= 0.55");
  o.check(secs < 1800.0, "runtime < 30 min");
}

// ---- 10

void denoiser(Outcome& o) {
  constexpr int d = 64;
  const auto t0 = Clock::now();
  const NoiseSchedule s;
  RngStream mr(11, StreamPurpose::kMonteCarlo);
  std::vector<GmmComponent> comps;
  for (int k = 0; k < 4; ++k) comps.push_back({0.25, randn(mr, d), Covariance::make_isotropic(d, 0.05)});
  const GmmPrior prior(comps);
  RngStream rng(4, StreamPurpose::kMonteCarlo);
  std::vector<Vector> data;
  for (int i = 0; i < 4096; ++i) data.push_back(prior.sample(rng));
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 64;
  const auto model = train_denoiser(data, s, cfg);
  const double t = time_for_alpha_bar(s, 0.5);
  const auto marginal = gmm_marginal(prior, t, s);
  RngStream tr(77, StreamPurpose::kMonteCarlo);
  double cos_sum = 0.0;
  for (int i = 0; i < 256; ++i) {
    const Vector x = marginal.sample(tr);
    const Vector a = model.score(x, t), b = gmm_score(prior, x, t, s);
    cos_sum += a.dot(b) / (a.norm() * b.norm());
  }
  const double secs = seconds_since(t0);
  o.detail << "mean cosine=" << cos_sum / 256 << " alpha_bar=" << s.alpha_bar(t) << " time=" << secs << "s";
  o.check(cos_sum / 256 >= 0.95, "mean cosine >= 0.95");
  o.check(secs < 600.0, "runtime < 10 min");
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<void(Outcome&)>>> criteria{
      {1, {"eikonal correctness", eikonal}},
      {2, {"adjoint gradient fidelity", adjoint}},
      {3, {"diffusion oracles", diffusion}},
      {4, {"gmm score correctness", gmm}},
      {5, {"subspace algebra", subspace_algebra}},
      {6, {"fisher-divergence schedule", fisher}},
      {7, {"ladder-collapse equivalence", ladder_collapse}},
      {8, {"end-to-end reconstruction trend", end_to_end}},
      {9, {"timing ratio", timing_ratio}},
      {10, {"denoiser training sanity", denoiser}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [k, _] : criteria) selected.push_back(k);

  int failures = 0;
  for (int k : selected) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", k);
      return 2;
    }
    Outcome o;
    try {
      it->second.second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failures += !o.pass;
    std::printf("%s criterion %2d %s: %s\n", o.pass ? "PASS" : "FAIL", k, it->second.first, o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", selected.size(), failures);
  return failures == 0 ? 0 : 1;
}
