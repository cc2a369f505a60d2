#pragma once

// Gaussian-mixture priors with closed-form diffused scores.
//
// Component covariances come in three storage forms:
//   full      Sigma (dense SPD)
//   diagonal  diag(v)
//   low-rank  W W^T + s I   (probabilistic-PCA form, cheap at large d)
// Diffusing with the VP kernel keeps each form: V = abar Sigma + (1 - abar) I.

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ttdps/diffusion.hpp"
#include "ttdps/errors.hpp"
#include "ttdps/pooling.hpp"
#include "ttdps/rng.hpp"
#include "ttdps/score.hpp"

namespace ttdps {

struct Covariance {
  enum class Kind { kFull, kDiagonal, kLowRank };

  Kind kind = Kind::kDiagonal;
  Eigen::MatrixXd full;    // kFull
  Vector diagonal;         // kDiagonal
  Eigen::MatrixXd factor;  // kLowRank: W (d x r)
  double isotropic = 0.0;  // kLowRank: s

  static Covariance make_full(Eigen::MatrixXd m) {
    Covariance c;
    c.kind = Kind::kFull;
    c.full = std::move(m);
    return c;
  }
  static Covariance make_diagonal(Vector v) {
    Covariance c;
    c.kind = Kind::kDiagonal;
    c.diagonal = std::move(v);
    return c;
  }
  static Covariance make_isotropic(Eigen::Index dim, double var) {
    return make_diagonal(Vector::Constant(dim, var));
  }
  static Covariance make_low_rank(Eigen::MatrixXd w, double s) {
    Covariance c;
    c.kind = Kind::kLowRank;
    c.factor = std::move(w);
    c.isotropic = s;
    return c;
  }

  Eigen::Index dimension() const {
    switch (kind) {
      case Kind::kFull: return full.rows();
      case Kind::kDiagonal: return diagonal.size();
      case Kind::kLowRank: return factor.rows();
    }
    return 0;
  }

  Eigen::MatrixXd dense() const {
    switch (kind) {
      case Kind::kFull: return full;
      case Kind::kDiagonal: return diagonal.asDiagonal();
      case Kind::kLowRank: {
        Eigen::MatrixXd m = factor * factor.transpose();
        m.diagonal().array() += isotropic;
        return m;
      }
    }
    return {};
  }

  double trace() const {
    switch (kind) {
      case Kind::kFull: return full.trace();
      case Kind::kDiagonal: return diagonal.sum();
      case Kind::kLowRank: return factor.squaredNorm() + isotropic * static_cast<double>(factor.rows());
    }
    return 0.0;
  }

  /// a * Sigma + b * I
  Covariance affine(double a, double b) const {
    switch (kind) {
      case Kind::kFull: {
        Eigen::MatrixXd m = a * full;
        m.diagonal().array() += b;
        return make_full(std::move(m));
      }
      case Kind::kDiagonal: return make_diagonal((a * diagonal.array() + b).matrix());
      case Kind::kLowRank: return make_low_rank(std::sqrt(a) * factor, a * isotropic + b);
    }
    return {};
  }
};

/// Factorised Gaussian N(mean, V) ready for log-density and solves.
class GaussianSolver {
 public:
  explicit GaussianSolver(const Covariance& v) : kind_(v.kind), dim_(v.dimension()) {
    switch (kind_) {
      case Covariance::Kind::kFull: {
        llt_.compute(v.full);
        if (llt_.info() != Eigen::Success) throw NumericalFailure("covariance is not SPD");
        log_det_ = 2.0 * llt_.matrixL().toDenseMatrix().diagonal().array().log().sum();
        break;
      }
      case Covariance::Kind::kDiagonal:
        if ((v.diagonal.array() <= 0.0).any()) throw NumericalFailure("covariance is not SPD");
        inv_diag_ = v.diagonal.cwiseInverse();
        log_det_ = v.diagonal.array().log().sum();
        break;
      case Covariance::Kind::kLowRank: {
        if (!(v.isotropic > 0.0)) throw NumericalFailure("low-rank covariance needs s > 0");
        w_ = v.factor;
        s_ = v.isotropic;
        const Eigen::Index r = w_.cols();
        Eigen::MatrixXd inner = w_.transpose() * w_;
        inner.diagonal().array() += s_;
        small_.compute(inner);
        if (small_.info() != Eigen::Success) throw NumericalFailure("covariance is not SPD");
        // det(W W^T + s I) = s^(d - r) det(W^T W + s I)
        log_det_ = static_cast<double>(dim_ - r) * std::log(s_) +
                   2.0 * small_.matrixL().toDenseMatrix().diagonal().array().log().sum();
        break;
      }
    }
  }

  /// V^{-1} v
  Vector solve(const Vector& v) const {
    switch (kind_) {
      case Covariance::Kind::kFull: return llt_.solve(v);
      case Covariance::Kind::kDiagonal: return inv_diag_.cwiseProduct(v);
      case Covariance::Kind::kLowRank: {
        // Woodbury: (W W^T + s I)^{-1} = (I - W (W^T W + s I)^{-1} W^T) / s
        const Vector wt = w_.transpose() * v;
        return (v - w_ * small_.solve(wt)) / s_;
      }
    }
    return {};
  }

  double log_det() const { return log_det_; }

 private:
  Covariance::Kind kind_;
  Eigen::Index dim_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Vector inv_diag_;
  Eigen::MatrixXd w_;
  double s_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> small_;
  double log_det_ = 0.0;
};

struct GmmComponent {
  double weight = 1.0;
  Vector mean;
  Covariance covariance;
};

class GmmPrior {
 public:
  GmmPrior() = default;
  explicit GmmPrior(std::vector<GmmComponent> comps) : comps_(std::move(comps)) { validate(); }

  void validate() const {
    detail::require(!comps_.empty(), "mixture needs at least one component");
    const Eigen::Index d = comps_.front().mean.size();
    double total = 0.0;
    for (const auto& c : comps_) {
      detail::require(c.mean.size() == d && c.covariance.dimension() == d,
                      "mixture components disagree on dimension");
      detail::require(c.weight >= 0.0, "negative mixture weight");
      total += c.weight;
    }
    detail::require(std::abs(total - 1.0) <= 1e-12, "mixture weights must sum to 1");
  }

  std::size_t dimension() const { return static_cast<std::size_t>(comps_.front().mean.size()); }
  const std::vector<GmmComponent>& components() const { return comps_; }

  /// E||x||^2-style statistics under the prior: sum_i w_i (||P m_i||^2 + tr(P S_i P))
  /// restricted to the orthogonal complement of the next-coarser level.
  double expected_orth_energy() const {
    double e = 0.0;
    for (const auto& c : comps_) {
      e += c.weight * orth_complement(c.mean).squaredNorm();
      // tr(P S P) = tr(S) - tr(U^T S U) for the orthogonal projector P = I - U U^T.
      e += c.weight * (c.covariance.trace() - project_covariance(c.covariance, 1).trace());
    }
    return e;
  }

  /// Draws x0 from the mixture.
  Vector sample(RngStream& rng) const {
    double u = rng.uniform();
    std::size_t i = 0;
    for (; i + 1 < comps_.size(); ++i) {
      if (u < comps_[i].weight) break;
      u -= comps_[i].weight;
    }
    const auto& c = comps_[i];
    const Eigen::Index d = c.mean.size();
    Vector z(d);
    rng.fill_normal(std::span<double>(z.data(), static_cast<std::size_t>(d)));
    switch (c.covariance.kind) {
      case Covariance::Kind::kFull: {
        Eigen::LLT<Eigen::MatrixXd> llt(c.covariance.full);
        return c.mean + llt.matrixL() * z;
      }
      case Covariance::Kind::kDiagonal:
        return c.mean + c.covariance.diagonal.cwiseSqrt().cwiseProduct(z);
      case Covariance::Kind::kLowRank: {
        Vector zr(c.covariance.factor.cols());
        rng.fill_normal(std::span<double>(zr.data(), static_cast<std::size_t>(zr.size())));
        return c.mean + c.covariance.factor * zr + std::sqrt(c.covariance.isotropic) * z;
      }
    }
    return c.mean;
  }

  /// Covariance seen k orthonormal poolings down: U^T S U.
  static Covariance project_covariance(const Covariance& s, int k) {
    if (k == 0) return s;
    const Eigen::Index dk = s.dimension() >> (2 * k);
    switch (s.kind) {
      case Covariance::Kind::kFull: {
        Eigen::MatrixXd cols(dk, s.full.cols());
        for (Eigen::Index j = 0; j < s.full.cols(); ++j)
          cols.col(j) = project_levels(Vector(s.full.col(j)), k);
        Eigen::MatrixXd out(cols.rows(), cols.rows());
        for (Eigen::Index i = 0; i < cols.rows(); ++i)
          out.row(i) = project_levels(Vector(cols.row(i).transpose()), k).transpose();
        return Covariance::make_full(0.5 * (out + out.transpose()));
      }
      case Covariance::Kind::kDiagonal: {
        // Blocks of an orthonormal pooling have disjoint support, so the
        // projected covariance stays diagonal with block-mean variances.
        Vector v = s.diagonal;
        for (int i = 0; i < k; ++i) v = 0.5 * project_level(v);
        return Covariance::make_diagonal(std::move(v));
      }
      case Covariance::Kind::kLowRank: {
        Eigen::MatrixXd w(dk, s.factor.cols());
        for (Eigen::Index j = 0; j < s.factor.cols(); ++j)
          w.col(j) = project_levels(Vector(s.factor.col(j)), k);
        return Covariance::make_low_rank(std::move(w), s.isotropic);
      }
    }
    return s;
  }

 private:
  std::vector<GmmComponent> comps_;
};

/// Distribution of x_t when x_0 follows the prior.
inline GmmPrior gmm_marginal(const GmmPrior& prior, double t, const NoiseSchedule& s) {
  const double ab = s.alpha_bar(t);
  std::vector<GmmComponent> out;
  out.reserve(prior.components().size());
  for (const auto& c : prior.components())
    out.push_back({c.weight, std::sqrt(ab) * c.mean, c.covariance.affine(ab, 1.0 - ab)});
  return GmmPrior(std::move(out));
}

/// The prior pushed through k orthonormal poolings.
inline GmmPrior project_gmm(const GmmPrior& prior, int k) {
  detail::require(k >= 0, "pooling depth must be non-negative");
  if (k == 0) return prior;
  const int side = side_of(static_cast<Eigen::Index>(prior.dimension()));
  detail::require(side % (1 << k) == 0, "image side not divisible by 2^k");
  std::vector<GmmComponent> out;
  for (const auto& c : prior.components())
    out.push_back({c.weight, project_levels(c.mean, k), GmmPrior::project_covariance(c.covariance, k)});
  return GmmPrior(std::move(out));
}

namespace detail {

/// Per-component pieces of the diffused mixture at one (x, t).
struct MixtureTerms {
  std::vector<double> resp;      // posterior responsibilities
  std::vector<Vector> comp_score;  // -V_i^{-1}(x - sqrt(abar) m_i)
  std::vector<GaussianSolver> solvers;
  double log_density = 0.0;
};

inline MixtureTerms mixture_terms(const GmmPrior& prior, const Vector& x, double t,
                                  const NoiseSchedule& s) {
  const double ab = s.alpha_bar(t);
  MixtureTerms mt;
  const auto& comps = prior.components();
  std::vector<double> logw(comps.size());
  const double d = static_cast<double>(x.size());
  for (std::size_t i = 0; i < comps.size(); ++i) {
    mt.solvers.emplace_back(comps[i].covariance.affine(ab, 1.0 - ab));
    const Vector diff = x - std::sqrt(ab) * comps[i].mean;
    Vector sol = mt.solvers.back().solve(diff);
    logw[i] = std::log(std::max(comps[i].weight, std::numeric_limits<double>::min())) -
              0.5 * (diff.dot(sol) + mt.solvers.back().log_det() + d * std::log(2.0 * std::numbers::pi));
    if (comps[i].weight == 0.0) logw[i] = -std::numeric_limits<double>::infinity();
    mt.comp_score.push_back(-sol);
  }
  const double mx = *std::max_element(logw.begin(), logw.end());
  double z = 0.0;
  mt.resp.resize(comps.size());
  for (std::size_t i = 0; i < comps.size(); ++i) z += (mt.resp[i] = std::exp(logw[i] - mx));
  for (double& r : mt.resp) r /= z;
  mt.log_density = mx + std::log(z);
  return mt;
}

}  // namespace detail

inline double gmm_log_density(const GmmPrior& prior, const Vector& x, double t,
                              const NoiseSchedule& s) {
  detail::require(static_cast<std::size_t>(x.size()) == prior.dimension(), "dimension mismatch");
  return detail::mixture_terms(prior, x, t, s).log_density;
}

/// grad_x log p_t(x) for the diffused mixture.
inline Vector gmm_score(const GmmPrior& prior, const Vector& x, double t, const NoiseSchedule& s) {
  detail::require(static_cast<std::size_t>(x.size()) == prior.dimension(), "dimension mismatch");
  const auto mt = detail::mixture_terms(prior, x, t, s);
  Vector out = Vector::Zero(x.size());
  for (std::size_t i = 0; i < mt.resp.size(); ++i) out += mt.resp[i] * mt.comp_score[i];
  return out;
}

/// Hessian of log p_t times v. The Hessian is symmetric so this is also
/// the vector-Jacobian product of the score:
///   H v = sum_i r_i (-V_i^{-1} v) + sum_i r_i s_i (s_i . v) - sbar (sbar . v)
inline Vector gmm_vjp(const GmmPrior& prior, const Vector& x, double t, const Vector& v,
                      const NoiseSchedule& s) {
  detail::require(static_cast<std::size_t>(x.size()) == prior.dimension() && v.size() == x.size(),
                  "dimension mismatch");
  const auto mt = detail::mixture_terms(prior, x, t, s);
  Vector out = Vector::Zero(x.size());
  Vector mean_score = Vector::Zero(x.size());
  for (std::size_t i = 0; i < mt.resp.size(); ++i) {
    if (mt.resp[i] == 0.0) continue;
    out -= mt.resp[i] * mt.solvers[i].solve(v);
    out += mt.resp[i] * mt.comp_score[i] * mt.comp_score[i].dot(v);
    mean_score += mt.resp[i] * mt.comp_score[i];
  }
  out -= mean_score * mean_score.dot(v);
  return out;
}

/// ScoreFunction backed by an analytic mixture.
class GmmScore final : public ScoreFunction {
 public:
  GmmScore(GmmPrior prior, NoiseSchedule schedule, int level = 0)
      : prior_(std::move(prior)), schedule_(schedule), level_(level) {}

  std::size_t dimension() const override { return prior_.dimension(); }
  int level() const override { return level_; }
  Vector score(const Vector& x, double t) const override {
    check_dim(x);
    return gmm_score(prior_, x, t, schedule_);
  }
  Vector vjp(const Vector& x, double t, const Vector& v) const override {
    check_dim(x);
    return gmm_vjp(prior_, x, t, v, schedule_);
  }

  const GmmPrior& prior() const { return prior_; }
  const NoiseSchedule& schedule() const { return schedule_; }

 private:
  GmmPrior prior_;
  NoiseSchedule schedule_;
  int level_;
};

struct GmmFitOptions {
  int components = 4;
  int rank = 16;
  /// Isotropic variance of each component; negative selects the
  /// maximum-likelihood value (mean discarded eigenvalue).
  double isotropic_variance = -1.0;
  double min_isotropic_variance = 1e-6;
  int kmeans_iterations = 50;
  std::uint64_t seed = 0;
};

/// Mixture of probabilistic-PCA components fitted by k-means followed by a
/// per-cluster eigen-decomposition of the sample Gram matrix.
inline GmmPrior fit_gmm(std::span<const Vector> data, const GmmFitOptions& opt) {
  detail::require(!data.empty(), "cannot fit a prior to an empty dataset");
  detail::require(opt.components >= 1 && opt.rank >= 0, "invalid fit options");
  const Eigen::Index d = data.front().size();
  const int n = static_cast<int>(data.size());
  const int K = std::min(opt.components, n);
  RngStream rng(opt.seed, StreamPurpose::kTraining, 99);

  // k-means++ seeding.
  std::vector<Vector> centers{data[rng.uniform_int(0, n - 1)]};
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < K) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], (data[i] - centers.back()).squaredNorm());
      total += dist[i];
    }
    if (total <= 0.0) break;
    double u = rng.uniform(0.0, total);
    int pick = 0;
    for (; pick < n - 1; ++pick) {
      if (u < dist[pick]) break;
      u -= dist[pick];
    }
    centers.push_back(data[pick]);
  }
  std::vector<int> label(n, 0);
  for (int it = 0; it < opt.kmeans_iterations; ++it) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const double dd = (data[i] - centers[c]).squaredNorm();
        if (dd < bd) bd = dd, best = static_cast<int>(c);
      }
      if (label[i] != best) {
        label[i] = best;
        changed = true;
      }
    }
    for (std::size_t c = 0; c < centers.size(); ++c) {
      Vector sum = Vector::Zero(d);
      int count = 0;
      for (int i = 0; i < n; ++i)
        if (label[i] == static_cast<int>(c)) sum += data[i], ++count;
      if (count > 0) centers[c] = sum / count;
    }
    if (!changed && it > 0) break;
  }

  std::vector<GmmComponent> comps;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i)
      if (label[i] == static_cast<int>(c)) members.push_back(i);
    if (members.empty()) continue;
    const int m = static_cast<int>(members.size());
    Eigen::MatrixXd X(d, m);
    for (int j = 0; j < m; ++j) X.col(j) = data[members[j]] - centers[c];
    const double total_var = X.squaredNorm() / m;  // trace of the sample covariance
    const int r = std::min<int>({opt.rank, m - 1 > 0 ? m - 1 : 0, static_cast<int>(d)});
    Eigen::MatrixXd W(d, r);
    double kept = 0.0;
    std::vector<double> eig;
    Eigen::MatrixXd vecs;
    if (r > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(X.transpose() * X / m);
      // ascending order; take the top r
      for (int j = 0; j < r; ++j) {
        const Eigen::Index col = m - 1 - j;
        const double lam = std::max(es.eigenvalues()[col], 0.0);
        eig.push_back(lam);
        kept += lam;
      }
      vecs = es.eigenvectors();
    }
    double s2 = opt.isotropic_variance;
    if (s2 < 0.0) s2 = d > r ? std::max(0.0, total_var - kept) / static_cast<double>(d - r) : 0.0;
    s2 = std::max(s2, opt.min_isotropic_variance);
    for (int j = 0; j < r; ++j) {
      const Eigen::Index col = m - 1 - j;
      Vector u = X * vecs.col(col);
      const double nrm = u.norm();
      if (nrm > 0.0) u /= nrm;
      W.col(j) = u * std::sqrt(std::max(eig[j] - s2, 0.0));
    }
    comps.push_back({static_cast<double>(m) / n, centers[c], Covariance::make_low_rank(W, s2)});
  }
  double wsum = 0.0;
  for (const auto& c : comps) wsum += c.weight;
  for (auto& c : comps) c.weight /= wsum;
  return GmmPrior(std::move(comps));
}

}  // namespace ttdps
