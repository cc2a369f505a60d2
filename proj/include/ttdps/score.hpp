#pragma once

#include <cstddef>
#include <functional>
#include <utility>

#include <Eigen/Core>

#include "ttdps/errors.hpp"

namespace ttdps {

using Vector = Eigen::VectorXd;

/// Time-dependent score s(x, t) ~ grad log p_t(x) together with the
/// product of its (symmetric or not) Jacobian transpose with a vector.
/// Implementations must be safe for concurrent const calls.
class ScoreFunction {
 public:
  virtual ~ScoreFunction() = default;

  virtual std::size_t dimension() const = 0;
  /// Ladder depth this score serves (0 = full resolution).
  virtual int level() const { return 0; }

  virtual Vector score(const Vector& x, double t) const = 0;
  /// J(x, t)^T v with J the Jacobian of score in x.
  virtual Vector vjp(const Vector& x, double t, const Vector& v) const = 0;

 protected:
  void check_dim(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != dimension())
      throw InvalidArgument("score input has dimension " + std::to_string(x.size()) +
                            ", expected " + std::to_string(dimension()));
  }
};

/// Adapts callables to the ScoreFunction contract (handy for tests and for
/// closed-form scores).
class LambdaScore final : public ScoreFunction {
 public:
  using ScoreFn = std::function<Vector(const Vector&, double)>;
  using VjpFn = std::function<Vector(const Vector&, double, const Vector&)>;

  LambdaScore(std::size_t dim, ScoreFn score, VjpFn vjp = {}, int level = 0)
      : dim_(dim), score_(std::move(score)), vjp_(std::move(vjp)), level_(level) {}

  std::size_t dimension() const override { return dim_; }
  int level() const override { return level_; }
  Vector score(const Vector& x, double t) const override {
    check_dim(x);
    return score_(x, t);
  }
  Vector vjp(const Vector& x, double t, const Vector& v) const override {
    check_dim(x);
    if (!vjp_) throw InvalidArgument("this score has no Jacobian product");
    return vjp_(x, t, v);
  }

 private:
  std::size_t dim_;
  ScoreFn score_;
  VjpFn vjp_;
  int level_;
};

}  // namespace ttdps
