#pragma once

// Small dense noise-prediction network trained by denoising score matching.
// Layout: [x, sqrt(abar), 1 - abar] -> H -> H -> d with SiLU activations.
// The network predicts the injected noise; the score is -eps_hat / sqrt(1 - abar).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ttdps/diffusion.hpp"
#include "ttdps/errors.hpp"
#include "ttdps/rng.hpp"
#include "ttdps/score.hpp"

namespace ttdps {

struct DenoiserArchitecture {
  int dimension = 0;
  int hidden = 0;
  std::string nonlinearity = "silu";

  /// W1, b1, W2, b2, W3, b3 (matrices column-major).
  std::size_t parameter_count() const {
    const std::size_t d = static_cast<std::size_t>(dimension), h = static_cast<std::size_t>(hidden);
    return h * (d + 2) + h + h * h + h + d * h + d;
  }
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  /// Hidden width; 0 means 4 * dimension.
  int hidden = 0;
  /// Smallest training time as a fraction of T_end.
  double t_min_ratio = 1e-3;
};

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double silu(double z) { return z * sigmoid(z); }
inline double silu_grad(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

struct MlpWeights {
  Eigen::MatrixXd w1, w2, w3;
  Eigen::VectorXd b1, b2, b3;

  void unpack(const DenoiserArchitecture& a, std::span<const double> p) {
    const Eigen::Index d = a.dimension, h = a.hidden;
    std::size_t off = 0;
    auto take_mat = [&](Eigen::MatrixXd& m, Eigen::Index r, Eigen::Index c) {
      m = Eigen::Map<const Eigen::MatrixXd>(p.data() + off, r, c);
      off += static_cast<std::size_t>(r * c);
    };
    auto take_vec = [&](Eigen::VectorXd& v, Eigen::Index r) {
      v = Eigen::Map<const Eigen::VectorXd>(p.data() + off, r);
      off += static_cast<std::size_t>(r);
    };
    take_mat(w1, h, d + 2);
    take_vec(b1, h);
    take_mat(w2, h, h);
    take_vec(b2, h);
    take_mat(w3, d, h);
    take_vec(b3, d);
  }

  void pack(std::span<double> p) const {
    std::size_t off = 0;
    auto put = [&](const auto& m) {
      std::copy(m.data(), m.data() + m.size(), p.begin() + static_cast<std::ptrdiff_t>(off));
      off += static_cast<std::size_t>(m.size());
    };
    put(w1);
    put(b1);
    put(w2);
    put(b2);
    put(w3);
    put(b3);
  }
};

}  // namespace detail

/// Parameters are held in single precision (the storage format) and
/// evaluated in double precision.
class DenoiserModel final : public ScoreFunction {
 public:
  DenoiserModel() = default;

  DenoiserModel(DenoiserArchitecture arch, NoiseSchedule schedule, std::vector<float> params, int level = 0)
      : arch_(std::move(arch)), schedule_(schedule), params_(std::move(params)), level_(level) {
    detail::require(arch_.dimension > 0 && arch_.hidden > 0, "denoiser widths must be positive");
    detail::require(arch_.nonlinearity == "silu", "unsupported nonlinearity '" + arch_.nonlinearity + "'");
    detail::require(params_.size() == arch_.parameter_count(),
                    "parameter count " + std::to_string(params_.size()) + " does not match the architecture (" +
                        std::to_string(arch_.parameter_count()) + ")");
    for (float v : params_)
      if (!std::isfinite(v)) throw NumericalFailure("denoiser parameters contain non-finite values");
    schedule_.validate();
    std::vector<double> wide(params_.begin(), params_.end());
    weights_.unpack(arch_, wide);
  }

  static DenoiserModel zeros(int dimension, const NoiseSchedule& s, int hidden = 0, int level = 0) {
    DenoiserArchitecture a{dimension, hidden > 0 ? hidden : 4 * dimension, "silu"};
    return DenoiserModel(a, s, std::vector<float>(a.parameter_count(), 0.0f), level);
  }

  const DenoiserArchitecture& architecture() const { return arch_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const std::vector<float>& parameters() const { return params_; }

  std::string dataset_id;
  double final_loss = 0.0;
  std::vector<double> loss_history;

  std::size_t dimension() const override { return static_cast<std::size_t>(arch_.dimension); }
  int level() const override { return level_; }

  /// Predicted noise.
  Vector predict_noise(const Vector& x, double t) const {
    check_dim(x);
    const Vector in = features(x, t);
    const Vector a1 = (weights_.w1 * in + weights_.b1).unaryExpr(&detail::silu);
    const Vector a2 = (weights_.w2 * a1 + weights_.b2).unaryExpr(&detail::silu);
    return weights_.w3 * a2 + weights_.b3;
  }

  Vector score(const Vector& x, double t) const override {
    return -predict_noise(x, t) / noise_std(t);
  }

  Vector vjp(const Vector& x, double t, const Vector& v) const override {
    check_dim(x);
    detail::require(v.size() == x.size(), "vjp direction has the wrong dimension");
    const Vector in = features(x, t);
    const Vector z1 = weights_.w1 * in + weights_.b1;
    const Vector z2 = weights_.w2 * z1.unaryExpr(&detail::silu) + weights_.b2;
    Vector g2 = (weights_.w3.transpose() * v).cwiseProduct(z2.unaryExpr(&detail::silu_grad));
    Vector g1 = (weights_.w2.transpose() * g2).cwiseProduct(z1.unaryExpr(&detail::silu_grad));
    const Vector gx = weights_.w1.leftCols(arch_.dimension).transpose() * g1;
    return -gx / noise_std(t);
  }

 private:
  Vector features(const Vector& x, double t) const {
    const double ab = schedule_.alpha_bar(t);
    Vector in(x.size() + 2);
    in.head(x.size()) = x;
    in[x.size()] = std::sqrt(ab);
    in[x.size() + 1] = 1.0 - ab;
    return in;
  }
  double noise_std(double t) const {
    const double var = 1.0 - schedule_.alpha_bar(t);
    if (!(var > 0.0)) throw InvalidArgument("denoiser score is undefined at t = 0");
    return std::sqrt(var);
  }

  DenoiserArchitecture arch_;
  NoiseSchedule schedule_;
  std::vector<float> params_;
  int level_ = 0;
  detail::MlpWeights weights_;
};

inline Vector model_score(const DenoiserModel& m, const Vector& x, double t) { return m.score(x, t); }
inline Vector model_vjp(const DenoiserModel& m, const Vector& x, double t, const Vector& v) {
  return m.vjp(x, t, v);
}

/// Adam on the noise-prediction loss mean ||eps_hat - eps||^2 / d with
/// t ~ U[t_min, T_end]. loss_history holds the mean batch loss per epoch.
inline DenoiserModel train_denoiser(std::span<const Vector> dataset, const NoiseSchedule& s,
                                    const TrainConfig& cfg, int level = 0, std::string dataset_id = {}) {
  detail::require(!dataset.empty(), "training dataset is empty");
  detail::require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.learning_rate > 0.0,
                  "epochs, batch size and learning rate must be positive");
  detail::require(cfg.t_min_ratio > 0.0 && cfg.t_min_ratio < 1.0, "t_min_ratio must lie in (0, 1)");
  s.validate();
  const Eigen::Index d = dataset.front().size();
  for (const auto& x : dataset) detail::require(x.size() == d, "dataset samples differ in dimension");
  const DenoiserArchitecture arch{static_cast<int>(d), cfg.hidden > 0 ? cfg.hidden : 4 * static_cast<int>(d),
                                  "silu"};
  const Eigen::Index h = arch.hidden;

  RngStream rng(cfg.seed, StreamPurpose::kTraining, 0);
  detail::MlpWeights w;
  auto init = [&](Eigen::MatrixXd& m, Eigen::Index r, Eigen::Index c) {
    m.resize(r, c);
    const double sd = 1.0 / std::sqrt(static_cast<double>(c));
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = sd * rng.normal();
  };
  init(w.w1, h, d + 2);
  init(w.w2, h, h);
  init(w.w3, d, h);
  w.b1 = Eigen::VectorXd::Zero(h);
  w.b2 = Eigen::VectorXd::Zero(h);
  w.b3 = Eigen::VectorXd::Zero(d);

  const std::size_t np = arch.parameter_count();
  std::vector<double> theta(np), grad(np), m1(np, 0.0), m2(np, 0.0);
  w.pack(theta);
  const double b1 = 0.9, b2 = 0.999, eps_adam = 1e-8;
  long long step = 0;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const double t_min = cfg.t_min_ratio * s.t_end;

  std::vector<double> history;
  detail::MlpWeights gw;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const Eigen::Index bsz =
          static_cast<Eigen::Index>(std::min<std::size_t>(cfg.batch_size, order.size() - start));
      Eigen::MatrixXd in(d + 2, bsz), target(d, bsz);
      for (Eigen::Index j = 0; j < bsz; ++j) {
        const Vector& x0 = dataset[order[start + static_cast<std::size_t>(j)]];
        const double t = rng.uniform(t_min, s.t_end);
        const double ab = s.alpha_bar(t);
        Vector eps(d);
        rng.fill_normal(std::span<double>(eps.data(), static_cast<std::size_t>(d)));
        in.col(j).head(d) = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
        in(d, j) = std::sqrt(ab);
        in(d + 1, j) = 1.0 - ab;
        target.col(j) = eps;
      }
      const Eigen::MatrixXd z1 = (w.w1 * in).colwise() + w.b1;
      const Eigen::MatrixXd a1 = z1.unaryExpr(&detail::silu);
      const Eigen::MatrixXd z2 = (w.w2 * a1).colwise() + w.b2;
      const Eigen::MatrixXd a2 = z2.unaryExpr(&detail::silu);
      const Eigen::MatrixXd out = (w.w3 * a2).colwise() + w.b3;
      const Eigen::MatrixXd diff = out - target;
      const double norm = static_cast<double>(bsz) * static_cast<double>(d);
      const double loss = diff.squaredNorm() / norm;
      if (!std::isfinite(loss))
        throw NumericalFailure("denoiser training diverged at epoch " + std::to_string(epoch + 1));

      const Eigen::MatrixXd dout = (2.0 / norm) * diff;
      gw.w3 = dout * a2.transpose();
      gw.b3 = dout.rowwise().sum();
      const Eigen::MatrixXd dz2 = (w.w3.transpose() * dout).cwiseProduct(z2.unaryExpr(&detail::silu_grad));
      gw.w2 = dz2 * a1.transpose();
      gw.b2 = dz2.rowwise().sum();
      const Eigen::MatrixXd dz1 = (w.w2.transpose() * dz2).cwiseProduct(z1.unaryExpr(&detail::silu_grad));
      gw.w1 = dz1 * in.transpose();
      gw.b1 = dz1.rowwise().sum();
      gw.pack(grad);

      ++step;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (std::size_t i = 0; i < np; ++i) {
        m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
        m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
        theta[i] -= cfg.learning_rate * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps_adam);
      }
      w.unpack(arch, theta);
      epoch_loss += loss;
      ++batches;
    }
    history.push_back(epoch_loss / batches);
  }

  std::vector<float> params(np);
  for (std::size_t i = 0; i < np; ++i) params[i] = static_cast<float>(theta[i]);
  DenoiserModel model(arch, s, std::move(params), level);
  model.dataset_id = std::move(dataset_id);
  model.loss_history = std::move(history);
  model.final_loss = model.loss_history.back();
  return model;
}

}  // namespace ttdps
