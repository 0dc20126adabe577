#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace forgetlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double sigmoid(double phi) {
  if (phi >= 0) return 1.0 / (1.0 + std::exp(-phi));
  const double e = std::exp(phi);
  return e / (1.0 + e);
}

inline double logit(double beta) { return std::log(beta) - std::log1p(-beta); }

/// log(exp(a) + exp(b)) without overflow; either argument may be -inf.
inline double log_add_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double log_sum_exp(const double* v, std::size_t n) {
  double m = -kInf;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (m == -kInf) return -kInf;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

/// Shared covariance Σ with its Cholesky factor and spectrum cached.
class CovarianceModel {
 public:
  explicit CovarianceModel(const Mat& sigma) : sigma_(sigma) {
    require(sigma.rows() >= 1 && sigma.rows() == sigma.cols(), "covariance must be square and non-empty");
    const double scale = std::max(sigma.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    require((sigma - sigma.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, "covariance is not symmetric");
    require(sigma.allFinite(), "covariance has non-finite entries");
    sigma_ = 0.5 * (sigma + sigma.transpose());
    Eigen::LLT<Mat> llt(sigma_);
    if (llt.info() != Eigen::Success) throw input_error("covariance is not positive definite");
    chol_ = llt.matrixL();
    for (Eigen::Index i = 0; i < chol_.rows(); ++i)
      if (!(chol_(i, i) > 0.0)) throw input_error("covariance is not positive definite");
    if ((chol_ * chol_.transpose() - sigma_).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw input_error("Cholesky factor does not reproduce the covariance");
    inverse_ = llt.solve(Mat::Identity(dim(), dim()));
    inverse_ = 0.5 * (inverse_ + inverse_.transpose());
    log_det_ = 2.0 * chol_.diagonal().array().log().sum();
    Eigen::SelfAdjointEigenSolver<Mat> es(sigma_, Eigen::EigenvaluesOnly);
    lambda_min_ = es.eigenvalues().minCoeff();
    lambda_max_ = es.eigenvalues().maxCoeff();
  }

  static CovarianceModel identity(int d) { return CovarianceModel(Mat::Identity(d, d)); }
  static CovarianceModel diagonal(const Vec& v) { return CovarianceModel(Mat(v.asDiagonal())); }

  int dim() const { return static_cast<int>(sigma_.rows()); }
  const Mat& sigma() const { return sigma_; }
  const Mat& chol() const { return chol_; }
  const Mat& inverse() const { return inverse_; }
  double log_det() const { return log_det_; }
  double lambda_min() const { return lambda_min_; }
  double lambda_max() const { return lambda_max_; }
  /// ‖Σ⁻¹‖₂
  double inverse_norm() const { return 1.0 / lambda_min_; }

  Vec whiten(const Vec& v) const { return chol_.triangularView<Eigen::Lower>().solve(v); }
  Vec unwhiten(const Vec& z) const { return chol_ * z; }
  Vec solve(const Vec& v) const { return inverse_ * v; }
  double mahalanobis_sq(const Vec& v) const { return whiten(v).squaredNorm(); }

  double log_normal(const Vec& y, const Vec& mu) const {
    return -0.5 * (dim() * kLog2Pi + log_det_ + mahalanobis_sq(y - mu));
  }

 private:
  Mat sigma_, chol_, inverse_;
  double log_det_ = 0.0, lambda_min_ = 0.0, lambda_max_ = 0.0;
};

/// Finite mixture of equal-covariance Gaussians.
struct MixtureDensity {
  Vec weights;
  std::vector<Vec> means;
  CovarianceModel cov;

  MixtureDensity(Vec w, std::vector<Vec> mu, CovarianceModel c)
      : weights(std::move(w)), means(std::move(mu)), cov(std::move(c)) {
    require(weights.size() >= 1 && static_cast<std::size_t>(weights.size()) == means.size(),
            "mixture needs one weight per mean");
    require(weights.allFinite() && weights.minCoeff() >= 0.0, "mixture weights must be nonnegative");
    require(std::abs(weights.sum() - 1.0) <= 1e-12, "mixture weights must sum to 1");
    for (const auto& m : means) require(m.size() == cov.dim() && m.allFinite(), "mean has wrong dimension");
  }

  static MixtureDensity two(double beta, const Vec& m_old, const Vec& m_new, const CovarianceModel& cov) {
    require(beta >= 0.0 && beta <= 1.0, "mixture weight must lie in [0,1]");
    return MixtureDensity(Eigen::Vector2d(beta, 1.0 - beta), {m_old, m_new}, cov);
  }
  static MixtureDensity single(const Vec& mu, const CovarianceModel& cov) {
    return MixtureDensity(Vec::Ones(1), {mu}, cov);
  }

  int dim() const { return cov.dim(); }
  int size() const { return static_cast<int>(weights.size()); }
};

/// Per-component log(w_k N(y; μ_k, Σ)); -inf for zero weights.
inline void component_log_terms(const MixtureDensity& m, const Vec& y, double* out) {
  for (int k = 0; k < m.size(); ++k)
    out[k] = m.weights[k] > 0.0 ? std::log(m.weights[k]) + m.cov.log_normal(y, m.means[k]) : -kInf;
}

inline double log_density(const MixtureDensity& m, const Vec& y) {
  require(y.size() == m.dim(), "point has wrong dimension");
  double buf[64];
  std::vector<double> heap;
  double* t = buf;
  if (m.size() > 64) {
    heap.resize(m.size());
    t = heap.data();
  }
  component_log_terms(m, y, t);
  return log_sum_exp(t, m.size());
}

inline Vec responsibilities(const MixtureDensity& m, const Vec& y) {
  require(y.size() == m.dim(), "point has wrong dimension");
  Vec t(m.size());
  component_log_terms(m, y, t.data());
  const double lz = log_sum_exp(t.data(), t.size());
  Vec r(m.size());
  for (int k = 0; k < m.size(); ++k) r[k] = std::exp(t[k] - lz);
  return r / r.sum();
}

/// Mahalanobis distance ‖μ₁ − μ₂‖ in the Σ⁻¹ metric.
inline double separation(const CovarianceModel& cov, const Vec& mu1, const Vec& mu2) {
  require(mu1.size() == cov.dim() && mu2.size() == cov.dim(), "mean has wrong dimension");
  return std::sqrt(cov.mahalanobis_sq(mu1 - mu2));
}

inline double bhattacharyya_equal_cov(const CovarianceModel& cov, const Vec& mu1, const Vec& mu2) {
  const double d = separation(cov, mu1, mu2);
  return std::exp(-d * d / 8.0);
}

struct SampleSet {
  Mat points;  // n × d
  std::vector<int> labels;
};

/// Label i uses stream 0, its coordinates stream 1; identical output for identical seed.
inline SampleSet sample(const MixtureDensity& m, std::int64_t n, std::uint64_t seed) {
  require(n >= 1, "sample size must be positive");
  const int d = m.dim();
  const auto k_label = rng::key(seed, 0);
  const auto k_point = rng::key(seed, 1);
  Vec cdf(m.size());
  double acc = 0.0;
  for (int k = 0; k < m.size(); ++k) cdf[k] = (acc += m.weights[k]);
  SampleSet s{Mat(n, d), std::vector<int>(static_cast<std::size_t>(n))};
  Vec z(d);
  for (std::int64_t i = 0; i < n; ++i) {
    const double u = rng::uniform(k_label, static_cast<std::uint64_t>(i)) * acc;
    int lab = 0;
    while (lab + 1 < m.size() && (u > cdf[lab] || m.weights[lab] == 0.0)) ++lab;
    for (int j = 0; j < d; ++j) z[j] = rng::normal(k_point, static_cast<std::uint64_t>(i), j);
    s.points.row(i) = (m.means[lab] + m.cov.unwhiten(z)).transpose();
    s.labels[static_cast<std::size_t>(i)] = lab;
  }
  return s;
}

enum class Region { old_region, new_region };

/// Bayes halfspace between two equal-covariance components and its Gaussian masses.
struct BayesPartition {
  double delta = 0.0;
  double gamma = 0.0;   // Φ(−δ/2): mass of the wrong side under either component
  double kappa = 0.0;   // 1 − 2γ
  Vec normal;           // Σ⁻¹(μ_n − μ_o)
  Vec midpoint;         // (μ_o + μ_n)/2
  Vec trunc_moment;     // E_{p_o}[Σ⁻¹(Y − μ_o) 1{Y ∈ A_n}]

  double score(const Vec& y) const { return normal.dot(y - midpoint); }
  Region classify(const Vec& y) const { return score(y) >= 0.0 ? Region::new_region : Region::old_region; }
  bool in_new(const Vec& y) const { return score(y) >= 0.0; }

  /// P_{N(m, Σ)}(A_n) for an arbitrary location m.
  double new_mass(const Vec& m) const { return normal_cdf(score(m) / delta); }
};

inline BayesPartition bayes_partition_stats(const Vec& mu_o, const Vec& mu_n, const CovarianceModel& cov) {
  require(mu_o.size() == cov.dim() && mu_n.size() == cov.dim(), "mean has wrong dimension");
  const double delta = separation(cov, mu_o, mu_n);
  if (!(delta > 0.0)) throw input_error("degenerate partition: old and new means coincide");
  BayesPartition b;
  b.delta = delta;
  b.gamma = normal_cdf(-delta / 2.0);
  b.kappa = 1.0 - 2.0 * b.gamma;
  b.normal = cov.solve(mu_n - mu_o);
  b.midpoint = 0.5 * (mu_o + mu_n);
  b.trunc_moment = (normal_pdf(delta / 2.0) / delta) * b.normal;
  return b;
}

/// Learner state (φ, m_o, m_n) with β = sigmoid(φ).
struct LearnerParams {
  double logit = 0.0;
  Vec m_old;
  Vec m_new;

  double beta() const { return sigmoid(logit); }
  static LearnerParams from_beta(double beta, Vec m_old, Vec m_new) {
    require(beta > 0.0 && beta < 1.0, "mixture weight must lie in (0,1)");
    return LearnerParams{forgetlab::logit(beta), std::move(m_old), std::move(m_new)};
  }
  MixtureDensity density(const CovarianceModel& cov) const { return MixtureDensity::two(beta(), m_old, m_new, cov); }
};

/// Orthonormal rows (in whitened coordinates) spanning the offsets of a set of points from a center.
struct ProjectionBasis {
  Mat basis;  // r × d
  Vec center;

  int rank() const { return static_cast<int>(basis.rows()); }

  /// Gram–Schmidt over L⁻¹(p − center); `lead` (if non-empty) is placed first so callers can align a split axis.
  static ProjectionBasis build(const CovarianceModel& cov, const Vec& center, const std::vector<Vec>& points,
                               const Vec& lead = Vec()) {
    const int d = cov.dim();
    std::vector<Vec> dirs;
    std::vector<Vec> cand;
    if (lead.size() == d) cand.push_back(cov.whiten(lead));
    double scale = 0.0;
    for (const auto& p : points) {
      require(p.size() == d, "point has wrong dimension");
      cand.push_back(cov.whiten(p - center));
      scale = std::max(scale, cand.back().norm());
    }
    for (const auto& c : cand) scale = std::max(scale, c.norm());
    const double tol = 1e-12 * std::max(scale, 1.0);
    for (auto v : cand) {
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& u : dirs) v -= u.dot(v) * u;
      const double n = v.norm();
      if (n > tol && static_cast<int>(dirs.size()) < d) dirs.push_back(v / n);
    }
    ProjectionBasis b{Mat(static_cast<Eigen::Index>(dirs.size()), d), center};
    for (std::size_t i = 0; i < dirs.size(); ++i) b.basis.row(static_cast<Eigen::Index>(i)) = dirs[i].transpose();
    return b;
  }

  /// Point of R^d with reduced whitened coordinates z (orthogonal complement at its mean, 0).
  Vec lift(const CovarianceModel& cov, const Vec& z) const { return center + cov.unwhiten(basis.transpose() * z); }
};

}  // namespace forgetlab
