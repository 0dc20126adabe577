#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "errors.hpp"
#include "estimators.hpp"
#include "fault.hpp"
#include "mixture.hpp"

namespace forgetlab {

/// p_α = α N(μ_o, Σ) + (1 − α) N(μ_n, Σ).
struct TargetSpec {
  double alpha;
  Vec mu_old;
  Vec mu_new;
  CovarianceModel cov;

  TargetSpec(double a, Vec mo, Vec mn, CovarianceModel c)
      : alpha(a), mu_old(std::move(mo)), mu_new(std::move(mn)), cov(std::move(c)) {
    require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
    require(mu_old.size() == cov.dim() && mu_new.size() == cov.dim(), "means must match the covariance dimension");
    require((mu_old - mu_new).norm() > 0.0, "old and new means must differ");
  }

  /// One-dimensional-along-e1 target with separation δ (Σ = I).
  static TargetSpec separated(double alpha, double delta, int d = 1) {
    Vec mo = Vec::Zero(d), mn = Vec::Zero(d);
    mn[0] = delta;
    return TargetSpec(alpha, mo, mn, CovarianceModel::identity(d));
  }

  int dim() const { return cov.dim(); }
  double delta() const { return separation(cov, mu_old, mu_new); }
  MixtureDensity density() const { return MixtureDensity::two(alpha, mu_old, mu_new, cov); }
  MixtureDensity model(double beta) const { return MixtureDensity::two(beta, mu_old, mu_new, cov); }
  MixtureDensity old_component() const { return MixtureDensity::single(mu_old, cov); }
  MixtureDensity new_component() const { return MixtureDensity::single(mu_new, cov); }
  LearnerParams optimum() const { return LearnerParams::from_beta(alpha, mu_old, mu_new); }
};

// ---------------------------------------------------------------------------
// Disjoint supports.

struct DisjointMixtureSpec {
  double alpha = 0.5;
  double beta = 0.5;
  double kl_oo = 0.0;
  double kl_nn = 0.0;
  double reward_old = 0.0;
  double reward_new = 0.0;

  void validate() const {
    require(alpha >= 0.0 && alpha <= 1.0 && beta >= 0.0 && beta <= 1.0, "alpha and beta must lie in [0,1]");
    require(kl_oo >= 0.0 && kl_nn >= 0.0, "component KL terms must be nonnegative");
  }
};

/// x log(x/y) with 0 log 0 = 0 and x log(x/0) = +∞.
inline double x_log_ratio(double x, double y) {
  if (x == 0.0) return 0.0;
  if (y == 0.0) return kInf;
  return x * std::log(x / y);
}

struct DisjointDecomposition {
  double forward;  // KL(p_α ‖ q_β)
  double reverse;  // KL(q_β ‖ p_α)
};

inline DisjointDecomposition disjoint_decomposition(const DisjointMixtureSpec& s) {
  s.validate();
  const double a = s.alpha, b = s.beta;
  auto comp = [](double w, double kl) { return w == 0.0 ? 0.0 : w * kl; };
  DisjointDecomposition r;
  r.forward = x_log_ratio(a, b) + x_log_ratio(1.0 - a, 1.0 - b) + comp(a, s.kl_oo) + comp(1.0 - a, s.kl_nn);
  r.reverse = x_log_ratio(b, a) + x_log_ratio(1.0 - b, 1.0 - a) + comp(b, s.kl_oo) + comp(1.0 - b, s.kl_nn);
  return r;
}

// ---------------------------------------------------------------------------
// Posterior leakage between two equal-covariance components.

struct LeakageReport {
  double g_to_f;        // E_g[r_f]
  double f_to_g;        // E_f[1 − r_f]
  double g_to_f_bound;  // ½√(w/(1−w)) BC
  double f_to_g_bound;  // ½√((1−w)/w) BC
  std::optional<double> g_to_f_se, f_to_g_se;
};

/// Leakage of the mixture w f + (1 − w) g with f = N(mu_f, Σ), g = N(mu_g, Σ).
inline LeakageReport leakage(const CovarianceModel& cov, const Vec& mu_f, const Vec& mu_g, double w,
                             const EstimatorConfig& cfg) {
  require(w > 0.0 && w < 1.0, "mixture weight must lie in (0,1)");
  const MixtureDensity mix = MixtureDensity::two(w, mu_f, mu_g, cov);
  LeakageReport r{};
  double buf[2];
  {
    const GaussianGrid g = gaussian_grid(cov, mu_g, {mu_f}, cfg, nullptr, 1);
    const ReducedMixture rm(mix, g);
    Accumulator acc(1);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      rm.resp(g, i, buf);
      acc.add(g.w[i], g.batch[i], buf[0]);
    }
    const Estimate e = acc.estimate();
    r.g_to_f = e.scalar();
    if (e.std_err) r.g_to_f_se = e.se();
  }
  {
    const GaussianGrid g = gaussian_grid(cov, mu_f, {mu_g}, cfg, nullptr, 2);
    const ReducedMixture rm(mix, g);
    Accumulator acc(1);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      rm.resp(g, i, buf);
      acc.add(g.w[i], g.batch[i], buf[1]);
    }
    const Estimate e = acc.estimate();
    r.f_to_g = e.scalar();
    if (e.std_err) r.f_to_g_se = e.se();
  }
  const double bc = bhattacharyya_equal_cov(cov, mu_f, mu_g);
  r.g_to_f_bound = 0.5 * std::sqrt(w / (1.0 - w)) * bc;
  r.f_to_g_bound = 0.5 * std::sqrt((1.0 - w) / w) * bc;
  return r;
}

// ---------------------------------------------------------------------------
// Forward KL on new-only data: L(β) = KL(p_n ‖ q_β) with q_β = β p_o + (1 − β) p_n.

struct SftResult {
  double loss;
  double dphi;
  double leak;
  double leak_bound;
  std::optional<double> leak_se;
};

/// Nodes under p_n with cached log(p_o/p_n); evaluating a new β costs one pass over the nodes.
class SftKernel {
 public:
  SftKernel(const TargetSpec& spec, const EstimatorConfig& cfg)
      : grid_(gaussian_grid(spec.cov, spec.mu_new, {spec.mu_old}, cfg, nullptr, 3)),
        bc_(bhattacharyya_equal_cov(spec.cov, spec.mu_old, spec.mu_new)) {
    const Vec a = grid_.coords(spec.cov, spec.mu_old);
    ell_.resize(grid_.size());
    for (Eigen::Index i = 0; i < grid_.size(); ++i) {
      const auto z = grid_.z.col(i);
      ell_[i] = 0.5 * z.squaredNorm() - 0.5 * (z - a).squaredNorm();
    }
  }

  SftResult operator()(double beta) const {
    if (!(beta > 0.0 && beta < 1.0)) throw input_error("beta must lie strictly inside (0,1)");
    const double lb = std::log(beta), l1b = std::log1p(-beta), phi = logit(beta);
    Accumulator acc(2);
    Vec v(2);
    for (Eigen::Index i = 0; i < grid_.size(); ++i) {
      v[0] = -log_add_exp(lb + ell_[i], l1b);
      v[1] = sigmoid(phi + ell_[i]);
      acc.add(grid_.w[i], grid_.batch[i], v);
    }
    const Estimate e = acc.estimate();
    SftResult r{e.value[0], 0.0, e.value[1], 0.5 * std::sqrt(beta / (1.0 - beta)) * bc_, std::nullopt};
    if (e.std_err) r.leak_se = (*e.std_err)[1];
    r.dphi = beta - r.leak;
    if (fault::sft_logit_sign()) r.dphi = -r.dphi;
    return r;
  }

  double dphi(double phi) const { return (*this)(sigmoid(phi)).dphi; }

 private:
  GaussianGrid grid_;
  Vec ell_;
  double bc_;
};

inline SftResult sft_loss_and_logit_grad(double beta, const TargetSpec& spec, const EstimatorConfig& cfg) {
  return SftKernel(spec, cfg)(beta);
}

// ---------------------------------------------------------------------------
// Reverse KL: L(β, m_o, m_n) = KL(q_{β,m_o,m_n} ‖ p).

struct ReverseKlResult {
  double loss;
  double dbeta;
  Vec dm_old;
  Vec dm_new;
  double beta;

  double dphi() const { return dbeta * beta * (1.0 - beta); }
  /// Gradient in θ = (φ, m_n).
  Vec theta_grad() const {
    Vec g(1 + dm_new.size());
    g[0] = dphi();
    g.tail(dm_new.size()) = dm_new;
    return g;
  }
};

/// Loss and gradients against an arbitrary equal-covariance target.
inline ReverseKlResult reverse_kl(double beta, const Vec& m_old, const Vec& m_new, const MixtureDensity& target,
                                  const EstimatorConfig& cfg) {
  if (!(beta > 0.0 && beta < 1.0)) throw input_error("beta must lie strictly inside (0,1)");
  const CovarianceModel& cov = target.cov;
  require(m_old.size() == cov.dim() && m_new.size() == cov.dim(), "means must match the target dimension");
  const MixtureDensity q = MixtureDensity::two(beta, m_old, m_new, cov);
  std::vector<Vec> span = target.means;
  span.push_back(m_old);
  span.push_back(m_new);

  ReverseKlResult r{0.0, 0.0, Vec(), Vec(), beta};
  double eg[2];
  for (int c = 0; c < 2; ++c) {
    const Vec& center = c == 0 ? m_old : m_new;
    const GaussianGrid g = gaussian_grid(cov, center, span, cfg, nullptr, 11 + c);
    const ReducedMixture rq(q, g), rp(target, g);
    const int rk = g.rank();
    double sg = 0.0;
    Vec szg = Vec::Zero(rk);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double gv = rq.log_value(g, i) - rp.log_value(g, i);
      sg += g.w[i] * gv;
      szg += (g.w[i] * gv) * g.z.col(i);
    }
    if (!std::isfinite(sg) || !szg.allFinite()) throw numeric_error("non-finite reverse-KL integrand");
    eg[c] = sg;
    const Vec dm = g.to_ambient(cov, szg) * (c == 0 ? beta : 1.0 - beta);
    (c == 0 ? r.dm_old : r.dm_new) = dm;
  }
  r.loss = beta * eg[0] + (1.0 - beta) * eg[1];
  r.dbeta = eg[0] - eg[1];
  return r;
}

struct ReverseKlGradients {
  double dbeta;
  Vec dm_new;
};

inline ReverseKlGradients reverse_kl_gradients(const LearnerParams& learner, const TargetSpec& spec,
                                               const EstimatorConfig& cfg) {
  const auto r = reverse_kl(learner.beta(), learner.m_old, learner.m_new, spec.density(), cfg);
  return {r.dbeta, r.dm_new};
}

// ---------------------------------------------------------------------------
// Old-mean drift at m_o = μ_o.

struct DriftReport {
  Vec grad;
  double eps_q;
  double eps_p;
  double bound;          // β‖Σ⁻¹‖₂(ε_q‖m_n − μ_o‖ + ε_p‖μ_n − μ_o‖)
  double eps_q_bound;    // ½√((1−β)/β) exp(−‖m_n − μ_o‖²_{Σ⁻¹}/8)
  double eps_p_bound;    // ½√((1−α)/α) exp(−δ²/8)
  double overlap_bound;  // `bound` with the ε's replaced by their overlap bounds
};

/// Misassignment masses E_{N(center)}[1 − r_0] for a list of two-component mixtures sharing component 0 = center.
inline std::vector<double> old_misassignment(const CovarianceModel& cov, const Vec& center,
                                             const std::vector<MixtureDensity>& mixes, const EstimatorConfig& cfg) {
  std::vector<Vec> span;
  for (const auto& m : mixes)
    for (const auto& mu : m.means) span.push_back(mu);
  const GaussianGrid g = gaussian_grid(cov, center, span, cfg, nullptr, 5);
  std::vector<double> out;
  double buf[64];
  for (const auto& m : mixes) {
    const ReducedMixture rm(m, g);
    double s = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      rm.resp(g, i, buf);
      s += g.w[i] * (1.0 - buf[0]);
    }
    out.push_back(s);
  }
  return out;
}

inline DriftReport oldmean_drift(const LearnerParams& learner, const TargetSpec& spec, const EstimatorConfig& cfg) {
  require(learner.m_old.size() == spec.dim() && learner.m_new.size() == spec.dim(), "learner dimension mismatch");
  if ((learner.m_old - spec.mu_old).norm() != 0.0) throw input_error("oldmean_drift requires m_old = mu_old exactly");
  const double beta = learner.beta();
  const auto& cov = spec.cov;
  const auto eps = old_misassignment(
      cov, spec.mu_old, {MixtureDensity::two(beta, spec.mu_old, learner.m_new, cov), spec.density()}, cfg);
  DriftReport r;
  r.eps_q = eps[0];
  r.eps_p = eps[1];
  const Vec dq = learner.m_new - spec.mu_old, dp = spec.mu_new - spec.mu_old;
  r.grad = beta * cov.solve(r.eps_q * dq - r.eps_p * dp);
  const double inv = cov.inverse_norm();
  r.bound = beta * inv * (r.eps_q * dq.norm() + r.eps_p * dp.norm());
  r.eps_q_bound = 0.5 * std::sqrt((1.0 - beta) / beta) * std::exp(-cov.mahalanobis_sq(dq) / 8.0);
  r.eps_p_bound = 0.5 * std::sqrt((1.0 - spec.alpha) / spec.alpha) * std::exp(-cov.mahalanobis_sq(dp) / 8.0);
  r.overlap_bound = beta * inv * (r.eps_q_bound * dq.norm() + r.eps_p_bound * dp.norm());
  return r;
}

// ---------------------------------------------------------------------------
// Forward-KL replay (population level).

enum class ReplayMode { denominator, numerator };

struct ReplayMinimizer {
  double beta_star;
  double deployed_old_mass;
};

inline ReplayMinimizer replay_population_minimizer(double lambda, ReplayMode mode) {
  require(lambda > 0.0 && lambda < 1.0, "lambda must lie in (0,1)");
  if (mode == ReplayMode::denominator) return {0.0, lambda};
  return {lambda, lambda};
}

/// KL(p_n ‖ q_{λ+(1−λ)β}) (denominator) or KL((1−λ)p_n + λp_o ‖ q_β) (numerator).
inline double replay_objective(double lambda, double beta, ReplayMode mode, const TargetSpec& spec,
                               const EstimatorConfig& cfg) {
  const auto& cov = spec.cov;
  if (mode == ReplayMode::denominator) {
    const double bt = lambda + (1.0 - lambda) * beta;
    return kl_divergence(spec.new_component(), spec.model(bt), cfg);
  }
  const MixtureDensity data = MixtureDensity::two(lambda, spec.mu_old, spec.mu_new, cov);
  return kl_divergence(data, spec.model(beta), cfg);
}

struct ReplayGridResult {
  double beta_argmin;
  std::vector<double> betas;
  std::vector<double> losses;
};

inline ReplayGridResult replay_grid_argmin(double lambda, ReplayMode mode, const TargetSpec& spec,
                                           const EstimatorConfig& cfg, int points = 101) {
  require(points >= 3, "grid needs at least 3 points");
  ReplayGridResult r;
  double best = kInf;
  for (int i = 0; i < points; ++i) {
    const double b = static_cast<double>(i) / (points - 1);
    const double l = replay_objective(lambda, b, mode, spec, cfg);
    r.betas.push_back(b);
    r.losses.push_back(l);
    if (l < best) {
      best = l;
      r.beta_argmin = b;
    }
  }
  return r;
}

}  // namespace forgetlab
