#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include "errors.hpp"
#include "estimators.hpp"
#include "flows.hpp"
#include "mixture.hpp"
#include "objectives.hpp"
#include "rng.hpp"

namespace forgetlab {

// ---------------------------------------------------------------------------
// SDFT: EMA teacher with a demonstration anchor, student tracks the teacher by reverse-KL steps.

struct SdftState {
  double alpha_t;  // teacher old weight
  Vec nu_t;        // teacher new mean
  double beta_t;   // student old weight
  Vec m_t;         // student new mean

  Vec teacher_vec() const {
    Vec v(1 + nu_t.size());
    v << alpha_t, nu_t;
    return v;
  }
  Vec student_vec() const {
    Vec v(1 + m_t.size());
    v << beta_t, m_t;
    return v;
  }
};

struct SdftConfig {
  double alpha_c;
  Vec nu_c;
  double step_gamma;
  double ema_zeta;
  double demo_lambda;
  Vec mu_old;
  CovarianceModel cov;

  void validate() const {
    require(alpha_c > 0.0 && alpha_c < 1.0, "anchor weight must lie in (0,1)");
    require(nu_c.size() == cov.dim() && mu_old.size() == cov.dim(), "anchor and old mean must match dimension");
    require(step_gamma > 0.0, "step_gamma must be positive");
    require(ema_zeta > 0.0 && ema_zeta <= 1.0, "ema_zeta must lie in (0,1]");
    require(demo_lambda >= 0.0 && demo_lambda <= 1.0, "demo_lambda must lie in [0,1]");
  }
  Vec anchor_vec() const {
    Vec v(1 + nu_c.size());
    v << alpha_c, nu_c;
    return v;
  }
};

inline constexpr double kSdftClamp = 1e-12;

struct SdftStepResult {
  SdftState state;
  bool clamped;
  double loss;  // phasewise loss before the step
};

inline double clamp_probability(double p, bool& flag) {
  const double c = std::clamp(p, kSdftClamp, 1.0 - kSdftClamp);
  if (c != p) flag = true;
  return c;
}

/// Phasewise loss KL(q_{β,μ_o,m} ‖ p_{α,μ_o,ν}) and its raw (β, m) gradient.
inline ReverseKlResult sdft_phase(double beta, const Vec& m, double alpha, const Vec& nu, const SdftConfig& cfg,
                                  const EstimatorConfig& est) {
  return reverse_kl(beta, cfg.mu_old, m, MixtureDensity::two(alpha, cfg.mu_old, nu, cfg.cov), est);
}

inline SdftStepResult sdft_step(const SdftState& s, const SdftConfig& cfg, const EstimatorConfig& est) {
  cfg.validate();
  require(s.nu_t.size() == cfg.cov.dim() && s.m_t.size() == cfg.cov.dim(), "state dimension mismatch");
  const ReverseKlResult g = sdft_phase(s.beta_t, s.m_t, s.alpha_t, s.nu_t, cfg, est);
  if (!std::isfinite(g.dbeta) || !g.dm_new.allFinite()) throw numeric_error("non-finite SDFT gradient");
  SdftStepResult r{s, false, g.loss};
  r.state.beta_t = clamp_probability(s.beta_t - cfg.step_gamma * g.dbeta, r.clamped);
  r.state.m_t = s.m_t - cfg.step_gamma * g.dm_new;
  const double z = cfg.ema_zeta, lam = cfg.demo_lambda;
  r.state.alpha_t =
      clamp_probability((1.0 - z) * s.alpha_t + z * ((1.0 - lam) * r.state.beta_t + lam * cfg.alpha_c), r.clamped);
  r.state.nu_t = (1.0 - z) * s.nu_t + z * ((1.0 - lam) * r.state.m_t + lam * cfg.nu_c);
  return r;
}

/// Probed curvature of the phasewise loss: FD Hessian in raw (β, m) at x, teacher y.
inline Mat sdft_phase_hessian(const Vec& x, double alpha, const Vec& nu, const SdftConfig& cfg,
                              const EstimatorConfig& est, double h = 1e-4) {
  const int d = cfg.cov.dim();
  auto grad = [&](const Vec& v) {
    const ReverseKlResult g = sdft_phase(v[0], v.tail(d), alpha, nu, cfg, est);
    Vec out(1 + d);
    out << g.dbeta, g.dm_new;
    return out;
  };
  const Mat J = fd_jacobian(grad, x, h);
  return 0.5 * (J + J.transpose());
}

struct SdftCurvature {
  double mu_est;  // min λ_min at probed synchronized points x = y
  double m_est;   // max λ_max over probed points
};

/// Probes at the given teacher states (x = y) and at the given student/teacher pairs.
inline SdftCurvature sdft_probe_curvature(const std::vector<SdftState>& states, const SdftConfig& cfg,
                                          const EstimatorConfig& est) {
  SdftCurvature c{kInf, 0.0};
  for (const auto& s : states) {
    Eigen::SelfAdjointEigenSolver<Mat> at_teacher(sdft_phase_hessian(s.teacher_vec(), s.alpha_t, s.nu_t, cfg, est),
                                                  Eigen::EigenvaluesOnly);
    c.mu_est = std::min(c.mu_est, at_teacher.eigenvalues()[0]);
    c.m_est = std::max(c.m_est, at_teacher.eigenvalues().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Mat> at_student(sdft_phase_hessian(s.student_vec(), s.alpha_t, s.nu_t, cfg, est),
                                                  Eigen::EigenvaluesOnly);
    c.m_est = std::max(c.m_est, at_student.eigenvalues().maxCoeff());
  }
  return c;
}

struct SdftRun {
  std::vector<SdftState> states;  // states[0] = init
  std::vector<double> losses;
  std::vector<double> lags;                // ‖m̃_t − ν̃_t‖
  std::vector<double> contraction_ratios;  // ‖m̃_{t+1} − ν̃_t‖ / ‖m̃_t − ν̃_t‖ while the lag exceeds 1e-10
  std::vector<double> teacher_anchor_dists;
  std::vector<double> old_grad_norms;
  double old_grad_sum = 0.0;
  double limit_error = 0.0;         // ‖(β_T, m_T) − target⋆‖
  double anchor_target_dist = 0.0;  // ‖ν̃(c) − target⋆‖
  int clamp_events = 0;
  double fit_kappa = 0.0;  // geometric fit g_t ≤ C κ^t
  double fit_c = 0.0;
};

struct SdftRunOptions {
  std::optional<Vec> target_star;  // (α⋆, ν⋆); defaults to the anchor
  double lag_floor = 1e-10;
};

/// Least-squares fit of log g_t = log C + t log κ, then C raised so that g_t ≤ C κ^t for all t.
inline std::pair<double, double> geometric_fit(const std::vector<double>& g) {
  std::vector<double> ts, ls;
  for (std::size_t t = 0; t < g.size(); ++t)
    if (g[t] > 0.0 && std::isfinite(g[t])) {
      ts.push_back(static_cast<double>(t));
      ls.push_back(std::log(g[t]));
    }
  if (ts.size() < 2) return {0.0, ts.empty() ? 0.0 : std::exp(ls[0])};
  const double n = static_cast<double>(ts.size());
  double mt = 0, ml = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    mt += ts[i] / n;
    ml += ls[i] / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    sxy += (ts[i] - mt) * (ls[i] - ml);
    sxx += (ts[i] - mt) * (ts[i] - mt);
  }
  const double kappa = std::exp(sxy / sxx);
  double c = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) c = std::max(c, std::exp(ls[i] - ts[i] * std::log(kappa)));
  return {kappa, c};
}

inline SdftRun sdft_run(const SdftState& init, const SdftConfig& cfg, int steps, const EstimatorConfig& est,
                        const SdftRunOptions& opts = {}) {
  cfg.validate();
  require(steps >= 1, "steps must be positive");
  const Vec anchor = cfg.anchor_vec();
  const Vec target = opts.target_star ? *opts.target_star : anchor;
  require(target.size() == anchor.size(), "target state has wrong dimension");
  SdftRun run;
  run.states.push_back(init);
  SdftState s = init;
  for (int t = 0; t <= steps; ++t) {
    const double lag = (s.student_vec() - s.teacher_vec()).norm();
    run.lags.push_back(lag);
    run.teacher_anchor_dists.push_back((s.teacher_vec() - anchor).norm());
    const LearnerParams learner = LearnerParams::from_beta(s.beta_t, cfg.mu_old, s.m_t);
    const TargetSpec teacher(s.alpha_t, cfg.mu_old, s.nu_t, cfg.cov);
    const double og = oldmean_drift(learner, teacher, est).grad.norm();
    run.old_grad_norms.push_back(og);
    run.old_grad_sum += og;
    if (t == steps) break;
    const SdftStepResult r = sdft_step(s, cfg, est);
    run.losses.push_back(r.loss);
    run.clamp_events += r.clamped;
    if (lag > opts.lag_floor) run.contraction_ratios.push_back((r.state.student_vec() - s.teacher_vec()).norm() / lag);
    s = r.state;
    run.states.push_back(s);
  }
  run.limit_error = (s.student_vec() - target).norm();
  run.anchor_target_dist = (anchor - target).norm();
  std::tie(run.fit_kappa, run.fit_c) = geometric_fit(run.old_grad_norms);
  return run;
}

// ---------------------------------------------------------------------------
// Two-level step rewards.

enum class PartitionKind { disjoint, bayes_halfspace };

struct StepReward {
  double u_old = 0.0;
  double u_new = 0.0;
  PartitionKind partition = PartitionKind::bayes_halfspace;

  double bound() const { return std::max(std::abs(u_old), std::abs(u_new)); }
};

/// Shared geometry: old/new means and covariance of the reference components.
struct Geometry {
  Vec mu_o;
  Vec mu_n;
  CovarianceModel cov;

  BayesPartition partition() const { return bayes_partition_stats(mu_o, mu_n, cov); }
  double delta() const { return separation(cov, mu_o, mu_n); }
};

inline double step_reward_at(const StepReward& r, const BayesPartition& bp, const Vec& y) {
  return bp.in_new(y) ? r.u_new : r.u_old;
}

// ---------------------------------------------------------------------------
// TTT: entropic utility J_η(q) = log E_q[e^{ηr}] with a KL anchor to q_{β₀}.

struct TttConfig {
  double eta = 1.0;
  double lambda_ref = 0.0;
  double beta0 = 0.5;
  StepReward reward;
  Geometry geometry;

  void validate() const {
    require(eta > 0.0, "eta must be positive");
    require(lambda_ref >= 0.0, "lambda_ref must be nonnegative");
    require(beta0 > 0.0 && beta0 < 1.0, "beta0 must lie in (0,1)");
    require(std::isfinite(reward.u_old) && std::isfinite(reward.u_new), "rewards must be finite");
    if (reward.partition == PartitionKind::bayes_halfspace)
      require((geometry.mu_o - geometry.mu_n).norm() > 0.0, "old and new means must differ");
  }
};

/// KL(q_β ‖ q_{β₀}) and its β-derivative on cached nodes (log p_o/p_n per node).
class MixtureWeightKl {
 public:
  MixtureWeightKl(const Geometry& g, double beta0, const EstimatorConfig& est) : beta0_(beta0) {
    for (int c = 0; c < 2; ++c) {
      const Vec& center = c == 0 ? g.mu_o : g.mu_n;
      grids_[c] = gaussian_grid(g.cov, center, {g.mu_o, g.mu_n}, est, nullptr, 31 + c);
      const Vec ao = grids_[c].coords(g.cov, g.mu_o), an = grids_[c].coords(g.cov, g.mu_n);
      ell_[c].resize(grids_[c].size());
      for (Eigen::Index i = 0; i < grids_[c].size(); ++i) {
        const auto z = grids_[c].z.col(i);
        ell_[c][i] = 0.5 * (z - an).squaredNorm() - 0.5 * (z - ao).squaredNorm();
      }
    }
  }

  /// (D(β), D′(β)) with D′(β) = ∫(p_o − p_n) log(q_β/q_{β₀}).
  std::pair<double, double> operator()(double beta) const {
    require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0,1]");
    const double lb0 = std::log(beta0_), l1b0 = std::log1p(-beta0_);
    double e[2];
    for (int c = 0; c < 2; ++c) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < grids_[c].size(); ++i) {
        const double l = ell_[c][i];
        double lq;
        if (beta == 0.0)
          lq = 0.0;
        else if (beta == 1.0)
          lq = l;
        else
          lq = log_add_exp(std::log(beta) + l, std::log1p(-beta));
        s += grids_[c].w[i] * (lq - log_add_exp(lb0 + l, l1b0));
      }
      e[c] = s;
    }
    return {beta * e[0] + (1.0 - beta) * e[1], e[0] - e[1]};
  }

 private:
  double beta0_;
  GaussianGrid grids_[2];
  Vec ell_[2];
};

struct TttAnalysis {
  std::function<double(double)> J;
  std::function<double(double)> D;
  std::function<double(double)> Dprime;
  std::function<double(double)> objective;        // J − λ_ref D
  std::function<double(double)> objective_prime;  // H′(β)
  double lambda_crit_new;
  double lambda_crit_old;
  double beta_star;
  std::string case_label;  // collapse_new | collapse_old | interior | reference
  double gamma;
  double kappa;
};

inline double binary_kl(double b, double b0) { return x_log_ratio(b, b0) + x_log_ratio(1.0 - b, 1.0 - b0); }

/// Bisection for the root of a decreasing function on [lo, hi] to width 1e-12.
inline double bisect_decreasing(const std::function<double(double)>& f, double lo, double hi) {
  const double flo = f(lo), fhi = f(hi);
  if (!(flo > 0.0 && fhi < 0.0))
    throw consistency_error("first-order condition does not change sign on the bracket");
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

inline TttAnalysis ttt_analysis(const TttConfig& cfg, const EstimatorConfig& est) {
  cfg.validate();
  const double a = std::exp(cfg.eta * cfg.reward.u_old), b = std::exp(cfg.eta * cfg.reward.u_new);
  const double b0 = cfg.beta0, lam = cfg.lambda_ref;
  TttAnalysis r;
  if (cfg.reward.partition == PartitionKind::disjoint) {
    r.gamma = 0.0;
    r.kappa = 1.0;
    r.D = [b0](double beta) { return binary_kl(beta, b0); };
    r.Dprime = [b0](double beta) { return std::log(beta / b0) - std::log((1.0 - beta) / (1.0 - b0)); };
  } else {
    const BayesPartition bp = cfg.geometry.partition();
    r.gamma = bp.gamma;
    r.kappa = bp.kappa;
    auto kl = std::make_shared<MixtureWeightKl>(cfg.geometry, b0, est);
    r.D = [kl](double beta) { return (*kl)(beta).first; };
    r.Dprime = [kl](double beta) { return (*kl)(beta).second; };
  }
  const double g = r.gamma, k = r.kappa;
  r.J = [a, b, g, k](double beta) { return std::log(a * (g + k * beta) + b * (1.0 - g - k * beta)); };
  const auto J = r.J, D = r.D, Dp = r.Dprime;
  r.objective = [J, D, lam](double beta) { return J(beta) - lam * D(beta); };
  auto jprime = [a, b, g, k](double beta) { return k * (a - b) / (a * (g + k * beta) + b * (1.0 - g - k * beta)); };
  r.objective_prime = [jprime, Dp, lam](double beta) { return jprime(beta) - (lam == 0.0 ? 0.0 : lam * Dp(beta)); };

  if (cfg.reward.partition == PartitionKind::disjoint) {
    r.lambda_crit_new = 0.0;
    r.lambda_crit_old = 0.0;
  } else {
    r.lambda_crit_new = k * (b - a) / ((a * g + b * (1.0 - g)) * (-Dp(0.0)));
    r.lambda_crit_old = k * (a - b) / ((a * (1.0 - g) + b * g) * Dp(1.0));
  }

  if (a == b) {
    r.beta_star = b0;
    r.case_label = "reference";
  } else if (b > a) {
    if (lam <= r.lambda_crit_new) {
      r.beta_star = 0.0;
      r.case_label = "collapse_new";
    } else {
      r.beta_star = bisect_decreasing(r.objective_prime, 0.0, b0);
      r.case_label = "interior";
    }
  } else {
    if (lam <= r.lambda_crit_old) {
      r.beta_star = 1.0;
      r.case_label = "collapse_old";
    } else {
      r.beta_star = bisect_decreasing(r.objective_prime, b0, 1.0);
      r.case_label = "interior";
    }
  }
  return r;
}

/// Monte Carlo of J_η(q_β) = log E_{q_β}[e^{ηr}] (Bayes-halfspace reward) with a jackknife error.
inline Estimate ttt_J_monte_carlo(const TttConfig& cfg, double beta, std::int64_t n, std::uint64_t seed) {
  cfg.validate();
  const BayesPartition bp = cfg.geometry.partition();
  const MixtureDensity q = MixtureDensity::two(beta, cfg.geometry.mu_o, cfg.geometry.mu_n, cfg.geometry.cov);
  const SampleSet s = sample(q, n, seed);
  Mat bsum = Mat::Zero(1, kJackknifeBatches);
  Vec bmass = Vec::Zero(kJackknifeBatches);
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = std::exp(cfg.eta * step_reward_at(cfg.reward, bp, s.points.row(i).transpose()));
    bsum(0, i % kJackknifeBatches) += v;
    bmass[i % kJackknifeBatches] += 1.0;
  }
  auto logmean = [](const Vec& m) { return Vec::Constant(1, std::log(m[0])); };
  Estimate e{logmean(bsum.rowwise().sum() / static_cast<double>(n)), std::nullopt};
  e.std_err = jackknife_se(bsum, bmass, logmean);
  return e;
}

struct TttOldMeanGradient {
  Vec grad;
  double bound;
  double w_old;
  double w_new;
  double mgf;  // E_{q_{β,μ_o,m_n}}[e^{ηr}]
};

/// E_{q_{β,μ_o,m_n}}[e^{ηr}] evaluated at a general old mean (closed form via Φ).
inline double ttt_mgf(const TttConfig& cfg, double beta, const Vec& m_old, const Vec& m_new) {
  const BayesPartition bp = cfg.geometry.partition();
  const double a = std::exp(cfg.eta * cfg.reward.u_old), b = std::exp(cfg.eta * cfg.reward.u_new);
  auto comp = [&](const Vec& m) {
    const double pn = bp.new_mass(m);
    return a * (1.0 - pn) + b * pn;
  };
  return beta * comp(m_old) + (1.0 - beta) * comp(m_new);
}

inline TttOldMeanGradient ttt_oldmean_gradient(double beta, const Vec& m_new, const TttConfig& cfg,
                                               const EstimatorConfig& est) {
  (void)est;
  cfg.validate();
  require(cfg.reward.partition == PartitionKind::bayes_halfspace, "old-mean gradient needs the Bayes-halfspace reward");
  require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0,1]");
  const BayesPartition bp = cfg.geometry.partition();
  const double a = std::exp(cfg.eta * cfg.reward.u_old), b = std::exp(cfg.eta * cfg.reward.u_new);
  TttOldMeanGradient r;
  r.mgf = ttt_mgf(cfg, beta, cfg.geometry.mu_o, m_new);
  r.w_old = a / r.mgf;
  r.w_new = b / r.mgf;
  const double d = bp.delta;
  r.grad = beta * (r.w_new - r.w_old) * (normal_pdf(d / 2.0) / d) * bp.normal;
  const double R = cfg.reward.bound();
  r.bound = beta * (std::exp(2.0 * cfg.eta * R) - std::exp(-2.0 * cfg.eta * R)) / std::sqrt(2.0 * std::numbers::pi) *
            std::exp(-d * d / 8.0) / d * bp.normal.norm();
  return r;
}

// ---------------------------------------------------------------------------
// OAPL: exponential tilt q* = q₀ e^{r/τ}/Z of the frozen reference q₀ = q_{β₀, μ_o, μ_n}.

struct OaplConfig {
  double tau = 1.0;
  double beta0 = 0.5;
  StepReward reward;
  Geometry geometry;

  void validate() const {
    require(tau > 0.0, "tau must be positive");
    require(beta0 > 0.0 && beta0 < 1.0, "beta0 must lie in (0,1)");
    require(std::isfinite(reward.u_old) && std::isfinite(reward.u_new), "rewards must be finite");
    if (reward.partition == PartitionKind::bayes_halfspace)
      require((geometry.mu_o - geometry.mu_n).norm() > 0.0, "old and new means must differ");
  }
  MixtureDensity reference() const {
    return MixtureDensity::two(beta0, geometry.mu_o, geometry.mu_n, geometry.cov);
  }
};

struct OaplTarget {
  double v_star;
  double z;
  std::function<double(const Vec&)> log_qstar;  // Bayes-halfspace mode only
  double beta_star_disjoint;
  double expected_old_resp;
  double gamma;
};

inline OaplTarget oapl_target(const OaplConfig& cfg, const EstimatorConfig& est) {
  (void)est;
  cfg.validate();
  const double eo = std::exp(cfg.reward.u_old / cfg.tau), en = std::exp(cfg.reward.u_new / cfg.tau);
  OaplTarget t;
  t.gamma = 0.0;
  std::optional<BayesPartition> bp;
  if (cfg.reward.partition == PartitionKind::bayes_halfspace) {
    bp = cfg.geometry.partition();
    t.gamma = bp->gamma;
  }
  const double g = t.gamma, b0 = cfg.beta0;
  const double io = (1.0 - g) * eo + g * en, in = g * eo + (1.0 - g) * en;
  t.z = b0 * io + (1.0 - b0) * in;
  t.v_star = cfg.tau * std::log(t.z);
  t.beta_star_disjoint = b0 * eo / (b0 * eo + (1.0 - b0) * en);
  t.expected_old_resp = b0 * io / t.z;
  if (bp) {
    const MixtureDensity q0 = cfg.reference();
    const double log_z = std::log(t.z), tau = cfg.tau;
    const StepReward rw = cfg.reward;
    const BayesPartition part = *bp;
    t.log_qstar = [q0, log_z, tau, rw, part](const Vec& y) {
      return log_density(q0, y) + step_reward_at(rw, part, y) / tau - log_z;
    };
  } else {
    t.log_qstar = [](const Vec&) -> double {
      throw method_error("the tilted density has no Gaussian form under disjoint supports");
    };
  }
  return t;
}

/// Self-normalized importance sampling from q₀ with weights e^{r/τ}: E_{q*}[h].
inline Estimate snis_estimate(const MixtureDensity& q0, const std::function<double(const Vec&, int)>& log_weight,
                              const std::function<double(const Vec&, int)>& h, std::int64_t n, std::uint64_t seed) {
  const SampleSet s = sample(q0, n, seed);
  Mat bsum = Mat::Zero(2, kJackknifeBatches);
  Vec bmass = Vec::Zero(kJackknifeBatches);
  for (std::int64_t i = 0; i < n; ++i) {
    const Vec y = s.points.row(i).transpose();
    const int lab = s.labels[static_cast<std::size_t>(i)];
    const double w = std::exp(log_weight(y, lab));
    bsum(0, i % kJackknifeBatches) += w * h(y, lab);
    bsum(1, i % kJackknifeBatches) += w;
    bmass[i % kJackknifeBatches] += 1.0;
  }
  auto ratio = [](const Vec& m) { return Vec::Constant(1, m[0] / m[1]); };
  const Vec tot = bsum.rowwise().sum();
  Estimate e{ratio(tot), std::nullopt};
  e.std_err = jackknife_se(bsum, bmass, ratio);
  return e;
}

struct OaplGradient {
  double j_value;
  Vec grad_m;
  double oldmode_term_norm;  // ‖2τβ₀ E_{p_o}[A* r_n Σ⁻¹(Y − μ_n)]‖ at the synchronized point
  double oldmode_bound;      // 4τRβ₀√M√ε
  double eps_ref;            // E_{p_o}[r_n^{(β₀, μ_n)}]
  double m_on;               // tr Σ⁻¹ + (μ_o − μ_n)ᵀΣ⁻²(μ_o − μ_n)
};

/// J(β, m_n) = E_{q₀}[(τ log(q_{β,m_n}/q₀) − A*)²] and ∇_{m_n}J = 2τE_{q₀}[Δ r_n Σ⁻¹(Y − m_n)].
inline OaplGradient oapl_regression_grad(double beta, const Vec& m_new, const OaplConfig& cfg,
                                         const EstimatorConfig& est) {
  cfg.validate();
  require(cfg.reward.partition == PartitionKind::bayes_halfspace, "regression gradient needs the Bayes-halfspace reward");
  require(beta > 0.0 && beta < 1.0, "beta must lie strictly inside (0,1)");
  const auto& geo = cfg.geometry;
  const auto& cov = geo.cov;
  const BayesPartition bp = geo.partition();
  const OaplTarget target = oapl_target(cfg, est);
  const double tau = cfg.tau;
  const MixtureDensity q0 = cfg.reference();
  const MixtureDensity q = MixtureDensity::two(beta, geo.mu_o, m_new, cov);
  const Halfspace split{bp.normal, bp.midpoint};

  OaplGradient r{};
  Vec gacc = Vec::Zero(cov.dim());
  double buf[2];
  for (int c = 0; c < 2; ++c) {
    const GaussianGrid g = gaussian_grid(cov, q0.means[c], {geo.mu_o, geo.mu_n, m_new}, est, &split, 41 + c);
    const ReducedMixture rq(q, g), r0(q0, g);
    const Vec am = g.coords(cov, m_new);
    double jv = 0.0;
    Vec sz = Vec::Zero(g.rank());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const Vec y = g.point(i);
      const double astar = step_reward_at(cfg.reward, bp, y) - target.v_star;
      const double lq = rq.resp(g, i, buf);
      const double delta = tau * (lq - r0.log_value(g, i)) - astar;
      jv += g.w[i] * delta * delta;
      sz += (g.w[i] * delta * buf[1]) * (g.z.col(i) - am);
    }
    r.j_value += q0.weights[c] * jv;
    gacc += q0.weights[c] * g.to_ambient(cov, sz);
  }
  r.grad_m = 2.0 * tau * gacc;

  // Old-mode contribution at the synchronized point (β₀, μ_n).
  {
    const GaussianGrid g = gaussian_grid(cov, geo.mu_o, {geo.mu_n}, est, &split, 43);
    const ReducedMixture r0(q0, g);
    const Vec an = g.coords(cov, geo.mu_n);
    Vec sz = Vec::Zero(g.rank());
    double eps = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double astar = step_reward_at(cfg.reward, bp, g.point(i)) - target.v_star;
      r0.resp(g, i, buf);
      sz += (g.w[i] * astar * buf[1]) * (g.z.col(i) - an);
      eps += g.w[i] * buf[1];
    }
    r.oldmode_term_norm = (2.0 * tau * cfg.beta0 * g.to_ambient(cov, sz)).norm();
    r.eps_ref = eps;
    const Vec dm = geo.mu_o - geo.mu_n;
    const Vec sd = cov.solve(dm);
    r.m_on = cov.inverse().trace() + sd.squaredNorm();
    r.oldmode_bound = 4.0 * tau * cfg.reward.bound() * cfg.beta0 * std::sqrt(r.m_on) * std::sqrt(eps);
  }
  return r;
}

/// Exponential tilt of a reference mixture by an arbitrary reward; Z by quadrature over the reference.
struct ExponentialTilt {
  MixtureDensity reference;
  std::function<double(const Vec&)> reward;
  double tau;
  double log_z;

  double log_density(const Vec& y) const { return forgetlab::log_density(reference, y) + reward(y) / tau - log_z; }
};

/// `span` must contain every mean the reward depends on.
inline ExponentialTilt make_exponential_tilt(const MixtureDensity& reference,
                                             std::function<double(const Vec&)> reward, double tau,
                                             const std::vector<Vec>& span, const EstimatorConfig& est) {
  require(tau > 0.0, "tau must be positive");
  const Estimate z = expectation(reference, [&](const Vec& y) { return Vec::Constant(1, std::exp(reward(y) / tau)); },
                                 est, span);
  return ExponentialTilt{reference, std::move(reward), tau, std::log(z.scalar())};
}

}  // namespace forgetlab
