#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "estimators.hpp"
#include "mixture.hpp"
#include "objectives.hpp"
#include "rng.hpp"

namespace forgetlab {

inline constexpr double kLogitClip = 30.0;
inline constexpr double kCollapseBeta = 1e-13;

enum class FlowObjective { sft_logit, reverse_kl };

struct Trajectory {
  std::vector<double> times;
  std::vector<LearnerParams> states;
  std::vector<double> losses;
  std::vector<double> grad_norms;
  bool collapsed = false;  // β left (1e-13, 1 − 1e-13)
  int halvings = 0;        // total step halvings triggered by loss increases
  double max_loss_increase = 0.0;

  std::size_t size() const { return times.size(); }
  double final_beta() const { return states.back().beta(); }
};

struct FlowOptions {
  double stop_below_beta = 0.0;  // stop once β < this (0 disables)
  double stop_below_loss = 0.0;  // stop once loss < this (0 disables)
  double stop_above_beta = 0.0;  // stop once β > this (0 disables)
  int max_halvings = 20;
};

namespace detail {

struct FlowEval {
  double loss;
  Vec grad;  // ∇θ L
};

inline Vec clip_logit(Vec theta) {
  theta[0] = std::clamp(theta[0], -kLogitClip, kLogitClip);
  return theta;
}

}  // namespace detail

/// Explicit RK4 on θ̇ = −∇θ L with θ = (φ) for sft_logit and θ = (φ, m_n) for reverse_kl.
inline Trajectory integrate_flow(FlowObjective objective, const LearnerParams& init, const TargetSpec& spec,
                                 double dt, double t_max, const EstimatorConfig& cfg, const FlowOptions& opts = {}) {
  require(dt > 0.0 && dt <= 0.5, "dt must lie in (0, 0.5]");
  require(t_max > 0.0 && std::isfinite(t_max), "t_max must be positive and finite");
  require(init.m_old.size() == spec.dim() && init.m_new.size() == spec.dim(), "initial state dimension mismatch");
  cfg.validate();
  const int d = spec.dim();
  const MixtureDensity target = spec.density();

  std::optional<SftKernel> kernel;
  if (objective == FlowObjective::sft_logit) kernel.emplace(spec, cfg);

  auto evaluate = [&](const Vec& theta) {
    detail::FlowEval e;
    const double beta = sigmoid(theta[0]);
    if (objective == FlowObjective::sft_logit) {
      const SftResult r = (*kernel)(beta);
      e.loss = r.loss;
      e.grad = Vec::Constant(1, r.dphi);
    } else {
      const ReverseKlResult r = reverse_kl(beta, init.m_old, theta.tail(d), target, cfg);
      e.loss = r.loss;
      e.grad = r.theta_grad();
    }
    if (!std::isfinite(e.loss) || !e.grad.allFinite()) throw numeric_error("non-finite flow state");
    return e;
  };
  auto to_state = [&](const Vec& theta) {
    LearnerParams p{theta[0], init.m_old, objective == FlowObjective::sft_logit ? init.m_new : Vec(theta.tail(d))};
    return p;
  };

  Vec theta;
  if (objective == FlowObjective::sft_logit) {
    theta = Vec::Constant(1, init.logit);
  } else {
    theta.resize(1 + d);
    theta[0] = init.logit;
    theta.tail(d) = init.m_new;
  }
  theta = detail::clip_logit(theta);

  Trajectory tr;
  const int record_every = static_cast<int>(std::ceil(0.1 / dt - 1e-12));
  detail::FlowEval cur = evaluate(theta);
  auto record = [&](double t) {
    tr.times.push_back(t);
    tr.states.push_back(to_state(theta));
    tr.losses.push_back(cur.loss);
    tr.grad_norms.push_back(cur.grad.norm());
  };
  record(0.0);

  const long n_steps = static_cast<long>(std::ceil(t_max / dt - 1e-9));
  double t = 0.0;
  for (long step = 1; step <= n_steps; ++step) {
    const double t_end = std::min(step * dt, t_max);
    double h = t_end - t;
    int halved = 0;
    while (t < t_end - 1e-15) {
      h = std::min(h, t_end - t);
      const Vec k1 = -cur.grad;
      const Vec k2 = -evaluate(detail::clip_logit(theta + 0.5 * h * k1)).grad;
      const Vec k3 = -evaluate(detail::clip_logit(theta + 0.5 * h * k2)).grad;
      const Vec k4 = -evaluate(detail::clip_logit(theta + h * k3)).grad;
      const Vec next = detail::clip_logit(theta + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
      if (!next.allFinite()) throw numeric_error("flow diverged at t = " + std::to_string(t));
      const detail::FlowEval ne = evaluate(next);
      const double rise = ne.loss - cur.loss;
      if (rise > 1e-14 + 1e-12 * std::abs(cur.loss)) {
        if (++halved > opts.max_halvings)
          throw numeric_error("flow could not descend after step halving at t = " + std::to_string(t));
        ++tr.halvings;
        h *= 0.5;
        continue;
      }
      tr.max_loss_increase = std::max(tr.max_loss_increase, rise);
      theta = next;
      cur = ne;
      t += h;
    }
    t = t_end;
    const double beta = sigmoid(theta[0]);
    if (!(beta > kCollapseBeta && beta < 1.0 - kCollapseBeta)) tr.collapsed = true;
    const bool stop = (opts.stop_below_beta > 0.0 && beta < opts.stop_below_beta) ||
                      (opts.stop_above_beta > 0.0 && beta > opts.stop_above_beta) ||
                      (opts.stop_below_loss > 0.0 && cur.loss < opts.stop_below_loss);
    if (step % record_every == 0 || step == n_steps || stop) record(t);
    if (stop) break;
  }
  return tr;
}

/// CSV columns: t, beta, m_new_0..m_new_{d−1}, loss, grad_norm (17 significant digits).
inline void write_trajectory_csv(const Trajectory& tr, std::ostream& os) {
  const int d = tr.states.empty() ? 0 : static_cast<int>(tr.states.front().m_new.size());
  os << "t,beta";
  for (int j = 0; j < d; ++j) os << ",m_new_" << j;
  os << ",loss,grad_norm\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    os << tr.times[i] << ',' << tr.states[i].beta();
    for (int j = 0; j < d; ++j) os << ',' << tr.states[i].m_new[j];
    os << ',' << tr.losses[i] << ',' << tr.grad_norms[i] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Local PL certificate at θ⋆ = (logit α, μ_n).

struct PLCertificate {
  Mat hessian;      // Fisher form
  Mat hessian_fd;   // finite differences of the analytic gradient
  double hessian_rel_diff;
  double mu_star;
  double l_hessian;  // probed Hessian-Lipschitz estimate
  double rho;
  double eps_loc;
  bool rate_ok;
  double min_pl_ratio;        // min ‖∇L‖²/(μ⋆ L) over probes
  double min_growth_margin;   // min L − (μ⋆/4)‖θ − θ⋆‖² over probes
  int probes_used;
};

struct PLOptions {
  double r0 = 0.5;
  int lipschitz_pairs = 200;
  int probes = 100;
  double fd_step = 1e-4;
  double loss_floor = 1e-12;  // probes with L below this are at the numerical floor and skipped
};

inline Vec reverse_kl_theta_grad(const Vec& theta, const Vec& m_old, const MixtureDensity& target,
                                 const EstimatorConfig& cfg) {
  const int d = static_cast<int>(m_old.size());
  return reverse_kl(sigmoid(theta[0]), m_old, theta.tail(d), target, cfg).theta_grad();
}

inline double reverse_kl_theta_loss(const Vec& theta, const Vec& m_old, const MixtureDensity& target,
                                    const EstimatorConfig& cfg) {
  const int d = static_cast<int>(m_old.size());
  return reverse_kl(sigmoid(theta[0]), m_old, theta.tail(d), target, cfg).loss;
}

/// E_{p_α}[s sᵀ] with s = (r_o − α, r_n Σ⁻¹(Y − μ_n)).
inline Mat fisher_hessian(const TargetSpec& spec, const EstimatorConfig& cfg) {
  const int d = spec.dim();
  const MixtureDensity p = spec.density();
  Mat H = Mat::Zero(d + 1, d + 1);
  double buf[2];
  for (int k = 0; k < 2; ++k) {
    const double wk = p.weights[k];
    const GaussianGrid g = gaussian_grid(spec.cov, p.means[k], p.means, cfg, nullptr, 21 + k);
    const ReducedMixture rm(p, g);
    const Vec an = g.coords(spec.cov, spec.mu_new);
    const int r = g.rank();
    double s00 = 0.0, rn2 = 0.0;
    Vec s0m = Vec::Zero(r);
    Mat smm = Mat::Zero(r, r);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      rm.resp(g, i, buf);
      const double a = buf[0] - spec.alpha, rn = buf[1], w = g.w[i];
      const Vec u = g.z.col(i) - an;
      s00 += w * a * a;
      s0m += (w * a * rn) * u;
      smm += (w * rn * rn) * (u * u.transpose());
      rn2 += w * rn * rn;
    }
    H(0, 0) += wk * s00;
    H.block(1, 0, d, 1) += wk * g.to_ambient(spec.cov, s0m);
    H.block(1, 1, d, d) += wk * g.to_ambient_second(spec.cov, smm, rn2);
  }
  H.row(0).tail(d) = H.col(0).tail(d).transpose();
  return 0.5 * (H + H.transpose());
}

inline double sym_min_eig(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()[0];
}

inline double sym_norm2(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Point uniformly distributed in the Euclidean ball of radius r around c.
inline Vec ball_point(const Vec& c, double r, std::uint64_t key, std::uint64_t index) {
  const int n = static_cast<int>(c.size());
  Vec z(n);
  for (int j = 0; j < n; ++j) z[j] = rng::normal(key, index, j);
  const double u = rng::uniform(key, (index << 8) + 255);
  return c + z.normalized() * (r * std::pow(u, 1.0 / n));
}

inline PLCertificate local_pl_certificate(const TargetSpec& spec, const EstimatorConfig& cfg,
                                          const PLOptions& opts = {}) {
  const int d = spec.dim();
  const MixtureDensity target = spec.density();
  Vec theta_star(1 + d);
  theta_star[0] = logit(spec.alpha);
  theta_star.tail(d) = spec.mu_new;
  auto grad = [&](const Vec& th) { return reverse_kl_theta_grad(th, spec.mu_old, target, cfg); };
  auto loss = [&](const Vec& th) { return reverse_kl_theta_loss(th, spec.mu_old, target, cfg); };
  auto fd_hess = [&](const Vec& th) {
    Mat J = fd_jacobian(grad, th, opts.fd_step);
    return Mat(0.5 * (J + J.transpose()));
  };

  PLCertificate c;
  c.hessian = fisher_hessian(spec, cfg);
  c.hessian_fd = fd_hess(theta_star);
  c.hessian_rel_diff = (c.hessian - c.hessian_fd).norm() / c.hessian.norm();
  if (c.hessian_rel_diff > 1e-2)
    throw consistency_error("Fisher and finite-difference Hessians disagree (relative " +
                            std::to_string(c.hessian_rel_diff) + ")");
  c.mu_star = sym_min_eig(c.hessian);
  if (!(c.mu_star > 0.0)) throw numeric_error("Hessian at the optimum is not positive definite");

  const auto key = rng::key(cfg.seed, 0x504c);
  double lh = 0.0;
  for (int i = 0; i < opts.lipschitz_pairs; ++i) {
    const Vec a = ball_point(theta_star, opts.r0, key, 2 * i);
    const Vec b = ball_point(theta_star, opts.r0, key, 2 * i + 1);
    const double dist = (a - b).norm();
    if (dist < 1e-8) continue;
    lh = std::max(lh, sym_norm2(fd_hess(a) - fd_hess(b)) / dist);
  }
  c.l_hessian = lh;
  c.rho = lh > 0.0 ? std::min(opts.r0, c.mu_star / (2.0 * lh)) : opts.r0;
  c.eps_loc = c.mu_star * c.rho * c.rho / 8.0;

  c.rate_ok = true;
  c.min_pl_ratio = kInf;
  c.min_growth_margin = kInf;
  c.probes_used = 0;
  const auto pkey = rng::key(cfg.seed, 0x50726f);
  for (int i = 0; i < opts.probes; ++i) {
    const Vec th = ball_point(theta_star, c.rho, pkey, i);
    const double l = loss(th);
    if (l < opts.loss_floor) continue;
    ++c.probes_used;
    const double g2 = grad(th).squaredNorm();
    const double ratio = g2 / (c.mu_star * l);
    const double margin = l - 0.25 * c.mu_star * (th - theta_star).squaredNorm();
    c.min_pl_ratio = std::min(c.min_pl_ratio, ratio);
    c.min_growth_margin = std::min(c.min_growth_margin, margin);
    if (ratio < 1.0 || margin < -1e-6) c.rate_ok = false;
  }
  return c;
}

}  // namespace forgetlab
