#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "forgetlab.hpp"

namespace forgetlab::checks {

struct Context {
  std::uint64_t seed = 20240601;
  EstimatorConfig est;
};

struct Outcome {
  bool pass = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct CheckSpec {
  std::string name;
  std::string paper_ref;
  std::string suite;  // core | near_on_policy | extensions
  int criterion;      // acceptance criterion this check feeds, 0 if none
  std::function<Outcome(const Context&)> run;
};

struct CheckRecord {
  std::string name;
  std::string paper_ref;
  std::string suite;
  int criterion;
  std::string status;  // pass | fail
  double measured;
  double tolerance;
  double runtime_ms;
  std::string detail;
};

/// Results every `check all` report must reference.
inline const std::vector<std::string>& required_refs() {
  static const std::vector<std::string> refs = {
      "Def 2.1",   "Lemma 2.2",  "Lemma 2.3",  "Remark 2.4", "Thm 2.5",   "Lemma 2.6",       "Thm 2.7",
      "Thm 2.8",   "Thm 2.9",    "Lemma 2.10", "Def 3.1",    "Thm 3.2",   "Remark 3.3",      "Lemma 3.4",
      "Thm 3.5",   "Prop TTT beta*", "Lemma 3.6", "Thm 3.7",    "Appendix A", "Appendix B Stein identity", "Appendix B truncated moment",
      "Lemma C.1", "Thm C.2",    "Remark C.3", "Lemma D.1",  "Lemma D.2", "Thm D.3",         "Lemma E.1",
      "Lemma E.2", "Thm E.3",    "Lemma E.5"};
  return refs;
}

/// `key` occurs in `ref` as a whole label ("Lemma 2.1" does not match "Lemma 2.10").
inline bool ref_mentions(const std::string& ref, const std::string& key) {
  for (std::size_t pos = ref.find(key); pos != std::string::npos; pos = ref.find(key, pos + 1)) {
    const std::size_t end = pos + key.size();
    const bool digit_after = end < ref.size() && std::isdigit(static_cast<unsigned char>(ref[end]));
    const bool dot_digit = end + 1 < ref.size() && ref[end] == '.' && std::isdigit(static_cast<unsigned char>(ref[end + 1]));
    if (!digit_after && !dot_digit) return true;
  }
  return false;
}

inline std::vector<std::string> missing_refs(const std::vector<CheckRecord>& records) {
  std::vector<std::string> out;
  for (const auto& key : required_refs()) {
    const bool hit = std::any_of(records.begin(), records.end(),
                                 [&](const CheckRecord& r) { return ref_mentions(r.paper_ref, key); });
    if (!hit) out.push_back(key);
  }
  return out;
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

inline Outcome at_most(double measured, double tol, std::string detail = {}) {
  return Outcome{measured <= tol, measured, tol, std::move(detail)};
}

inline double rel_diff(const Vec& a, const Vec& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

inline Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

inline CovarianceModel tilted_cov() {
  Mat s(2, 2);
  s << 1.3, 0.4, 0.4, 0.8;
  return CovarianceModel(s);
}

// ---- forward KL -----------------------------------------------------------

inline const std::vector<double>& sft_deltas() {
  static const std::vector<double> d = {1.0, 2.0, 4.0, 8.0};
  return d;
}
inline const std::vector<double>& sft_starts() {
  static const std::vector<double> b = {0.1, 0.5, 0.9};
  return b;
}

inline Outcome disjoint_decomposition_check(const Context&) {
  // p_o = U[0,1], p_n = U[2,3]; model components are Beta(2,2) shapes on the same intervals.
  const GaussRule gl = gauss_legendre(60, 0.0, 1.0);
  auto shape = [](double x) { return 6.0 * x * (1.0 - x); };
  double kl_pq = 0.0, kl_qp = 0.0;
  for (std::size_t i = 0; i < gl.x.size(); ++i) {
    kl_pq += gl.w[i] * -std::log(shape(gl.x[i]));
    kl_qp += gl.w[i] * shape(gl.x[i]) * std::log(shape(gl.x[i]));
  }
  double worst = 0.0;
  for (double a : {0.2, 0.5, 0.7})
    for (double b : {0.1, 0.4, 0.9}) {
      double fwd = 0.0, rev = 0.0;
      for (int side = 0; side < 2; ++side) {
        const double wa = side == 0 ? a : 1.0 - a, wb = side == 0 ? b : 1.0 - b;
        for (std::size_t i = 0; i < gl.x.size(); ++i) {
          const double p = wa, q = wb * shape(gl.x[i]);
          fwd += gl.w[i] * p * std::log(p / q);
          rev += gl.w[i] * q * std::log(q / p);
        }
      }
      DisjointMixtureSpec fs{a, b, kl_pq, kl_pq, 0.0, 0.0};
      DisjointMixtureSpec rs{a, b, kl_qp, kl_qp, 0.0, 0.0};
      worst = std::max({worst, std::abs(disjoint_decomposition(fs).forward - fwd),
                        std::abs(disjoint_decomposition(rs).reverse - rev)});
    }
  return at_most(worst, 1e-10, "max |closed form − direct integral| over 9 (α, β) pairs");
}

inline Outcome bc_closed_form_check(const Context& c) {
  const CovarianceModel cov = tilted_cov();
  double worst = 0.0;
  for (double delta : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    const Vec dir = cov.unwhiten(vec2(0.6, 0.8));
    const Vec m1 = vec2(0.2, -0.1), m2 = m1 + delta * dir;
    const MixtureDensity f = MixtureDensity::single(m1, cov);
    const Estimate e = expectation(
        f, [&](const Vec& y) { return Vec::Constant(1, std::exp(0.5 * (cov.log_normal(y, m2) - cov.log_normal(y, m1)))); },
        c.est, std::vector<Vec>{m2});
    worst = std::max(worst, std::abs(e.scalar() - std::exp(-delta * delta / 8.0)));
  }
  return at_most(worst, 1e-8, "max |quadrature BC − exp(−δ²/8)|");
}

inline Outcome leakage_bounds_check(const Context& c) {
  const CovarianceModel cov = tilted_cov();
  double worst = -kInf;
  for (double w : {0.1, 0.3, 0.5, 0.7, 0.9})
    for (double delta : {0.5, 1.0, 2.0, 4.0, 8.0}) {
      const Vec mf = vec2(0.0, 0.0), mg = delta * cov.unwhiten(vec2(1.0, 0.0));
      const LeakageReport r = leakage(cov, mf, mg, w, c.est);
      worst = std::max({worst, r.g_to_f - r.g_to_f_bound, r.f_to_g - r.f_to_g_bound});
    }
  return at_most(worst, 1e-12, "max (leakage − bound) over the 5×5 (w, δ) grid");
}

inline Outcome trunc_moment_check(const Context& c) {
  const CovarianceModel cov = tilted_cov();
  const Vec mo = vec2(0.0, 0.0), mn = vec2(1.5, 1.0);
  const BayesPartition bp = bayes_partition_stats(mo, mn, cov);
  const Estimate e = direct_estimate(
      MixtureDensity::single(mo, cov),
      [&](const Vec& y) { return bp.in_new(y) ? Vec(cov.solve(y - mo)) : Vec(Vec::Zero(2)); }, 400000, c.seed + 11);
  const Vec z = (e.value - bp.trunc_moment).cwiseQuotient(*e.std_err);
  return at_most(z.cwiseAbs().maxCoeff(), 4.0, "max |MC − closed form| in standard errors");
}

inline Outcome stein_identity_check(const Context& c) {
  const CovarianceModel cov = tilted_cov();
  const Vec mu = vec2(0.3, -0.2);
  const MixtureDensity q = MixtureDensity::two(0.4, vec2(0.0, 0.0), vec2(1.5, 0.5), cov);
  const MixtureDensity p = MixtureDensity::two(0.6, vec2(0.5, 0.0), vec2(1.0, 1.5), cov);
  auto score = [&](const MixtureDensity& m, const Vec& y) {
    const Vec r = responsibilities(m, y);
    Vec s = Vec::Zero(2);
    for (int k = 0; k < m.size(); ++k) s -= r[k] * cov.solve(y - m.means[k]);
    return s;
  };
  const MixtureDensity base = MixtureDensity::single(mu, cov);
  const Estimate lhs = direct_estimate(
      base, [&](const Vec& y) { return Vec(cov.solve(y - mu) * (log_density(q, y) - log_density(p, y))); }, 400000,
      c.seed + 21);
  const Estimate rhs = direct_estimate(base, [&](const Vec& y) { return Vec(score(q, y) - score(p, y)); }, 400000,
                                       c.seed + 22);
  const Vec se = (lhs.std_err->array().square() + rhs.std_err->array().square()).sqrt();
  const Vec z = (lhs.value - rhs.value).cwiseQuotient(se);
  return at_most(z.cwiseAbs().maxCoeff(), 4.0, "max |E[Σ⁻¹(Y−μ)g] − E[∇g]| in combined standard errors");
}

inline Outcome sft_monotone_check(const Context& c) {
  int violations = 0;
  for (double delta : sft_deltas()) {
    const TargetSpec spec = TargetSpec::separated(0.5, delta, 1);
    const SftKernel k(spec, c.est);
    double prev = 0.0;  // L(0) = 0
    for (int i = 1; i <= 100; ++i) {
      const double l = i == 100 ? delta * delta / 2.0 : k(i / 100.0).loss;
      if (!(l > prev)) ++violations;
      prev = l;
    }
  }
  return at_most(violations, 0.0, "non-increasing steps of L_SFT on the 101-point grid, δ ∈ {1,2,4,8}");
}

inline Outcome sft_fd_check(const Context& c) {
  double worst = 0.0;
  for (double delta : sft_deltas()) {
    const TargetSpec spec = TargetSpec::separated(0.5, delta, 1);
    const SftKernel k(spec, c.est);
    for (double beta : {0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95}) {
      const double phi = logit(beta);
      const Vec fd = fd_gradient([&](const Vec& t) { return k(sigmoid(t[0])).loss; }, Vec::Constant(1, phi), 1e-5);
      worst = std::max(worst, std::abs(k(beta).dphi - fd[0]));
    }
  }
  return at_most(worst, 1e-5, "max |dL/dφ − FD| over δ ∈ {1,2,4,8}, 7 β values");
}

/// Literal horizon clause: β(100) below 1e-3 from every start.
inline Outcome sft_t100_check(const Context& c) {
  double worst = 0.0;
  for (double delta : sft_deltas())
    for (double b0 : sft_starts()) {
      const TargetSpec spec = TargetSpec::separated(0.5, delta, 1);
      const Trajectory tr = integrate_flow(FlowObjective::sft_logit, LearnerParams::from_beta(b0, spec.mu_old, spec.mu_new),
                                           spec, 0.02, 100.0, c.est);
      worst = std::max(worst, tr.final_beta());
    }
  return at_most(worst, 1e-3,
                 "max β(100); the logit flow obeys φ̇ ≥ −β, so β(100) ≥ 1/(1 + e^{−φ(0)} + 100) ≥ 0.0090 for β(0)=0.1");
}

inline Outcome sft_collapse_check(const Context& c) {
  double worst = 0.0, worst_rise = 0.0;
  bool monotone = true;
  int stalled = 0;
  for (double delta : sft_deltas())
    for (double b0 : sft_starts()) {
      const TargetSpec spec = TargetSpec::separated(0.5, delta, 1);
      FlowOptions opts;
      opts.stop_below_beta = 1e-3;
      opts.stop_above_beta = 1.0 - 1e-3;
      Trajectory tr;
      try {
        tr = integrate_flow(FlowObjective::sft_logit, LearnerParams::from_beta(b0, spec.mu_old, spec.mu_new), spec, 0.5,
                            1e6, c.est, opts);
      } catch (const numeric_error&) {
        // the step direction does not descend the loss
        ++stalled;
        worst = std::max(worst, b0);
        continue;
      }
      worst = std::max(worst, tr.final_beta());
      worst_rise = std::max(worst_rise, tr.max_loss_increase);
      for (std::size_t i = 1; i < tr.size(); ++i) monotone = monotone && tr.states[i].beta() < tr.states[i - 1].beta();
    }
  Outcome o = at_most(worst, 1e-3, "max final β with no horizon cap (stop once β < 1e-3)");
  o.pass = o.pass && monotone && worst_rise <= 1e-9 && stalled == 0;
  o.detail += "; β strictly decreasing: " + std::string(monotone ? "yes" : "no") + "; max loss rise " + fmt(worst_rise);
  if (stalled) o.detail += "; " + std::to_string(stalled) + " flows could not descend";
  return o;
}

inline Outcome replay_forward_check(const Context& c) {
  const TargetSpec spec = TargetSpec::separated(0.5, 3.0, 1);
  double worst = 0.0;
  for (double lam : {0.1, 0.3})
    for (ReplayMode mode : {ReplayMode::denominator, ReplayMode::numerator}) {
      const ReplayGridResult g = replay_grid_argmin(lam, mode, spec, c.est);
      worst = std::max(worst, std::abs(g.beta_argmin - replay_population_minimizer(lam, mode).beta_star));
    }
  return at_most(worst, 0.01, "max |grid argmin − closed form|, λ ∈ {0.1, 0.3}, both replay modes");
}

// ---- reverse KL -----------------------------------------------------------

struct DriftInstance {
  TargetSpec spec;
  double beta;
  Vec m_new;
};

inline std::vector<DriftInstance> drift_instances(std::uint64_t seed) {
  const auto key = rng::key(seed, 0x6472);
  std::vector<DriftInstance> out;
  const CovarianceModel cov = tilted_cov();
  for (int i = 0; i < 20; ++i) {
    const std::uint64_t b = 10 * static_cast<std::uint64_t>(i);
    const double alpha = 0.2 + 0.6 * rng::uniform(key, b);
    const double beta = 0.2 + 0.6 * rng::uniform(key, b + 1);
    const double delta = 1.0 + 3.0 * rng::uniform(key, b + 2);
    const double ang = 2.0 * std::numbers::pi * rng::uniform(key, b + 3);
    const Vec mo = vec2(rng::normal(key, b + 4, 0), rng::normal(key, b + 4, 1));
    const Vec mn = mo + delta * cov.unwhiten(vec2(std::cos(ang), std::sin(ang)));
    const Vec m = mn + 0.4 * vec2(rng::normal(key, b + 5, 0), rng::normal(key, b + 5, 1));
    out.push_back({TargetSpec(alpha, mo, mn, cov), beta, m});
  }
  return out;
}

inline Outcome rkl_stationary_check(const Context& c) {
  double worst = 0.0;
  for (double delta : {0.5, 2.0, 5.0})
    for (int d : {1, 2}) {
      const TargetSpec spec = TargetSpec::separated(0.35, delta, d);
      const ReverseKlResult r = reverse_kl(spec.alpha, spec.mu_old, spec.mu_new, spec.density(), c.est);
      worst = std::max({worst, std::abs(r.loss), std::abs(r.dbeta), r.dm_old.norm(), r.dm_new.norm()});
    }
  return at_most(worst, 1e-8, "max |loss| and gradient norms at (α, μ_o, μ_n)");
}

inline Outcome rkl_drift_fd_check(const Context& c) {
  double worst = 0.0;
  for (const auto& inst : drift_instances(c.seed)) {
    const DriftReport r = oldmean_drift(LearnerParams::from_beta(inst.beta, inst.spec.mu_old, inst.m_new), inst.spec, c.est);
    const MixtureDensity p = inst.spec.density();
    const Vec fd = fd_gradient(
        [&](const Vec& mo) { return reverse_kl(inst.beta, mo, inst.m_new, p, c.est).loss; }, inst.spec.mu_old, 1e-4);
    worst = std::max(worst, rel_diff(r.grad, fd));
  }
  return at_most(worst, 1e-4, "max relative |decomposition − FD| over 20 random instances");
}

inline Outcome rkl_drift_bound_check(const Context& c) {
  double worst = -kInf;
  for (const auto& inst : drift_instances(c.seed + 1)) {
    const DriftReport r = oldmean_drift(LearnerParams::from_beta(inst.beta, inst.spec.mu_old, inst.m_new), inst.spec, c.est);
    worst = std::max({worst, r.grad.norm() - r.bound, r.bound - r.overlap_bound});
  }
  return at_most(worst, 1e-12, "max (‖drift‖ − bound, bound − overlap bound) over 20 random instances");
}

inline Outcome rkl_drift_separated_check(const Context& c) {
  const TargetSpec spec = TargetSpec::separated(0.4, 8.0, 2);
  double worst = 0.0;
  for (double beta : {0.1, 0.5, 0.9}) {
    const Vec m = spec.mu_new + vec2(0.3, -0.2);
    const DriftReport r = oldmean_drift(LearnerParams::from_beta(beta, spec.mu_old, m), spec, c.est);
    worst = std::max(worst, r.grad.norm() / (spec.mu_new - spec.mu_old).norm());
  }
  return at_most(worst, 1e-3, "max ‖drift‖/‖μ_n − μ_o‖ at δ = 8");
}

inline std::vector<TargetSpec> pl_targets() {
  std::vector<TargetSpec> t;
  t.push_back(TargetSpec::separated(0.5, 3.0, 1));
  t.push_back(TargetSpec(0.4, vec2(0.0, 0.0), vec2(2.0, 1.0), CovarianceModel::identity(2)));
  return t;
}

inline Outcome pl_certificate_check(const Context& c) {
  double worst_ratio = kInf, worst_margin = kInf;
  bool ok = true;
  std::string info;
  for (const auto& spec : pl_targets()) {
    const PLCertificate cert = local_pl_certificate(spec, c.est);
    ok = ok && cert.rate_ok && cert.mu_star > 0.0 && cert.probes_used > 0;
    worst_ratio = std::min(worst_ratio, cert.min_pl_ratio);
    worst_margin = std::min(worst_margin, cert.min_growth_margin);
    info += "d=" + std::to_string(spec.dim()) + ": μ⋆=" + fmt(cert.mu_star) + " ρ=" + fmt(cert.rho) +
            " Hessian routes rel diff " + fmt(cert.hessian_rel_diff) + "; ";
  }
  Outcome o{ok && worst_margin >= -1e-6, worst_ratio, 1.0, info + "measured = min ‖∇L‖²/(μ⋆L) over probes"};
  return o;
}

inline Outcome pl_envelope_check(const Context& c) {
  double worst = -kInf;
  std::string info;
  for (const auto& spec : pl_targets()) {
    const PLCertificate cert = local_pl_certificate(spec, c.est);
    const int d = spec.dim();
    Vec theta_star(1 + d);
    theta_star << logit(spec.alpha), spec.mu_new;
    const auto key = rng::key(c.seed, 0x656e76);
    double rise = 0.0;
    for (int i = 0; i < 10; ++i) {
      const Vec th = ball_point(theta_star, 0.5 * cert.rho, key, static_cast<std::uint64_t>(i));
      const LearnerParams init{th[0], spec.mu_old, th.tail(d)};
      FlowOptions opts;
      opts.stop_below_loss = 1e-11;
      const Trajectory tr = integrate_flow(FlowObjective::reverse_kl, init, spec, 0.05, 40.0, c.est, opts);
      rise = std::max(rise, tr.max_loss_increase);
      const double l0 = tr.losses.front();
      for (std::size_t k = 0; k < tr.size(); ++k) {
        const double t = tr.times[k];
        const double env = std::log(l0) - cert.mu_star * t + std::log(1.05);
        worst = std::max(worst, std::log(tr.losses[k]) - env);
        Vec thk(1 + d);
        thk << tr.states[k].logit, tr.states[k].m_new;
        const double penv = 1.05 * 2.0 / std::sqrt(cert.mu_star) * std::sqrt(l0) * std::exp(-cert.mu_star * t / 2.0);
        worst = std::max(worst, std::log((thk - theta_star).norm() / penv));
      }
    }
    info += "d=" + std::to_string(d) + " max loss rise " + fmt(rise) + "; ";
  }
  return at_most(worst, 0.0, info + "max log-excess over the loss and parameter envelopes (10 flows per target)");
}

// ---- replay -----------------------------------------------------------------

inline ReplayBehavior replay_setup(double lambda, double beta) {
  const CovarianceModel cov = tilted_cov();
  return ReplayBehavior(lambda, LearnerParams::from_beta(beta, vec2(0.0, 0.0), vec2(2.5, 1.0)), cov);
}

inline Outcome replay_weight_bound_check(const Context& c) {
  double worst = -kInf;
  for (double lam : {0.1, 0.5, 0.9}) {
    const ReplayBehavior rb = replay_setup(lam, 0.2);
    const SampleSet probes = sample(rb.behavior, 1000000 / 3 + 1, c.seed + static_cast<std::uint64_t>(lam * 100));
    for (Eigen::Index i = 0; i < probes.points.rows(); ++i)
      worst = std::max(worst, importance_weight(rb, probes.points.row(i).transpose()) - rb.weight_bound());
  }
  return at_most(worst, 0.0, "max (w − 1/(1−λ)) over 10^6 behavior draws, λ ∈ {0.1, 0.5, 0.9}");
}

inline Vec replay_test_functions(const Vec& y) {
  Vec h(10);
  h << 1.0, y[0], y[1], y[0] * y[0], y[0] * y[1], std::sin(y[0]), std::cos(y[1]), std::exp(-0.25 * y.squaredNorm()),
      1.0 / (1.0 + std::exp(-4.0 * (y[0] - 1.5))), std::tanh(y[0] + y[1]);
  return h;
}

inline Outcome replay_unbiased_check(const Context& c) {
  const ReplayBehavior rb = replay_setup(0.3, 0.25);
  const WeightedEstimate w = weighted_estimate(rb, replay_test_functions, 400000, c.seed + 31);
  const Vec mo = rb.learner.m_old;
  const Estimate exact =
      expectation(rb.model, replay_test_functions, c.est, std::vector<Vec>{rb.learner.m_new, Vec(mo + vec2(1.0, 0.0)), Vec(mo + vec2(0.0, 1.0))});
  const Vec z = (w.estimate - exact.value).cwiseQuotient(w.std_err);
  return at_most(z.cwiseAbs().maxCoeff(), 4.0, "max |weighted − exact| in standard errors over 10 test functions");
}

inline Outcome replay_p_none_check(const Context& c) {
  double worst = 0.0;
  for (double lam : {0.05, 0.2})
    for (double beta : {0.0, 0.01})
      for (int N : {8, 16, 32}) {
        const OldSampleStatistics s = old_sample_statistics(lam, beta, N, 100000, c.seed + N);
        if (s.p_none_se == 0.0) continue;
        worst = std::max(worst, std::abs(s.p_none_emp - s.p_none_exact) / s.p_none_se);
      }
  return at_most(worst, 3.0, "max |empirical − exact| P(no old draw) in binomial standard errors");
}

inline Outcome replay_chernoff_check(const Context& c) {
  const OldSampleStatistics s = old_sample_statistics(0.2, 0.0, 50, 100000, c.seed + 41);
  return Outcome{s.tail_emp <= s.chernoff, s.tail_emp, s.chernoff,
                 "empirical P(old count ≤ λN/2) vs exp(−λN/8) at λ=0.2, N=50, 10^5 trials"};
}

// ---- near on-policy ---------------------------------------------------------

inline SdftConfig sdft_config(double delta, double lam) {
  const CovarianceModel cov = CovarianceModel::identity(2);
  return SdftConfig{0.5, vec2(delta, 0.0), 0.2, 0.5, lam, vec2(0.0, 0.0), cov};
}

struct SdftBundle {
  SdftConfig cfg;
  SdftRun run;
  SdftCurvature curv;
};

inline SdftBundle sdft_reference_run(const Context& c) {
  const SdftConfig cfg = sdft_config(3.0, 0.5);
  const SdftState init{0.3, cfg.nu_c + vec2(0.3, 0.3), 0.35, cfg.nu_c + vec2(0.5, 0.5)};
  SdftRun run = sdft_run(init, cfg, 300, c.est);
  const SdftCurvature curv = sdft_probe_curvature({run.states[0], run.states[5], run.states[20], run.states[100]}, cfg, c.est);
  return {cfg, std::move(run), curv};
}

inline Outcome sdft_fixed_point_check(const Context& c) {
  const SdftConfig cfg = sdft_config(3.0, 0.0);
  double worst = 0.0;
  for (double a : {0.2, 0.5}) {
    const SdftState s{a, cfg.nu_c + vec2(0.2, -0.1), a, cfg.nu_c + vec2(0.2, -0.1)};
    const SdftStepResult r = sdft_step(s, cfg, c.est);
    worst = std::max({worst, (r.state.student_vec() - s.student_vec()).norm(),
                      (r.state.teacher_vec() - s.teacher_vec()).norm()});
  }
  return at_most(worst, 1e-12, "max state change after one step with λ_demo = 0 and student = teacher");
}

inline Outcome sdft_contraction_check(const Context& c) {
  const SdftBundle b = sdft_reference_run(c);
  const double allowed = 1.0 - b.cfg.step_gamma * b.curv.mu_est / 2.0 + 0.02;
  double worst = 0.0;
  for (double r : b.run.contraction_ratios) worst = std::max(worst, r);
  return at_most(worst, allowed,
                 "max ‖m̃_{t+1} − ν̃_t‖/‖m̃_t − ν̃_t‖; tolerance 1 − γμ_est/2 + 0.02 with probed μ_est = " + fmt(b.curv.mu_est));
}

inline Outcome sdft_summable_check(const Context& c) {
  const SdftBundle b = sdft_reference_run(c);
  double worst = 0.0;
  for (std::size_t t = 0; t < b.run.old_grad_norms.size(); ++t)
    worst = std::max(worst, b.run.old_grad_norms[t] - b.run.fit_c * std::pow(b.run.fit_kappa, static_cast<double>(t)));
  const bool ok = std::isfinite(b.run.old_grad_sum) && b.run.fit_kappa < 1.0 && worst <= 1e-12;
  return Outcome{ok, b.run.old_grad_sum, kInf,
                 "Σ‖∇_{m_o}‖ over 300 steps; geometric envelope C κ^t with κ = " + fmt(b.run.fit_kappa) +
                     ", C = " + fmt(b.run.fit_c) + ", max excess " + fmt(worst)};
}

inline Outcome sdft_limit_check(const Context& c) {
  const SdftBundle b = sdft_reference_run(c);
  return at_most(b.run.limit_error, 1e-3, "‖(β_T, m_T) − (α_c, ν_c)‖ after 300 steps");
}

inline Outcome sdft_separation_check(const Context& c) {
  std::vector<double> peaks;
  std::string info;
  double c_sep = 0.0;
  for (double delta : {3.0, 4.5, 6.0}) {
    const SdftConfig cfg = sdft_config(delta, 0.5);
    const SdftState init{0.3, cfg.nu_c + vec2(0.3, 0.3), 0.35, cfg.nu_c + vec2(0.5, 0.5)};
    const SdftRun run = sdft_run(init, cfg, 60, c.est);
    double peak = 0.0, tube = 0.0;
    for (std::size_t t = 0; t < run.old_grad_norms.size(); ++t) peak = std::max(peak, run.old_grad_norms[t]);
    for (const auto& s : run.states) tube = std::max(tube, (s.m_t - cfg.nu_c).norm() + (s.nu_t - cfg.nu_c).norm());
    const double delta_eff = std::max(0.0, delta - tube);
    c_sep = std::max(c_sep, peak / (std::exp(-delta_eff * delta_eff / 8.0) * std::max(tube, 1e-12) + 1e-300));
    peaks.push_back(peak);
    info += "δ=" + fmt(delta) + " peak " + fmt(peak) + "; ";
  }
  const bool decays = peaks[1] < peaks[0] && peaks[2] < peaks[1];
  return Outcome{decays, peaks[2], peaks[1], info + "fitted C_sep " + fmt(c_sep) + "; peaks must fall with separation"};
}

inline Geometry ttt_geometry(double delta) {
  return Geometry{vec2(0.0, 0.0), vec2(delta, 0.5), CovarianceModel::identity(2)};
}

inline Outcome ttt_disjoint_check(const Context& c) {
  double worst = 0.0;
  const Geometry g = ttt_geometry(3.0);
  for (double lam : {0.0, 0.5}) {
    TttConfig sym{1.0, lam, 0.4, StepReward{0.7, 0.7, PartitionKind::disjoint}, g};
    if (lam > 0.0) worst = std::max(worst, std::abs(ttt_analysis(sym, c.est).beta_star - 0.4));
  }
  TttConfig up{1.0, 0.0, 0.4, StepReward{0.0, 1.0, PartitionKind::disjoint}, g};
  worst = std::max(worst, ttt_analysis(up, c.est).beta_star);
  TttConfig down{1.0, 0.0, 0.4, StepReward{1.0, 0.0, PartitionKind::disjoint}, g};
  worst = std::max(worst, 1.0 - ttt_analysis(down, c.est).beta_star);
  return at_most(worst, 0.0, "max |β⋆ − expected| for symmetric (β₀), new-favoured (0), old-favoured (1) rewards");
}

inline Outcome ttt_J_check(const Context& c) {
  double worst = 0.0;
  const TttConfig cfg{1.0, 0.0, 0.5, StepReward{0.0, 1.0, PartitionKind::bayes_halfspace}, ttt_geometry(2.0)};
  const TttAnalysis a = ttt_analysis(cfg, c.est);
  for (double beta : {0.1, 0.3, 0.5, 0.8}) {
    const Estimate mc = ttt_J_monte_carlo(cfg, beta, 200000, c.seed + static_cast<std::uint64_t>(beta * 100));
    worst = std::max(worst, std::abs(a.J(beta) - mc.scalar()) / mc.se());
  }
  return at_most(worst, 4.0, "max |closed-form J − MC| in jackknife standard errors");
}

inline Outcome ttt_case_check(const Context& c) {
  int mismatches = 0;
  double worst = 0.0;
  std::string info;
  for (const StepReward& rw : {StepReward{0.0, 1.0, PartitionKind::bayes_halfspace}, StepReward{1.0, 0.0, PartitionKind::bayes_halfspace},
                               StepReward{0.5, 0.5, PartitionKind::bayes_halfspace}}) {
    TttConfig cfg{1.0, 0.0, 0.5, rw, ttt_geometry(2.5)};
    const TttAnalysis base = ttt_analysis(cfg, c.est);
    std::vector<double> lams = {0.05, 0.5, 1.0, 3.0};
    if (rw.u_old != rw.u_new) lams.push_back(0.0);  // equal rewards and λ_ref = 0 make the objective constant
    for (double crit : {base.lambda_crit_new, base.lambda_crit_old})
      if (crit > 0.0) lams.insert(lams.end(), {crit, crit * 1.02, crit * 0.98});
    for (double lam : lams) {
      cfg.lambda_ref = lam;
      const TttAnalysis a = ttt_analysis(cfg, c.est);
      int best = 0;
      double bv = -kInf;
      for (int k = 0; k <= 2000; ++k) {
        const double v = a.objective(k / 2000.0);
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      const double argmax = best / 2000.0;
      const double err = std::abs(argmax - a.beta_star);
      worst = std::max(worst, err);
      const bool boundary = a.case_label == "collapse_new" || a.case_label == "collapse_old";
      if ((boundary && err != 0.0) || err > 2e-3) ++mismatches;
    }
    info += "thresholds (" + fmt(base.lambda_crit_new) + ", " + fmt(base.lambda_crit_old) + "); ";
  }
  Outcome o = at_most(worst, 2e-3, info + "max |grid argmax − β⋆| over scanned λ_ref");
  o.pass = o.pass && mismatches == 0;
  return o;
}

inline Outcome ttt_gradient_check(const Context& c) {
  double worst_fd = 0.0, worst_bound = -kInf;
  for (double delta : {2.0, 4.0})
    for (double beta : {0.3, 0.5}) {
      const TttConfig cfg{1.0, 0.0, 0.5, StepReward{0.0, 1.0, PartitionKind::bayes_halfspace}, ttt_geometry(delta)};
      const Vec mn = cfg.geometry.mu_n + vec2(0.2, -0.3);
      const TttOldMeanGradient g = ttt_oldmean_gradient(beta, mn, cfg, c.est);
      const Vec fd = fd_gradient([&](const Vec& mo) { return std::log(ttt_mgf(cfg, beta, mo, mn)); }, cfg.geometry.mu_o);
      worst_fd = std::max(worst_fd, rel_diff(g.grad, fd));
      worst_bound = std::max(worst_bound, g.grad.norm() - g.bound);
    }
  Outcome o = at_most(worst_fd, 1e-4, "max relative |closed form − FD|; max (‖grad‖ − bound) = " + fmt(worst_bound));
  o.pass = o.pass && worst_bound <= 1e-10;
  return o;
}

inline OaplConfig oapl_config(double delta, double beta0) {
  return OaplConfig{1.0, beta0, StepReward{0.0, 1.0, PartitionKind::bayes_halfspace}, ttt_geometry(delta)};
}

inline Outcome oapl_disjoint_check(const Context& c) {
  OaplConfig cfg = oapl_config(3.0, 0.5);
  cfg.reward = StepReward{0.0, std::log(2.0), PartitionKind::disjoint};
  const OaplTarget t = oapl_target(cfg, c.est);
  const Estimate sn = snis_estimate(
      cfg.reference(), [&](const Vec&, int l) { return (l == 0 ? cfg.reward.u_old : cfg.reward.u_new) / cfg.tau; },
      [](const Vec&, int l) { return l == 0 ? 1.0 : 0.0; }, 400000, c.seed + 51);
  Outcome o = at_most(std::abs(t.beta_star_disjoint - sn.scalar()) / sn.se(), 4.0,
                      "|closed-form β⋆ − SNIS| in standard errors; β⋆ = " + fmt(t.beta_star_disjoint));
  o.pass = o.pass && std::abs(t.beta_star_disjoint - 1.0 / 3.0) < 1e-15;
  return o;
}

inline Outcome oapl_resp_check(const Context& c) {
  const OaplConfig cfg = oapl_config(3.0, 0.4);
  const OaplTarget t = oapl_target(cfg, c.est);
  const MixtureDensity q0 = cfg.reference();
  const BayesPartition bp = cfg.geometry.partition();
  const Estimate sn = snis_estimate(
      q0, [&](const Vec& y, int) { return step_reward_at(cfg.reward, bp, y) / cfg.tau; },
      [&](const Vec& y, int) { return responsibilities(q0, y)[0]; }, 400000, c.seed + 52);
  return at_most(std::abs(t.expected_old_resp - sn.scalar()) / sn.se(), 4.0,
                 "|closed-form E_{q*}[r_o] − SNIS| in standard errors");
}

inline Outcome oapl_grad_check(const Context& c) {
  double worst = 0.0;
  const auto key = rng::key(c.seed, 0x6f61);
  for (int i = 0; i < 4; ++i) {
    const OaplConfig cfg = oapl_config(2.0 + i, 0.4);
    const double beta = 0.2 + 0.6 * rng::uniform(key, 3 * i);
    const Vec mn = cfg.geometry.mu_n + 0.5 * vec2(rng::normal(key, 3 * i + 1, 0), rng::normal(key, 3 * i + 1, 1));
    const OaplGradient g = oapl_regression_grad(beta, mn, cfg, c.est);
    const Vec fd = fd_gradient([&](const Vec& m) { return oapl_regression_grad(beta, m, cfg, c.est).j_value; }, mn);
    worst = std::max(worst, rel_diff(g.grad_m, fd));
  }
  return at_most(worst, 1e-4, "max relative |analytic ∇_{m_n}J − FD| over 4 random points");
}

inline Outcome oapl_oldmode_check(const Context& c) {
  double worst = -kInf;
  std::string info;
  for (double delta : {3.0, 6.0}) {
    const OaplConfig cfg = oapl_config(delta, 0.5);
    const OaplGradient g = oapl_regression_grad(0.5, cfg.geometry.mu_n, cfg, c.est);
    worst = std::max(worst, g.oldmode_term_norm - g.oldmode_bound);
    info += "δ=" + fmt(delta) + ": term " + fmt(g.oldmode_term_norm) + " bound " + fmt(g.oldmode_bound) + "; ";
  }
  return at_most(worst, 1e-12, info + "max (term − bound)");
}

inline Outcome tilt_check(const Context& c) {
  const CovarianceModel cov = tilted_cov();
  const Vec mo = vec2(0.0, 0.0), mn = vec2(2.0, 1.0);
  const MixtureDensity p = MixtureDensity::two(0.3, mo, mn, cov);
  const MixtureDensity ref = MixtureDensity::two(0.6, mo, mn, cov);
  const double tau = 0.7;
  const ExponentialTilt tilt = make_exponential_tilt(
      ref, [&](const Vec& y) { return tau * (log_density(p, y) - log_density(ref, y)); }, tau, {mo, mn}, c.est);
  const SampleSet probes = sample(MixtureDensity::two(0.5, mo, mn, cov), 1000, c.seed + 61);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < probes.points.rows(); ++i) {
    const Vec y = probes.points.row(i).transpose();
    const double a = std::exp(tilt.log_density(y)), b = std::exp(log_density(p, y));
    worst = std::max(worst, std::abs(a - b));
  }
  return at_most(worst, 1e-10, "max |tilted density − p_α| over 10^3 probes");
}

// ---- extensions -------------------------------------------------------------

inline Outcome fdiv_adjoint_check(const Context& c) {
  const CovarianceModel cov = tilted_cov();
  const auto key = rng::key(c.seed, 0x6164);
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    auto rv = [&](int j) { return vec2(rng::normal(key, 10 * i + j, 0), rng::normal(key, 10 * i + j, 1)); };
    const MixtureDensity P = MixtureDensity::two(0.2 + 0.6 * rng::uniform(key, 10 * i), rv(1), rv(2), cov);
    const MixtureDensity Q = MixtureDensity::two(0.2 + 0.6 * rng::uniform(key, 10 * i + 5), rv(3), rv(4), cov);
    for (const auto& g : all_generators()) {
      // D_f(P‖Q) = E_Q[f(P/Q)], D_{f◇}(Q‖P) = E_P[f◇(Q/P)].
      const double lhs = divergence(P, Q, g, c.est);
      const double rhs = divergence(Q, P, g.adjoint(), c.est);
      worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    }
  }
  return at_most(worst, 1e-8, "max |D_f(P‖Q) − D_{f◇}(Q‖P)| over 5 random pairs × 7 generators");
}

inline Outcome fdiv_kappa_check(const Context&) {
  double worst = -kInf;
  for (const char* name : {"js", "triangular", "kl"}) {
    const FGenerator g = FGenerator::from_name(name);
    for (int i = -600; i <= 600; ++i) {
      const double t = std::pow(10.0, i / 100.0);
      worst = std::max(worst, g.kappa(t) - g.kappa_sup());
    }
  }
  const FGenerator kl = FGenerator::from_name("kl");
  double kl_dev = 0.0;
  for (double t : {1e-3, 0.5, 1.0, 7.0, 1e4}) kl_dev = std::max(kl_dev, std::abs(kl.kappa(t) - 1.0));
  Outcome o = at_most(worst, 1e-12, "max (κ(t) − κ_sup) for js (1), triangular (32/27), kl (1) on t ∈ [1e-6, 1e6]");
  o.pass = o.pass && kl_dev < 1e-15 && std::abs(FGenerator::from_name("triangular").kappa_sup() - 32.0 / 27.0) < 1e-15;
  return o;
}

inline Outcome fdiv_sft_check(const Context& c) {
  int violations = 0;
  double kl_diff = 0.0;
  for (double delta : {1.0, 2.0, 4.0}) {
    const TargetSpec spec = TargetSpec::separated(0.5, delta, 1);
    for (const auto& g : all_generators()) {
      const FdivScan s = fdiv_sft_scan(g, spec, c.est);
      violations += !s.monotone;
      violations += std::abs(s.losses.front()) > 1e-9;
    }
    const FdivScan kl = fdiv_sft_scan(FGenerator::from_name("kl"), spec, c.est);
    const SftKernel k(spec, c.est);
    for (int i = 1; i < 100; ++i) kl_diff = std::max(kl_diff, std::abs(kl.losses[i] - k(i / 100.0).loss));
  }
  Outcome o = at_most(violations, 0.0, "non-monotone or nonzero-at-0 scans over 7 generators × 3 separations; kl vs SFT max diff " + fmt(kl_diff));
  o.pass = o.pass && kl_diff <= 1e-8;
  return o;
}

inline Outcome fdiv_grad_check(const Context& c) {
  double worst = 0.0, worst_bound = -kInf, kl_red = 0.0;
  const CovarianceModel cov = tilted_cov();
  const TargetSpec spec(0.4, vec2(0.0, 0.0), vec2(2.0, 1.0), cov);
  const Vec mn = spec.mu_new + vec2(0.3, -0.2);
  for (const auto& g : all_generators()) {
    const FdivOldMeanGradient r = fdiv_oldmean_grad(g, 0.45, mn, spec, c.est);
    const MixtureDensity p = spec.density();
    const Vec fd = fd_gradient(
        [&](const Vec& mo) { return divergence(MixtureDensity::two(0.45, mo, mn, cov), p, g, c.est); }, spec.mu_old);
    worst = std::max(worst, rel_diff(r.grad, fd));
    if (std::isfinite(r.bound)) worst_bound = std::max(worst_bound, r.grad.norm() - r.bound);
    if (g.name() == "kl")
      kl_red = rel_diff(r.grad, oldmean_drift(LearnerParams::from_beta(0.45, spec.mu_old, mn), spec, c.est).grad);
  }
  Outcome o = at_most(worst, 1e-4, "max relative |decomposition − FD| over 7 generators; max (‖grad‖ − bound) " +
                                       fmt(worst_bound) + "; kl vs drift " + fmt(kl_red));
  o.pass = o.pass && worst_bound <= 1e-12 && kl_red <= 1e-12;
  return o;
}

inline Outcome translates_check(const Context&) {
  // Gram matrix ∫N_i N_j of distinct translates is positive definite.
  const CovarianceModel cov = tilted_cov();
  std::vector<Vec> means = {vec2(0, 0), vec2(0.1, 0), vec2(1, 1), vec2(-0.5, 2), vec2(0.05, 0.02)};
  const int K = static_cast<int>(means.size());
  Mat G(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) G(i, j) = std::exp(-cov.mahalanobis_sq(means[i] - means[j]) / 4.0);
  const double lmin = sym_min_eig(G);
  return Outcome{lmin > 0.0, lmin, 0.0, "smallest Gram eigenvalue of 5 close translates (must be > 0)"};
}

inline Outcome kmode_closed_form_check(const Context& c) {
  const auto key = rng::key(c.seed, 0x6b6d);
  double worst = 0.0;
  for (int inst = 0; inst < 10; ++inst) {
    const std::uint64_t b = 100 * static_cast<std::uint64_t>(inst);
    const int K = 2 + inst % 3;
    const int d = K - 1;
    std::vector<Vec> means;
    Vec w(K);
    for (int k = 0; k < K; ++k) {
      Vec m(d);
      for (int j = 0; j < d; ++j) m[j] = 2.5 * rng::normal(key, b + k, j);
      means.push_back(m);
      w[k] = 0.2 + rng::uniform(key, b + 20 + k);
    }
    w /= w.sum();
    std::vector<int> T;
    for (int k = 0; k < K; ++k)
      if (rng::uniform(key, b + 40 + k) < 0.6) T.push_back(k);
    if (T.empty()) T.push_back(inst % K);
    const MixtureDensity target(w, means, CovarianceModel::identity(d));
    const KmodeResult r = kmode_analysis(target, T, 0, target, c.est);
    worst = std::max(worst, r.max_closed_diff);
  }
  return at_most(worst, 1e-6, "max coordinate |projected-gradient β⋆ − closed form| over 10 random (K, T, α)");
}

inline Outcome kmode_bounds_check(const Context& c) {
  const CovarianceModel cov = CovarianceModel::identity(2);
  Vec a(3);
  a << 0.2, 0.3, 0.5;
  std::vector<Vec> mus = {vec2(0, 0), vec2(6.5, 0), vec2(3.2, 6)};
  const MixtureDensity target(a, mus, cov);
  Vec b(3);
  b << 0.35, 0.4, 0.25;
  std::vector<Vec> ms = mus;
  ms[1] += vec2(0.3, 0.4);
  ms[2] += vec2(-0.2, 0.3);
  const MixtureDensity model(b, ms, cov);
  double worst = -kInf;
  bool ok = true;
  for (int k = 0; k < 3; ++k) {
    std::vector<Vec> mk = ms;
    mk[k] = mus[k];
    const KmodeResult r = kmode_analysis(target, {0, 1, 2}, k, MixtureDensity(b, mk, cov), c.est);
    ok = ok && r.bounds_ok;
    worst = std::max(worst, (r.pairwise_eps - r.pairwise_bounds).maxCoeff());
  }
  (void)model;
  Outcome o = at_most(worst, 1e-12, "max (ε_{k→j} − ½√(w_j/w_k) BC) over both mixtures and all k ≠ j");
  o.pass = o.pass && ok;
  return o;
}

inline Outcome kmode_grad_check(const Context& c) {
  const CovarianceModel cov = CovarianceModel::identity(2);
  Vec a(3);
  a << 0.2, 0.3, 0.5;
  std::vector<Vec> mus = {vec2(0, 0), vec2(6.5, 0), vec2(3.2, 6)};
  const MixtureDensity target(a, mus, cov);
  Vec b(3);
  b << 0.35, 0.4, 0.25;
  std::vector<Vec> ms = mus;
  ms[1] += vec2(0.3, 0.4);
  ms[2] += vec2(-0.2, 0.3);
  const KmodeResult r = kmode_analysis(target, {0, 1, 2}, 0, MixtureDensity(b, ms, cov), c.est);
  const Vec fd = fd_gradient(
      [&](const Vec& m0) {
        std::vector<Vec> mm = ms;
        mm[0] = m0;
        return kl_divergence(MixtureDensity(b, mm, cov), target, c.est);
      },
      mus[0]);
  Outcome o = at_most(rel_diff(r.old_grad_k, fd), 1e-4,
                      "relative |pairwise decomposition − FD|; ‖grad‖ = " + fmt(r.old_grad_k.norm()) + " bound " + fmt(r.grad_bound));
  o.pass = o.pass && r.old_grad_k.norm() <= r.grad_bound;
  return o;
}

inline Outcome logconcave_ibp_check(const Context& c) {
  double worst = 0.0;
  for (double a : {0.0, 0.5, 1.0}) {
    const LogConcaveReport r = logconcave_checks(LocationFamily1D::log_cosh(a), 0.3, 2.5, 0.4, 0.5, 2.8, c.est);
    worst = std::max(worst, r.ibp_residual);
  }
  return at_most(worst, 1e-7, "max |d/dμ E_μ[g] − E_μ[g′]| for the log-cosh family, a ∈ {0, 0.5, 1}");
}

inline Outcome logconcave_bc_check(const Context& c) {
  double worst = -kInf, gauss = 0.0;
  for (double a : {0.0, 0.5, 1.0})
    for (double gap : {0.0, 1.0, 3.0, 6.0}) {
      const LogConcaveReport r = logconcave_checks(LocationFamily1D::log_cosh(a), 0.0, gap, 0.4, 0.5, gap + 0.3, c.est);
      worst = std::max(worst, r.bc - r.bc_bound);
      if (a == 0.0) gauss = std::max(gauss, std::abs(r.bc - r.bc_bound));
    }
  Outcome o = at_most(worst, 1e-8, "max (BC − exp(−mΔ²/8)); Gaussian tightness " + fmt(gauss));
  o.pass = o.pass && gauss <= 1e-10;
  return o;
}

inline Outcome logconcave_fisher_check(const Context& c) {
  double worst = 0.0, mass = 0.0;
  for (double a : {0.0, 0.5, 1.0}) {
    const LocationFamily1D fam = LocationFamily1D::log_cosh(a);
    const LogConcaveReport r = logconcave_checks(fam, 0.7, 2.0, 0.4, 0.5, 2.2, c.est);
    worst = std::max(worst, r.fisher_residual);
    mass = std::max(mass, std::abs(r.mass - 1.0));
    for (int i = -400; i <= 400; ++i) {
      const double v2 = fam.v2(i / 20.0);
      if (v2 < fam.m_strong - 1e-9 || v2 > fam.l_smooth + 1e-9) worst = kInf;
    }
  }
  Outcome o = at_most(worst, 1e-6, "max |E[V′²] − E[V″]|; max |∫ρ − 1| " + fmt(mass));
  o.pass = o.pass && mass <= 1e-8;
  return o;
}

inline Outcome logconcave_sft_check(const Context& c) {
  int bad = 0;
  for (double gap : {1.0, 2.5, 5.0}) bad += !logconcave_checks(LocationFamily1D::log_cosh(0.5), 0.0, gap, 0.4, 0.5, gap, c.est).sft_monotone;
  return at_most(bad, 0.0, "separations with non-monotone L_SFT (log-cosh a = 0.5, gaps 1, 2.5, 5)");
}

inline Outcome logconcave_drift_check(const Context& c) {
  double worst = -kInf;
  for (double a : {0.0, 0.5, 1.0})
    for (double gap : {1.5, 3.0, 5.0})
      for (double beta : {0.2, 0.6}) {
        const LocationFamily1D fam = LocationFamily1D::log_cosh(a);
        const double mn = gap + 0.4, alpha = 0.35;
        const LogConcaveReport r = logconcave_checks(fam, 0.0, gap, alpha, beta, mn, c.est);
        worst = std::max(worst, std::abs(r.drift_grad) - r.drift_bound - 1e-6);
        const double eq = 0.5 * std::sqrt((1 - beta) / beta) * std::exp(-fam.m_strong * mn * mn / 8.0);
        const double ep = 0.5 * std::sqrt((1 - alpha) / alpha) * std::exp(-fam.m_strong * gap * gap / 8.0);
        worst = std::max({worst, r.eps_q - eq, r.eps_p - ep});
      }
  return at_most(worst, 0.0, "max (|∂KL/∂m_o| − βL(ε_q|m_n−μ_o| + ε_p|μ_n−μ_o|) − 1e-6, ε − overlap bound)");
}

}  // namespace detail

inline const std::vector<CheckSpec>& registry() {
  using namespace detail;
  static const std::vector<CheckSpec> r = {
      {"disjoint_support_decomposition", "Def 2.1; Lemma 2.2", "core", 0, disjoint_decomposition_check},
      {"bc_gaussian_closed_form", "Remark 2.4", "core", 2, bc_closed_form_check},
      {"leakage_bounds", "Lemma 2.3", "core", 2, leakage_bounds_check},
      {"truncated_moment", "Appendix B truncated moment", "core", 0, trunc_moment_check},
      {"stein_identity", "Appendix B Stein identity", "core", 0, stein_identity_check},
      {"sft_loss_monotone", "Thm 2.5(1)", "core", 1, sft_monotone_check},
      {"sft_logit_grad_fd", "Thm 2.5(2)", "core", 1, sft_fd_check},
      {"sft_collapse_universality", "Thm 2.5(3)", "core", 1, sft_collapse_check},
      {"replay_forward_kl_minimizers", "Lemma 2.6", "core", 5, replay_forward_check},
      {"rkl_stationary_at_target", "Thm 2.7", "core", 3, rkl_stationary_check},
      {"rkl_drift_decomposition_fd", "Thm 2.8", "core", 3, rkl_drift_fd_check},
      {"rkl_drift_bound", "Thm 2.8", "core", 3, rkl_drift_bound_check},
      {"rkl_drift_separated", "Thm 2.8", "core", 3, rkl_drift_separated_check},
      {"pl_certificate", "Thm 2.9(1)", "core", 4, pl_certificate_check},
      {"pl_flow_envelope", "Thm 2.9(2)", "core", 4, pl_envelope_check},
      {"replay_weight_bound", "Lemma 2.10", "core", 6, replay_weight_bound_check},
      {"replay_unbiased", "Lemma 2.10", "core", 6, replay_unbiased_check},
      {"replay_p_none", "Lemma 2.10", "core", 6, replay_p_none_check},
      {"replay_chernoff", "Lemma 2.10", "core", 6, replay_chernoff_check},
      {"sdft_fixed_point", "Def 3.1", "near_on_policy", 7, sdft_fixed_point_check},
      {"sdft_contraction", "Thm 3.2(A)", "near_on_policy", 7, sdft_contraction_check},
      {"sdft_old_grad_summable", "Thm 3.2(C)", "near_on_policy", 7, sdft_summable_check},
      {"sdft_limit", "Thm 3.2(B)", "near_on_policy", 7, sdft_limit_check},
      {"sdft_separation_decay", "Remark 3.3", "near_on_policy", 0, sdft_separation_check},
      {"ttt_disjoint", "Lemma 3.4", "near_on_policy", 8, ttt_disjoint_check},
      {"ttt_J_closed_form", "Thm 3.5", "near_on_policy", 8, ttt_J_check},
      {"ttt_case_labels", "Thm 3.5(A); Prop TTT beta*", "near_on_policy", 8, ttt_case_check},
      {"ttt_oldmean_gradient", "Thm 3.5(B)", "near_on_policy", 8, ttt_gradient_check},
      {"oapl_disjoint_weight", "Lemma 3.6", "near_on_policy", 9, oapl_disjoint_check},
      {"oapl_expected_old_resp", "Thm 3.7(A)", "near_on_policy", 9, oapl_resp_check},
      {"oapl_regression_grad_fd", "Thm 3.7(B)", "near_on_policy", 9, oapl_grad_check},
      {"oapl_oldmode_bound", "Thm 3.7(B)", "near_on_policy", 9, oapl_oldmode_check},
      {"tilt_recovers_target", "Appendix A", "near_on_policy", 9, tilt_check},
      {"fdiv_adjoint_identity", "Lemma C.1", "extensions", 10, fdiv_adjoint_check},
      {"fdiv_kappa_suprema", "Remark C.3", "extensions", 10, fdiv_kappa_check},
      {"fdiv_sft_monotone", "Thm C.2(A)", "extensions", 10, fdiv_sft_check},
      {"fdiv_oldmean_grad", "Thm C.2(B)", "extensions", 10, fdiv_grad_check},
      {"gaussian_translates_independent", "Lemma D.1", "extensions", 0, translates_check},
      {"kmode_pairwise_bounds", "Lemma D.2", "extensions", 10, kmode_bounds_check},
      {"kmode_closed_form", "Thm D.3(A)", "extensions", 10, kmode_closed_form_check},
      {"kmode_grad_decomposition", "Thm D.3(B)", "extensions", 10, kmode_grad_check},
      {"logconcave_ibp", "Lemma E.1", "extensions", 0, logconcave_ibp_check},
      {"logconcave_bc", "Lemma E.2", "extensions", 10, logconcave_bc_check},
      {"logconcave_fisher", "Lemma E.5", "extensions", 10, logconcave_fisher_check},
      {"logconcave_sft_monotone", "Thm E.3(A)", "extensions", 10, logconcave_sft_check},
      {"logconcave_drift", "Thm E.3(B)", "extensions", 10, logconcave_drift_check},
  };
  return r;
}

inline bool valid_suite(const std::string& s) {
  return s == "all" || s == "core" || s == "near_on_policy" || s == "extensions";
}

inline CheckRecord run_one(const CheckSpec& spec, const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = spec.run(ctx);
  } catch (const std::exception& e) {
    o = Outcome{false, std::nan(""), std::nan(""), std::string("exception: ") + e.what()};
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return CheckRecord{spec.name, spec.paper_ref, spec.suite, spec.criterion, o.pass ? "pass" : "fail",
                     o.measured, o.tolerance, ms, o.detail};
}

/// Runs a suite; `all` appends the reference-coverage meta-check.
inline std::vector<CheckRecord> run_suite(const std::string& suite, const Context& ctx,
                                          const std::function<void(const CheckRecord&)>& on_done = {}) {
  require(valid_suite(suite), "unknown suite '" + suite + "'");
  std::vector<CheckRecord> out;
  for (const auto& spec : registry()) {
    if (suite != "all" && spec.suite != suite) continue;
    out.push_back(run_one(spec, ctx));
    if (on_done) on_done(out.back());
  }
  if (suite == "all") {
    const auto missing = missing_refs(out);
    std::string detail = "results without a check:";
    for (const auto& m : missing) detail += " " + m;
    if (missing.empty()) detail = "every in-scope result has at least one check";
    out.push_back(CheckRecord{"paper_ref_coverage", "meta", "all", 11, missing.empty() ? "pass" : "fail",
                              static_cast<double>(missing.size()), 0.0, 0.0, detail});
    if (on_done) on_done(out.back());
  }
  return out;
}

inline nlohmann::json number_or_null(double v) {
  if (std::isfinite(v)) return v;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return nullptr;
}

inline nlohmann::json report_json(const std::vector<CheckRecord>& records, std::uint64_t seed, const std::string& version) {
  nlohmann::json j;
  j["version"] = version;
  j["seed"] = seed;
  j["checks"] = nlohmann::json::array();
  for (const auto& r : records) {
    j["checks"].push_back({{"name", r.name},
                           {"paper_ref", r.paper_ref},
                           {"status", r.status},
                           {"measured", number_or_null(r.measured)},
                           {"tolerance", number_or_null(r.tolerance)},
                           {"runtime_ms", r.runtime_ms},
                           {"suite", r.suite},
                           {"detail", r.detail}});
  }
  return j;
}

}  // namespace forgetlab::checks
