#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"
#include "estimators.hpp"
#include "mixture.hpp"
#include "objectives.hpp"

namespace forgetlab {

// ---------------------------------------------------------------------------
// f-divergence forgetting.

struct FdivScan {
  std::vector<double> betas;
  std::vector<double> losses;
  bool monotone;
};

/// D_gen(p_n ‖ q_β) = E_{p_n}[f◇(q_β/p_n)] on a uniform β grid including both endpoints.
inline FdivScan fdiv_sft_scan(const FGenerator& gen, const TargetSpec& spec, const EstimatorConfig& cfg,
                              int points = 101) {
  require(points >= 2, "scan needs at least two points");
  const FGenerator adj = gen.adjoint();
  const GaussianGrid g = gaussian_grid(spec.cov, spec.mu_new, {spec.mu_old}, cfg, nullptr, 51);
  const Vec a = g.coords(spec.cov, spec.mu_old);
  Vec ell(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) ell[i] = 0.5 * g.z.col(i).squaredNorm() - 0.5 * (g.z.col(i) - a).squaredNorm();
  FdivScan s;
  for (int k = 0; k < points; ++k) {
    const double beta = static_cast<double>(k) / (points - 1);
    double v = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double t = beta == 0.0 ? 1.0 : beta * ratio_from_log(ell[i]) + (1.0 - beta);
      v += g.w[i] * adj.f(t);
    }
    if (!std::isfinite(v)) throw numeric_error("non-finite f-divergence on the beta grid");
    s.betas.push_back(beta);
    s.losses.push_back(v);
  }
  s.monotone = true;
  for (int k = 1; k < points; ++k) s.monotone = s.monotone && s.losses[k] > s.losses[k - 1];
  return s;
}

struct FdivOldMeanGradient {
  Vec grad;
  double a_f;
  double b_f;
  double eps_q;
  double eps_p;
  double bound;  // +∞ unless the generator has bounded curvature
};

/// ∇_{m_o} D_gen(q ‖ p_α) at m_o = μ_o: βΣ⁻¹(A_f(m_n − μ_o) − B_f(μ_n − μ_o)), w = q/p_α.
inline FdivOldMeanGradient fdiv_oldmean_grad(const FGenerator& gen, double beta, const Vec& m_new,
                                             const TargetSpec& spec, const EstimatorConfig& cfg) {
  require(beta > 0.0 && beta < 1.0, "beta must lie strictly inside (0,1)");
  require(m_new.size() == spec.dim(), "m_new has wrong dimension");
  const auto& cov = spec.cov;
  const MixtureDensity q = MixtureDensity::two(beta, spec.mu_old, m_new, cov);
  const MixtureDensity p = spec.density();
  const GaussianGrid g = gaussian_grid(cov, spec.mu_old, {m_new, spec.mu_new}, cfg, nullptr, 53);
  const ReducedMixture rq(q, g), rp(p, g);
  double rbuf[2], sbuf[2];
  FdivOldMeanGradient r{};
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double lq = rq.resp(g, i, rbuf);
    const double lp = rp.resp(g, i, sbuf);
    const double k = gen.kappa(ratio_from_log(lq - lp));
    r.a_f += g.w[i] * k * rbuf[1];
    r.b_f += g.w[i] * k * sbuf[1];
    r.eps_q += g.w[i] * rbuf[1];
    r.eps_p += g.w[i] * sbuf[1];
  }
  const Vec dq = m_new - spec.mu_old, dp = spec.mu_new - spec.mu_old;
  r.grad = beta * cov.solve(r.a_f * dq - r.b_f * dp);
  const double cf = gen.kappa_sup();
  r.bound = std::isfinite(cf) ? beta * cf * cov.inverse_norm() * (r.eps_q * dq.norm() + r.eps_p * dp.norm()) : kInf;
  return r;
}

// ---------------------------------------------------------------------------
// Finite-K mixtures.

struct KmodeOptions {
  int max_iterations = 20000;
  double grad_tol = 1e-10;
  std::int64_t mc_samples = 1000000;  // used when the projected rank exceeds 3
};

struct KmodeResult {
  Vec beta_star;         // projected-gradient optimizer of KL(p_T ‖ q_β) with m = μ
  Vec beta_closed;       // α̃ on T, 0 elsewhere
  double max_closed_diff;
  int iterations;
  double projected_grad_norm;
  Vec old_grad_k;        // ∇_{m_k} KL(q ‖ p) from the pairwise decomposition
  Mat pairwise_eps;      // row 0: ε^(q)_{k→j}, row 1: ε^(p)_{k→j}
  Mat pairwise_bounds;   // matching ½√(β_j/β_k) e^{−‖m_j − μ_k‖²/8}, ½√(α_j/α_k) e^{−‖μ_j − μ_k‖²/8}
  double grad_bound;     // β_k‖Σ⁻¹‖ Σ_j (bound_q ‖m_j − μ_k‖ + bound_p ‖μ_j − μ_k‖)
  bool bounds_ok;
  bool monte_carlo;
};

/// Euclidean projection onto the probability simplex (sort-based).
inline Vec project_simplex(const Vec& v) {
  const Eigen::Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double css = 0.0, theta = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    css += u[static_cast<std::size_t>(i)];
    const double t = (css - 1.0) / static_cast<double>(i + 1);
    if (u[static_cast<std::size_t>(i)] - t > 0.0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

namespace detail {

inline int kmode_order(int rank, int requested) {
  return rank <= 2 ? requested : std::min(requested, 64);
}

/// Grid under N(center, Σ) for K-mode work: projected quadrature up to rank 3, Monte Carlo beyond.
inline GaussianGrid kmode_grid(const CovarianceModel& cov, const Vec& center, const std::vector<Vec>& span,
                               const EstimatorConfig& cfg, const KmodeOptions& opts, std::uint64_t stream) {
  if (cfg.method == Method::projected_quadrature) {
    const int rank = ProjectionBasis::build(cov, center, span).rank();
    if (rank <= 3) return quadrature_grid(cov, center, span, kmode_order(rank, cfg.quad_order));
  }
  return monte_carlo_grid(cov, center, cfg.method == Method::monte_carlo ? cfg.mc_samples : opts.mc_samples,
                          cfg.seed, stream);
}

}  // namespace detail

/// `target` is p = Σ α_k N(μ_k, Σ); `model` is q = Σ β_k N(m_k, Σ) with m_k = μ_k at the analysed index.
inline KmodeResult kmode_analysis(const MixtureDensity& target, const std::vector<int>& trained,
                                  int mode_index, const MixtureDensity& model, const EstimatorConfig& cfg,
                                  const KmodeOptions& opts = {}) {
  const int K = target.size();
  require(K >= 2 && K <= 8, "K must lie in [2, 8]");
  require(model.size() == K && model.dim() == target.dim(), "model must have one component per target mode");
  require(mode_index >= 0 && mode_index < K, "mode index out of range");
  require(!trained.empty(), "trained subset must be nonempty");
  for (int j = 0; j < K; ++j)
    for (int l = 0; l < j; ++l) require((target.means[j] - target.means[l]).norm() > 0.0, "target means must be distinct");
  for (int t : trained) require(t >= 0 && t < K, "trained index out of range");
  require(target.weights.minCoeff() > 0.0, "target weights must be positive");
  require((model.means[mode_index] - target.means[mode_index]).norm() == 0.0, "analysed model mean must equal mu_k");
  const auto& cov = target.cov;

  KmodeResult r;
  r.monte_carlo = false;

  // Part A: closed form and projected gradient on the simplex.
  std::vector<char> in_t(K, 0);
  for (int t : trained) in_t[t] = 1;
  double mass_t = 0.0;
  for (int j = 0; j < K; ++j) mass_t += in_t[j] ? target.weights[j] : 0.0;
  r.beta_closed = Vec::Zero(K);
  for (int j = 0; j < K; ++j) r.beta_closed[j] = in_t[j] ? target.weights[j] / mass_t : 0.0;
  const MixtureDensity p_t(r.beta_closed, target.means, cov);

  // Node matrix: log N_j(y) − log p_T(y) under p_T, with weights.
  std::vector<double> wv;
  std::vector<std::vector<double>> lr;
  for (int c = 0; c < K; ++c) {
    if (!in_t[c]) continue;
    const GaussianGrid g = detail::kmode_grid(cov, target.means[c], target.means, cfg, opts, 61 + c);
    r.monte_carlo = r.monte_carlo || g.monte_carlo;
    const ReducedMixture rpt(p_t, g);
    Mat a(g.rank(), K);
    for (int j = 0; j < K; ++j) a.col(j) = g.coords(cov, target.means[j]);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double lpt = rpt.log_value(g, i);
      std::vector<double> row(K);
      for (int j = 0; j < K; ++j) row[j] = -0.5 * (g.z.col(i) - a.col(j)).squaredNorm() - lpt;
      lr.push_back(std::move(row));
      wv.push_back(r.beta_closed[c] * g.w[i]);
    }
  }
  const std::size_t n = wv.size();
  Mat G(static_cast<Eigen::Index>(n), K);
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < K; ++j) G(static_cast<Eigen::Index>(i), j) = ratio_from_log(lr[i][j]);
  const Eigen::Map<const Vec> W(wv.data(), static_cast<Eigen::Index>(n));

  // Scale-free objective F(b) = −Σ w log(Gb) + (Σw) log(Σb); changes evaluated through log1p of the step.
  const double wsum = W.sum();
  auto change = [&](const Vec& qv, const Vec& b, const Vec& d) {
    const Vec dq = G * d;
    double s = wsum * std::log1p(d.sum() / b.sum());
    for (Eigen::Index i = 0; i < qv.size(); ++i) {
      const double t = dq[i] / qv[i];
      if (!(t > -1.0)) return kInf;
      s -= W[i] * std::log1p(t);
    }
    return s;
  };

  // Each iteration tries a Euclidean projected step and an entropic mirror step b ∝ b·exp(−s∇F), each with its
  // own Armijo backtracking, and keeps the larger decrease. Near a face the curvature of F grows like 1/b_j,
  // which stalls Euclidean steps; at the degenerate optimum (zero gradient on untrained modes) mirror steps
  // only shrink b_j sublinearly while Euclidean steps reach the face exactly.
  Vec b = Vec::Constant(K, 1.0 / K);
  double step_pg = 1.0, step_md = 1.0;
  r.iterations = 0;
  r.projected_grad_norm = kInf;
  for (int it = 0; it < opts.max_iterations; ++it) {
    const Vec qv = G * b;
    const Vec gr = -(G.transpose() * W.cwiseQuotient(qv)).array() + wsum / b.sum();
    r.projected_grad_norm = (b - project_simplex(b - gr)).norm();
    if (r.projected_grad_norm <= opts.grad_tol) break;
    auto search = [&](double& step, auto&& propose, Vec& out) {
      step = std::min(step * 2.0, 1e6);
      for (; step >= 1e-20; step *= 0.5) {
        out = propose(step);
        const Vec d = out - b;
        const double ch = change(qv, b, d);
        if (ch <= 1e-4 * gr.dot(d)) return ch;
      }
      step = 1e-20;
      return kInf;
    };
    Vec b_pg, b_md;
    const double ch_pg = search(step_pg, [&](double s) { return project_simplex(b - s * gr); }, b_pg);
    const double ch_md = search(
        step_md,
        [&](double s) {
          Vec lb = b.array().max(1e-300).log().matrix() - s * gr;
          lb.array() -= lb.maxCoeff();
          Vec nb = lb.array().exp().matrix();
          return Vec(nb / nb.sum());
        },
        b_md);
    if (!std::isfinite(std::min(ch_pg, ch_md))) throw numeric_error("simplex line search failed");
    b = ch_pg <= ch_md ? b_pg : b_md;
    r.iterations = it + 1;
  }
  if (!(r.projected_grad_norm <= opts.grad_tol)) throw numeric_error("projected gradient did not converge");
  r.beta_star = b;
  r.max_closed_diff = (b - r.beta_closed).cwiseAbs().maxCoeff();

  // Part B: pairwise misassignment decomposition at m_k = μ_k.
  const int k = mode_index;
  std::vector<Vec> span = target.means;
  span.insert(span.end(), model.means.begin(), model.means.end());
  const GaussianGrid g = detail::kmode_grid(cov, target.means[k], span, cfg, opts, 71);
  r.monte_carlo = r.monte_carlo || g.monte_carlo;
  const ReducedMixture rq(model, g), rp(target, g);
  Accumulator acc(2 * K);
  std::vector<double> rb(K), sb(K);
  Vec v(2 * K);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    rq.resp(g, i, rb.data());
    rp.resp(g, i, sb.data());
    for (int j = 0; j < K; ++j) {
      v[j] = rb[j];
      v[K + j] = sb[j];
    }
    acc.add(g.w[i], g.batch[i], v);
  }
  const Estimate e = acc.estimate();
  r.pairwise_eps.resize(2, K);
  r.pairwise_bounds.resize(2, K);
  Vec inner = Vec::Zero(target.dim());
  r.grad_bound = 0.0;
  r.bounds_ok = true;
  for (int j = 0; j < K; ++j) {
    r.pairwise_eps(0, j) = e.value[j];
    r.pairwise_eps(1, j) = e.value[K + j];
    if (j == k) {
      r.pairwise_bounds(0, j) = r.pairwise_bounds(1, j) = 1.0;
      continue;
    }
    const double bq = model.weights[k] > 0.0
                          ? 0.5 * std::sqrt(model.weights[j] / model.weights[k]) *
                                std::exp(-cov.mahalanobis_sq(model.means[j] - target.means[k]) / 8.0)
                          : kInf;
    const double bp = 0.5 * std::sqrt(target.weights[j] / target.weights[k]) *
                      std::exp(-cov.mahalanobis_sq(target.means[j] - target.means[k]) / 8.0);
    r.pairwise_bounds(0, j) = bq;
    r.pairwise_bounds(1, j) = bp;
    const double slack_q = e.std_err ? 4.0 * (*e.std_err)[j] : 1e-9;
    const double slack_p = e.std_err ? 4.0 * (*e.std_err)[K + j] : 1e-9;
    if (r.pairwise_eps(0, j) > bq + slack_q || r.pairwise_eps(1, j) > bp + slack_p) r.bounds_ok = false;
    inner += r.pairwise_eps(0, j) * (model.means[j] - target.means[k]) -
             r.pairwise_eps(1, j) * (target.means[j] - target.means[k]);
    r.grad_bound += bq * (model.means[j] - target.means[k]).norm() + bp * (target.means[j] - target.means[k]).norm();
  }
  r.old_grad_k = model.weights[k] * cov.solve(inner);
  r.grad_bound *= model.weights[k] * cov.inverse_norm();
  return r;
}

// ---------------------------------------------------------------------------
// One-dimensional strongly log-concave location families ρ_μ(x) = e^{−V(x−μ)}/Z.

struct LocationFamily1D {
  std::function<double(double)> v;
  std::function<double(double)> v1;
  std::function<double(double)> v2;
  double m_strong;
  double l_smooth;
  double log_z;
  int dim = 1;

  /// V(x) = x²/2 + a log cosh x, so V″ ∈ [1, 1 + a].
  static LocationFamily1D log_cosh(double a) {
    require(a >= 0.0 && a <= 1.0, "log-cosh coefficient must lie in [0,1]");
    LocationFamily1D f;
    f.v = [a](double x) {
      const double ax = std::abs(x);
      return 0.5 * x * x + a * (ax + std::log1p(std::exp(-2.0 * ax)) - std::log(2.0));
    };
    f.v1 = [a](double x) { return x + a * std::tanh(x); };
    f.v2 = [a](double x) {
      const double c = 1.0 / std::cosh(x);
      return 1.0 + a * c * c;
    };
    f.m_strong = 1.0;
    f.l_smooth = 1.0 + a;
    f.log_z = 0.0;
    f.log_z = std::log(f.integrate(0.0, 0.0, [&](double x) { return std::exp(-f.v(x)); }));
    return f;
  }

  double half_width() const { return 14.0 / std::sqrt(m_strong); }

  double log_density(double x, double mu) const { return -v(x - mu) - log_z; }
  double density(double x, double mu) const { return std::exp(log_density(x, mu)); }

  /// Composite Gauss–Legendre over [lo − W, hi + W] (panels of width 0.5, 20 nodes each).
  double integrate(double lo, double hi, const std::function<double(double)>& h) const {
    const double a = std::min(lo, hi) - half_width(), b = std::max(lo, hi) + half_width();
    const int panels = static_cast<int>(std::ceil((b - a) / 0.5));
    const double wpan = (b - a) / panels;
    const GaussRule ref = gauss_legendre(20, 0.0, 1.0);
    double s = 0.0;
    for (int p = 0; p < panels; ++p) {
      const double x0 = a + p * wpan;
      for (int i = 0; i < 20; ++i) s += wpan * ref.w[i] * h(x0 + wpan * ref.x[i]);
    }
    return s;
  }
};

struct LogConcaveReport {
  double bc;
  double bc_bound;
  double fisher_residual;
  bool sft_monotone;
  double drift_grad;
  double drift_bound;
  double eps_q;
  double eps_p;
  double mass;          // ∫ρ_{μ1}
  double ibp_residual;  // |d/dμ ∫ρ_μ g − ∫ρ_μ g′| at μ1 for g(x) = sin x + x²/4
};

inline LogConcaveReport logconcave_checks(const LocationFamily1D& fam, double mu1, double mu2, double alpha,
                                          double beta, double m_new, const EstimatorConfig& cfg) {
  (void)cfg;
  if (fam.dim != 1) throw input_error("log-concave checks are limited to one dimension");
  require(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0, "alpha and beta must lie in (0,1)");
  LogConcaveReport r{};
  const double lo = std::min({mu1, mu2, m_new}) - 1.0, hi = std::max({mu1, mu2, m_new}) + 1.0;
  auto integ = [&](const std::function<double(double)>& h) { return fam.integrate(lo, hi, h); };

  r.mass = integ([&](double x) { return fam.density(x, mu1); });
  r.bc = integ([&](double x) { return std::exp(0.5 * (fam.log_density(x, mu1) + fam.log_density(x, mu2))); });
  r.bc_bound = std::exp(-fam.m_strong * (mu1 - mu2) * (mu1 - mu2) / 8.0);
  const double ev1 = integ([&](double x) {
    const double g = fam.v1(x - mu1);
    return g * g * fam.density(x, mu1);
  });
  const double ev2 = integ([&](double x) { return fam.v2(x - mu1) * fam.density(x, mu1); });
  r.fisher_residual = std::abs(ev1 - ev2);

  auto gfun = [](double x) { return std::sin(x) + 0.25 * x * x; };
  auto mean_g = [&](double mu) { return integ([&](double x) { return fam.density(x, mu) * gfun(x); }); };
  const double hi_mu = 1e-4;
  const double lhs = (mean_g(mu1 + hi_mu) - mean_g(mu1 - hi_mu)) / (2.0 * hi_mu);
  const double rhs = integ([&](double x) { return fam.density(x, mu1) * (std::cos(x) + 0.5 * x); });
  r.ibp_residual = std::abs(lhs - rhs);

  // Forward KL on new-only data, old = μ1, new = μ2.
  auto log_mix = [&](double x, double w, double a, double b) {
    return log_add_exp(std::log(w) + fam.log_density(x, a), std::log1p(-w) + fam.log_density(x, b));
  };
  std::vector<double> losses;
  for (int k = 0; k <= 100; ++k) {
    const double b = k / 100.0;
    double l = 0.0;
    if (k == 100)
      l = integ([&](double x) { return fam.density(x, mu2) * (fam.log_density(x, mu2) - fam.log_density(x, mu1)); });
    else if (k > 0)
      l = integ([&](double x) { return fam.density(x, mu2) * (fam.log_density(x, mu2) - log_mix(x, b, mu1, mu2)); });
    losses.push_back(l);
  }
  r.sft_monotone = true;
  for (std::size_t k = 1; k < losses.size(); ++k) r.sft_monotone = r.sft_monotone && losses[k] > losses[k - 1];

  // Reverse KL old-mean drift at m_o = μ1 (target p_α over μ1, μ2; model new mean m_new).
  auto rkl = [&](double m_o) {
    return integ([&](double x) {
      const double lq = log_mix(x, beta, m_o, m_new);
      return std::exp(lq) * (lq - log_mix(x, alpha, mu1, mu2));
    });
  };
  const double h = 1e-4;
  r.drift_grad = (rkl(mu1 + h) - rkl(mu1 - h)) / (2.0 * h);
  r.eps_q = integ([&](double x) {
    const double lq = log_mix(x, beta, mu1, m_new);
    return fam.density(x, mu1) * std::exp(std::log1p(-beta) + fam.log_density(x, m_new) - lq);
  });
  r.eps_p = integ([&](double x) {
    const double lp = log_mix(x, alpha, mu1, mu2);
    return fam.density(x, mu1) * std::exp(std::log1p(-alpha) + fam.log_density(x, mu2) - lp);
  });
  r.drift_bound = beta * fam.l_smooth * (r.eps_q * std::abs(m_new - mu1) + r.eps_p * std::abs(mu2 - mu1));
  return r;
}

}  // namespace forgetlab
