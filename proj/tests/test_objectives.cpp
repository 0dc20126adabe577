#include "catch_amalgamated.hpp"

#include "forgetlab.hpp"
#include "oracles.hpp"

using namespace forgetlab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

double mix1(double x, double w, double a, double b) {
  return w * oracle::normal1(x, a, 1.0) + (1.0 - w) * oracle::normal1(x, b, 1.0);
}

// KL(p_n || q_beta) for the 1D unit-variance pair at 0 and delta, by Simpson.
double sft_loss_simpson(double beta, double delta) {
  return oracle::simpson(
      [&](double x) {
        const double pn = oracle::normal1(x, delta, 1.0);
        return pn * std::log(pn / mix1(x, beta, 0.0, delta));
      },
      delta - 14, delta + 14);
}

// KL(q || p) for two 1D two-component unit-variance mixtures, by Simpson.
double rkl_simpson(double b, double mo, double mn, double a, double po, double pn) {
  const double lo = std::min({mo, mn, po, pn}) - 14, hi = std::max({mo, mn, po, pn}) + 14;
  return oracle::simpson(
      [&](double x) {
        const double q = mix1(x, b, mo, mn);
        return q * std::log(q / mix1(x, a, po, pn));
      },
      lo, hi, 40000);
}
}  // namespace

TEST_CASE("disjoint-support decomposition matches a brute-force discrete KL", "[objectives]") {
  // Old and new components live on disjoint atoms; sum the discrete KL directly.
  const std::vector<double> po{0.2, 0.5, 0.3}, ro{0.4, 0.4, 0.2}, pn{0.6, 0.4}, rn{0.3, 0.7};
  auto kl = [](const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
    return s;
  };
  for (double a : {0.1, 0.5, 0.8})
    for (double b : {0.2, 0.5, 0.95}) {
      std::vector<double> p, q;
      for (std::size_t i = 0; i < po.size(); ++i) p.push_back(a * po[i]), q.push_back(b * ro[i]);
      for (std::size_t i = 0; i < pn.size(); ++i) p.push_back((1 - a) * pn[i]), q.push_back((1 - b) * rn[i]);
      DisjointMixtureSpec s;
      s.alpha = a;
      s.beta = b;
      s.kl_oo = kl(po, ro);
      s.kl_nn = kl(pn, rn);
      CHECK_THAT(disjoint_decomposition(s).forward, WithinAbs(kl(p, q), 1e-12));
      // the component terms are supplied per direction
      s.kl_oo = kl(ro, po);
      s.kl_nn = kl(rn, pn);
      CHECK_THAT(disjoint_decomposition(s).reverse, WithinAbs(kl(q, p), 1e-12));
    }

  DisjointMixtureSpec edge;
  edge.alpha = 0.0;
  edge.beta = 0.3;
  edge.kl_nn = 0.2;
  CHECK_THAT(disjoint_decomposition(edge).forward, WithinAbs(-std::log(0.7) + 0.2, 1e-14));
  edge.alpha = 0.4;
  edge.beta = 0.0;
  CHECK(std::isinf(disjoint_decomposition(edge).forward));
  edge.kl_oo = -1.0;
  CHECK_THROWS_AS(disjoint_decomposition(edge), input_error);
}

TEST_CASE("leakage matches 1D integration and respects its bounds", "[objectives]") {
  const EstimatorConfig cfg;
  const auto cov = CovarianceModel::identity(1);
  for (double delta : {0.5, 2.0, 5.0})
    for (double w : {0.2, 0.5, 0.9}) {
      const auto r = leakage(cov, v1(0.0), v1(delta), w, cfg);
      auto rf = [&](double x) { return w * oracle::normal1(x, 0, 1) / mix1(x, w, 0.0, delta); };
      const double g2f = oracle::simpson([&](double x) { return oracle::normal1(x, delta, 1) * rf(x); }, -15, 15 + delta);
      const double f2g = oracle::simpson([&](double x) { return oracle::normal1(x, 0, 1) * (1 - rf(x)); }, -15, 15 + delta);
      CHECK_THAT(r.g_to_f, WithinAbs(g2f, 1e-8));
      CHECK_THAT(r.f_to_g, WithinAbs(f2g, 1e-8));
      CHECK(r.g_to_f <= r.g_to_f_bound + 1e-12);
      CHECK(r.f_to_g <= r.f_to_g_bound + 1e-12);
    }
  CHECK_THROWS_AS(leakage(cov, v1(0.0), v1(1.0), 1.0, cfg), input_error);
}

TEST_CASE("SFT loss matches integration, decreases in beta, and its logit gradient matches FD", "[objectives]") {
  const EstimatorConfig cfg;
  for (double delta : {1.0, 3.0}) {
    const auto spec = TargetSpec::separated(0.5, delta, 1);
    const SftKernel k(spec, cfg);
    double prev = -1.0;
    for (double b = 0.05; b < 0.96; b += 0.1) {
      const auto r = k(b);
      CHECK_THAT(r.loss, WithinAbs(sft_loss_simpson(b, delta), 1e-8));
      CHECK(r.loss > prev);
      prev = r.loss;
      CHECK(r.leak <= r.leak_bound + 1e-12);
      const double phi = logit(b), h = 1e-4;
      const double fd = (sft_loss_simpson(sigmoid(phi + h), delta) - sft_loss_simpson(sigmoid(phi - h), delta)) / (2 * h);
      CHECK_THAT(r.dphi, WithinAbs(fd, 1e-6));
      CHECK(r.dphi > 0.0);
    }
  }
  const auto spec = TargetSpec::separated(0.5, 1.0, 1);
  CHECK_THROWS_AS(sft_loss_and_logit_grad(0.0, spec, cfg), input_error);
  CHECK_THROWS_AS(sft_loss_and_logit_grad(1.0, spec, cfg), input_error);
}

TEST_CASE("reverse KL loss and gradients match 1D integration", "[objectives]") {
  const EstimatorConfig cfg;
  const auto spec = TargetSpec::separated(0.3, 2.5, 1);
  const auto target = spec.density();
  const double b = 0.6, mo = -0.4, mn = 1.7, h = 1e-4;
  const auto r = reverse_kl(b, v1(mo), v1(mn), target, cfg);
  CHECK_THAT(r.loss, WithinAbs(rkl_simpson(b, mo, mn, 0.3, 0.0, 2.5), 1e-8));
  const double fb = (rkl_simpson(b + h, mo, mn, 0.3, 0, 2.5) - rkl_simpson(b - h, mo, mn, 0.3, 0, 2.5)) / (2 * h);
  const double fo = (rkl_simpson(b, mo + h, mn, 0.3, 0, 2.5) - rkl_simpson(b, mo - h, mn, 0.3, 0, 2.5)) / (2 * h);
  const double fn = (rkl_simpson(b, mo, mn + h, 0.3, 0, 2.5) - rkl_simpson(b, mo, mn - h, 0.3, 0, 2.5)) / (2 * h);
  CHECK_THAT(r.dbeta, WithinAbs(fb, 1e-6));
  CHECK_THAT(r.dm_old[0], WithinAbs(fo, 1e-6));
  CHECK_THAT(r.dm_new[0], WithinAbs(fn, 1e-6));

  const auto at = reverse_kl(0.3, v1(0.0), v1(2.5), target, cfg);
  CHECK_THAT(at.loss, WithinAbs(0.0, 1e-12));
  CHECK(std::abs(at.dbeta) < 1e-10);
  CHECK(at.dm_new.norm() < 1e-10);
}

TEST_CASE("old-mean drift equals the reverse-KL old-mean gradient and obeys its bounds", "[objectives]") {
  const EstimatorConfig cfg;
  Mat s(2, 2);
  s << 1.0, 0.2, 0.2, 0.6;
  const TargetSpec spec(0.4, v2(0, 0), v2(2.0, 1.0), CovarianceModel(s));
  for (double b : {0.2, 0.5, 0.8})
    for (const Vec& mn : {v2(1.0, 0.5), v2(3.0, -1.0), v2(2.0, 1.0)}) {
      const auto learner = LearnerParams::from_beta(b, spec.mu_old, mn);
      const auto d = oldmean_drift(learner, spec, cfg);
      const auto r = reverse_kl(learner.beta(), learner.m_old, mn, spec.density(), cfg);
      CHECK((d.grad - r.dm_old).norm() < 1e-8);
      CHECK(d.grad.norm() <= d.bound + 1e-12);
      CHECK(d.eps_q <= d.eps_q_bound + 1e-12);
      CHECK(d.eps_p <= d.eps_p_bound + 1e-12);
      CHECK(d.bound <= d.overlap_bound + 1e-12);
    }
  const auto moved = LearnerParams::from_beta(0.5, v2(0.1, 0), v2(2, 1));
  CHECK_THROWS_AS(oldmean_drift(moved, spec, cfg), input_error);
}

TEST_CASE("replay minimizers match the grid search", "[objectives]") {
  const EstimatorConfig cfg;
  const auto spec = TargetSpec::separated(0.5, 3.0, 1);
  for (double lam : {0.2, 0.5}) {
    CHECK(replay_population_minimizer(lam, ReplayMode::denominator).beta_star == 0.0);
    CHECK(replay_population_minimizer(lam, ReplayMode::numerator).beta_star == lam);
    CHECK(replay_population_minimizer(lam, ReplayMode::denominator).deployed_old_mass == lam);
    for (ReplayMode m : {ReplayMode::denominator, ReplayMode::numerator})
      CHECK_THAT(replay_grid_argmin(lam, m, spec, cfg).beta_argmin,
                 WithinAbs(replay_population_minimizer(lam, m).beta_star, 0.01));
  }
  CHECK_THAT(replay_objective(0.3, 0.3, ReplayMode::numerator, spec, cfg), WithinAbs(0.0, 1e-10));
  CHECK_THROWS_AS(replay_population_minimizer(0.0, ReplayMode::numerator), input_error);
}
