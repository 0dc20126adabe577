#include "catch_amalgamated.hpp"

#include "forgetlab.hpp"
#include "oracles.hpp"

using namespace forgetlab;
using Catch::Matchers::WithinAbs;

namespace {
Vec v1(double a) { return Vec::Constant(1, a); }

SdftConfig sdft_cfg(double lam) {
  return SdftConfig{0.3, v1(3.0), 0.5, 0.2, lam, v1(0.0), CovarianceModel::identity(1)};
}

Geometry geo1(double delta) { return Geometry{v1(0.0), v1(delta), CovarianceModel::identity(1)}; }

TttConfig ttt_cfg(double u_old, double u_new, double lam, PartitionKind kind = PartitionKind::bayes_halfspace) {
  return TttConfig{1.0, lam, 0.5, StepReward{u_old, u_new, kind}, geo1(2.0)};
}

double mix1(double x, double w, double a, double b) {
  return w * oracle::normal1(x, a, 1.0) + (1.0 - w) * oracle::normal1(x, b, 1.0);
}
}  // namespace

TEST_CASE("SDFT step matches a hand-computed gradient step", "[near_on_policy]") {
  const EstimatorConfig est;
  const auto cfg = sdft_cfg(0.3);
  const SdftState s{0.5, v1(2.5), 0.6, v1(2.0)};
  const auto r = sdft_step(s, cfg, est);
  // reverse KL gradients of KL(q_{β,0,m} || p_{α,0,ν}) by Simpson and central differences
  auto L = [](double b, double m) {
    return oracle::simpson(
        [&](double x) {
          const double q = mix1(x, b, 0.0, m);
          return q * std::log(q / mix1(x, 0.5, 0.0, 2.5));
        },
        -14, 17, 20000);
  };
  const double h = 1e-5;
  const double gb = (L(0.6 + h, 2.0) - L(0.6 - h, 2.0)) / (2 * h), gm = (L(0.6, 2.0 + h) - L(0.6, 2.0 - h)) / (2 * h);
  const double beta1 = 0.6 - 0.5 * gb, m1 = 2.0 - 0.5 * gm;
  CHECK_THAT(r.state.beta_t, WithinAbs(beta1, 1e-7));
  CHECK_THAT(r.state.m_t[0], WithinAbs(m1, 1e-7));
  CHECK_THAT(r.state.alpha_t, WithinAbs(0.8 * 0.5 + 0.2 * (0.7 * beta1 + 0.3 * 0.3), 1e-7));
  CHECK_THAT(r.state.nu_t[0], WithinAbs(0.8 * 2.5 + 0.2 * (0.7 * m1 + 0.3 * 3.0), 1e-7));
  CHECK_FALSE(r.clamped);
}

TEST_CASE("SDFT anchor is a fixed point and runs converge to it", "[near_on_policy]") {
  const EstimatorConfig est;
  const auto cfg = sdft_cfg(0.3);
  const SdftState anchor{0.3, v1(3.0), 0.3, v1(3.0)};
  const auto r = sdft_step(anchor, cfg, est);
  CHECK((r.state.student_vec() - anchor.student_vec()).norm() < 1e-10);
  CHECK((r.state.teacher_vec() - anchor.teacher_vec()).norm() < 1e-10);

  const auto run = sdft_run(SdftState{0.5, v1(2.5), 0.6, v1(2.0)}, cfg, 400, est);
  CHECK(run.limit_error < 1e-6);
  CHECK(run.states.size() == 401);
  CHECK(run.clamp_events == 0);
  CHECK(std::isfinite(run.old_grad_sum));
  for (double c : run.contraction_ratios) CHECK(c < 1.0);

  SdftConfig bad = cfg;
  bad.ema_zeta = 0.0;
  CHECK_THROWS_AS(sdft_step(anchor, bad, est), input_error);
}

TEST_CASE("geometric fit recovers an exact geometric sequence", "[near_on_policy]") {
  std::vector<double> g;
  for (int t = 0; t < 30; ++t) g.push_back(2.0 * std::pow(0.7, t));
  const auto [kappa, c] = geometric_fit(g);
  CHECK_THAT(kappa, WithinAbs(0.7, 1e-12));
  CHECK_THAT(c, WithinAbs(2.0, 1e-10));
}

TEST_CASE("TTT utility matches Monte Carlo and the anchor KL matches integration", "[near_on_policy]") {
  const EstimatorConfig est;
  const auto cfg = ttt_cfg(0.0, 1.0, 0.5);
  const auto an = ttt_analysis(cfg, est);
  for (double b : {0.1, 0.5, 0.9}) {
    const auto mc = ttt_J_monte_carlo(cfg, b, 200000, 11);
    CHECK(std::abs(an.J(b) - mc.scalar()) <= 4.0 * mc.se());
    const double D = oracle::simpson(
        [&](double x) {
          const double q = mix1(x, b, 0.0, 2.0);
          return q * std::log(q / mix1(x, 0.5, 0.0, 2.0));
        },
        -14, 16);
    CHECK_THAT(an.D(b), WithinAbs(D, 1e-8));
    const double h = 1e-5;
    CHECK_THAT(an.Dprime(b), WithinAbs((an.D(b + h) - an.D(b - h)) / (2 * h), 1e-6));
  }
  CHECK_THAT(an.D(0.5), WithinAbs(0.0, 1e-14));

  const auto dj = ttt_analysis(ttt_cfg(0.0, 1.0, 0.5, PartitionKind::disjoint), est);
  CHECK_THAT(dj.J(0.3), WithinAbs(std::log(0.3 + 0.7 * std::exp(1.0)), 1e-14));
  CHECK_THAT(dj.D(0.3), WithinAbs(0.3 * std::log(0.6) + 0.7 * std::log(1.4), 1e-14));
}

TEST_CASE("TTT optimal weight case analysis", "[near_on_policy]") {
  const EstimatorConfig est;
  const auto lo = ttt_analysis(ttt_cfg(0.0, 1.0, 0.0), est);
  CHECK(lo.case_label == "collapse_new");
  CHECK(lo.beta_star == 0.0);

  const auto eq = ttt_analysis(ttt_cfg(0.7, 0.7, 2.0), est);
  CHECK(eq.case_label == "reference");
  CHECK(eq.beta_star == 0.5);

  for (double lam : {2.0, 10.0}) {
    const auto a = ttt_analysis(ttt_cfg(0.0, 1.0, lam), est);
    REQUIRE(lam > a.lambda_crit_new);
    CHECK(a.case_label == "interior");
    CHECK(a.beta_star > 0.0);
    CHECK(a.beta_star < 0.5);
    CHECK(std::abs(a.objective_prime(a.beta_star)) < 1e-8);
    // grid maximizer agrees
    double best = -kInf, arg = 0.0;
    for (int i = 0; i <= 2000; ++i) {
      const double b = i / 2000.0;
      if (a.objective(b) > best) best = a.objective(b), arg = b;
    }
    CHECK(std::abs(arg - a.beta_star) <= 1e-3);
  }

  const auto old = ttt_analysis(ttt_cfg(1.0, 0.0, 0.0), est);
  CHECK(old.case_label == "collapse_old");
  CHECK(old.beta_star == 1.0);
  const auto old_int = ttt_analysis(ttt_cfg(1.0, 0.0, 20.0), est);
  CHECK(old_int.case_label == "interior");
  CHECK(old_int.beta_star > 0.5);

  // just below and above the new-side threshold
  const double crit = lo.lambda_crit_new;
  CHECK(ttt_analysis(ttt_cfg(0.0, 1.0, 0.99 * crit), est).case_label == "collapse_new");
  CHECK(ttt_analysis(ttt_cfg(0.0, 1.0, 1.01 * crit), est).case_label == "interior");

  CHECK_THROWS_AS(ttt_analysis(ttt_cfg(0.0, 1.0, -1.0), est), input_error);
}

TEST_CASE("TTT old-mean gradient matches finite differences and its bound", "[near_on_policy]") {
  const EstimatorConfig est;
  for (double delta : {1.0, 3.0}) {
    auto cfg = ttt_cfg(-0.5, 1.0, 0.0);
    cfg.geometry = geo1(delta);
    for (double b : {0.2, 0.7}) {
      const auto g = ttt_oldmean_gradient(b, cfg.geometry.mu_n, cfg, est);
      const double h = 1e-6;
      const double fd = (std::log(ttt_mgf(cfg, b, v1(h), cfg.geometry.mu_n)) -
                         std::log(ttt_mgf(cfg, b, v1(-h), cfg.geometry.mu_n))) /
                        (2 * h);
      CHECK_THAT(g.grad[0], WithinAbs(fd, 1e-7));
      CHECK(g.grad.norm() <= g.bound + 1e-12);
    }
  }
  CHECK_THROWS_AS(ttt_oldmean_gradient(0.5, v1(2.0), ttt_cfg(0, 1, 0, PartitionKind::disjoint), est), input_error);
}

TEST_CASE("OAPL tilted target: closed forms, normalization and SNIS", "[near_on_policy]") {
  const EstimatorConfig est;
  OaplConfig c{1.0, 0.5, StepReward{0.0, std::log(2.0), PartitionKind::disjoint}, geo1(2.0)};
  auto t = oapl_target(c, est);
  CHECK_THAT(t.beta_star_disjoint, WithinAbs(1.0 / 3.0, 1e-15));
  CHECK_THAT(t.expected_old_resp, WithinAbs(1.0 / 3.0, 1e-15));
  CHECK_THROWS_AS(t.log_qstar(v1(0.0)), method_error);

  c.reward = StepReward{0.4, 0.4, PartitionKind::disjoint};
  t = oapl_target(c, est);
  CHECK_THAT(t.beta_star_disjoint, WithinAbs(0.5, 1e-15));
  CHECK_THAT(t.expected_old_resp, WithinAbs(0.5, 1e-15));
  CHECK_THAT(t.v_star, WithinAbs(0.4, 1e-14));

  c.reward = StepReward{0.2, 1.0, PartitionKind::bayes_halfspace};
  c.beta0 = 0.4;
  c.tau = 0.7;
  t = oapl_target(c, est);
  // split at the reward jump, which sits at the midpoint y = 1
  auto split = [](const std::function<double(double)>& f) { return oracle::simpson(f, -14, std::nextafter(1.0, 0.0)) + oracle::simpson(f, 1, 16);
  };
  const double mass = split([&](double x) { return std::exp(t.log_qstar(v1(x))); });
  CHECK_THAT(mass, WithinAbs(1.0, 1e-8));
  const double resp =
      split([&](double x) { return std::exp(t.log_qstar(v1(x))) * 0.4 * oracle::normal1(x, 0, 1) / mix1(x, 0.4, 0, 2); });
  CHECK_THAT(t.expected_old_resp, WithinAbs(resp, 1e-8));
  CHECK(t.expected_old_resp > 0.0);
  CHECK(t.expected_old_resp < 1.0);

  const auto q0 = c.reference();
  const auto bp = c.geometry.partition();
  const auto e = snis_estimate(
      q0, [&](const Vec& y, int) { return step_reward_at(c.reward, bp, y) / c.tau; },
      [&](const Vec& y, int) { return responsibilities(q0, y)[0]; }, 200000, 3);
  CHECK(std::abs(e.scalar() - t.expected_old_resp) <= 4.0 * e.se());
}

TEST_CASE("OAPL regression gradient matches finite differences and the old-mode bound", "[near_on_policy]") {
  const EstimatorConfig est;
  const OaplConfig c{1.0, 0.5, StepReward{0.0, 1.0, PartitionKind::bayes_halfspace}, geo1(2.5)};
  const double b = 0.45, m = 2.2, h = 1e-5;
  const auto g = oapl_regression_grad(b, v1(m), c, est);
  const double fd = (oapl_regression_grad(b, v1(m + h), c, est).j_value - oapl_regression_grad(b, v1(m - h), c, est).j_value) /
                    (2 * h);
  CHECK_THAT(g.grad_m[0], WithinAbs(fd, 1e-5 * std::max(1.0, std::abs(fd))));
  CHECK(g.oldmode_term_norm <= g.oldmode_bound + 1e-12);
  CHECK(g.eps_ref > 0.0);
}

TEST_CASE("exponential tilt normalizes", "[near_on_policy]") {
  const EstimatorConfig est;
  const auto ref = MixtureDensity::two(0.3, v1(-1.0), v1(2.0), CovarianceModel::identity(1));
  const auto tilt = make_exponential_tilt(ref, [](const Vec& y) { return -0.5 * y[0]; }, 2.0, {v1(-1.0), v1(2.0)}, est);
  const double mass = oracle::simpson([&](double x) { return std::exp(tilt.log_density(v1(x))); }, -16, 16);
  CHECK_THAT(mass, WithinAbs(1.0, 1e-8));
  CHECK_THROWS_AS(make_exponential_tilt(ref, [](const Vec&) { return 0.0; }, 0.0, {}, est), input_error);
}
