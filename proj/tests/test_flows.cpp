#include "catch_amalgamated.hpp"

#include <sstream>

#include "forgetlab.hpp"
#include "oracles.hpp"

using namespace forgetlab;
using Catch::Matchers::WithinAbs;

namespace {
// dL/dφ = β − E_{p_n}[r_o] for KL(p_n || q_β) in 1D.
double sft_dphi_simpson(double phi, double delta) {
  const double b = sigmoid(phi);
  const double leak = oracle::simpson(
      [&](double x) {
        const double po = oracle::normal1(x, 0.0, 1.0), pn = oracle::normal1(x, delta, 1.0);
        return pn * b * po / (b * po + (1 - b) * pn);
      },
      delta - 14, delta + 14, 4000);
  return b - leak;
}
}  // namespace

TEST_CASE("SFT logit flow matches an independent RK4 integration", "[flows]") {
  const EstimatorConfig cfg;
  const double delta = 2.0, b0 = 0.6, dt = 0.1, T = 2.0;
  const auto spec = TargetSpec::separated(0.5, delta, 1);
  const auto tr = integrate_flow(FlowObjective::sft_logit, LearnerParams::from_beta(b0, spec.mu_old, spec.mu_new), spec,
                                 dt, T, cfg);
  double phi = logit(b0);
  for (int i = 0; i < 20; ++i) {
    const double k1 = -sft_dphi_simpson(phi, delta), k2 = -sft_dphi_simpson(phi + 0.5 * dt * k1, delta);
    const double k3 = -sft_dphi_simpson(phi + 0.5 * dt * k2, delta), k4 = -sft_dphi_simpson(phi + dt * k3, delta);
    phi += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  CHECK_THAT(tr.times.back(), WithinAbs(T, 1e-12));
  CHECK_THAT(tr.final_beta(), WithinAbs(sigmoid(phi), 1e-8));
}

TEST_CASE("SFT flow drives beta down monotonically with nonincreasing loss", "[flows]") {
  const EstimatorConfig cfg;
  for (double delta : {1.0, 4.0}) {
    const auto spec = TargetSpec::separated(0.5, delta, 1);
    const auto tr = integrate_flow(FlowObjective::sft_logit, LearnerParams::from_beta(0.9, spec.mu_old, spec.mu_new),
                                   spec, 0.05, 50.0, cfg);
    for (std::size_t i = 1; i < tr.size(); ++i) {
      CHECK(tr.states[i].beta() < tr.states[i - 1].beta());
      CHECK(tr.losses[i] <= tr.losses[i - 1] + 1e-12);
    }
    CHECK(tr.max_loss_increase <= 1e-9);
    CHECK(tr.final_beta() < 0.9);
    CHECK_FALSE(tr.collapsed);
  }
}

TEST_CASE("reverse-KL flow recovers the target from a perturbed start", "[flows]") {
  const EstimatorConfig cfg;
  Vec mo(2), mn(2);
  mo << 0, 0;
  mn << 2.5, 0.5;
  const TargetSpec spec(0.35, mo, mn, CovarianceModel::identity(2));
  Vec start = mn;
  start[0] += 0.4;
  const auto tr =
      integrate_flow(FlowObjective::reverse_kl, LearnerParams::from_beta(0.5, mo, start), spec, 0.25, 150.0, cfg);
  CHECK_THAT(tr.final_beta(), WithinAbs(0.35, 1e-4));
  CHECK((tr.states.back().m_new - mn).norm() < 1e-4);
  CHECK((tr.states.back().m_old - mo).norm() == 0.0);
  for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr.losses[i] <= tr.losses[i - 1] + 1e-12);
}

TEST_CASE("flow options and argument validation", "[flows]") {
  const EstimatorConfig cfg;
  const auto spec = TargetSpec::separated(0.5, 4.0, 1);
  const auto init = LearnerParams::from_beta(0.5, spec.mu_old, spec.mu_new);
  CHECK_THROWS_AS(integrate_flow(FlowObjective::sft_logit, init, spec, 0.6, 1.0, cfg), input_error);
  CHECK_THROWS_AS(integrate_flow(FlowObjective::sft_logit, init, spec, 0.0, 1.0, cfg), input_error);
  CHECK_THROWS_AS(integrate_flow(FlowObjective::sft_logit, init, spec, 0.1, -1.0, cfg), input_error);
  FlowOptions opts;
  opts.stop_below_beta = 0.1;
  const auto tr = integrate_flow(FlowObjective::sft_logit, init, spec, 0.5, 1e4, cfg, opts);
  CHECK(tr.final_beta() < 0.1);
  CHECK(tr.states[tr.size() - 2].beta() >= 0.1);
}

TEST_CASE("trajectory CSV has the documented columns and round-trips values", "[flows]") {
  const EstimatorConfig cfg;
  Vec mo = Vec::Zero(2), mn(2);
  mn << 2, 1;
  const TargetSpec spec(0.5, mo, mn, CovarianceModel::identity(2));
  const auto tr =
      integrate_flow(FlowObjective::reverse_kl, LearnerParams::from_beta(0.3, mo, mn), spec, 0.05, 1.0, cfg);
  std::ostringstream os;
  write_trajectory_csv(tr, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "t,beta,m_new_0,m_new_1,loss,grad_norm");
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
    REQUIRE(v.size() == 6);
    CHECK(v[1] == tr.states[rows].beta());
    CHECK(v[4] == tr.losses[rows]);
    ++rows;
  }
  CHECK(rows == tr.size());
  CHECK(tr.size() == 11);
}

TEST_CASE("Fisher Hessian agrees with finite differences and the PL certificate holds", "[flows]") {
  EstimatorConfig cfg;
  const auto spec = TargetSpec::separated(0.4, 3.0, 1);
  PLOptions opts;
  opts.lipschitz_pairs = 20;
  opts.probes = 20;
  const auto c = local_pl_certificate(spec, cfg, opts);
  CHECK(c.hessian_rel_diff < 1e-4);
  CHECK(c.mu_star > 0.0);
  CHECK(c.rho <= opts.r0);
  CHECK_THAT(c.eps_loc, WithinAbs(c.mu_star * c.rho * c.rho / 8, 1e-15));
  CHECK(c.rate_ok);
  CHECK(c.probes_used > 0);
  CHECK(c.min_pl_ratio >= 1.0);
}
