#include "catch_amalgamated.hpp"

#include "forgetlab.hpp"
#include "oracles.hpp"

using namespace forgetlab;
using Catch::Matchers::WithinAbs;

namespace {
Vec v1(double a) { return Vec::Constant(1, a); }
}  // namespace

TEST_CASE("importance weight equals the density ratio and stays under its bound", "[replay]") {
  const auto cov = CovarianceModel::identity(1);
  for (double lam : {0.1, 0.5, 0.9})
    for (double b : {0.05, 0.5, 0.95}) {
      const ReplayBehavior rb(lam, LearnerParams::from_beta(b, v1(0.0), v1(3.0)), cov);
      CHECK_THAT(rb.beta_tilde, WithinAbs(lam + (1 - lam) * b, 1e-15));
      for (double y = -8.0; y <= 11.0; y += 0.37) {
        const double q = b * oracle::normal1(y, 0, 1) + (1 - b) * oracle::normal1(y, 3, 1);
        const double beh = (1 - lam) * q + lam * oracle::normal1(y, 0, 1);
        const double w = importance_weight(rb, v1(y));
        CHECK_THAT(w, WithinAbs(q / beh, 1e-12 * (q / beh)));
        CHECK(w <= rb.weight_bound() * (1 + 1e-12));
        CHECK(w > 0.0);
      }
      // far on the new side the weight approaches the bound
      CHECK_THAT(importance_weight(rb, v1(40.0)), WithinAbs(rb.weight_bound(), 1e-9));
    }
  CHECK_THROWS_AS(ReplayBehavior(0.0, LearnerParams::from_beta(0.5, v1(0), v1(1)), cov), input_error);
  CHECK_THROWS_AS(ReplayBehavior(1.0, LearnerParams::from_beta(0.5, v1(0), v1(1)), cov), input_error);
}

TEST_CASE("weighted replay estimate is unbiased for model expectations", "[replay]") {
  const auto cov = CovarianceModel::identity(1);
  const double b = 0.3;
  const ReplayBehavior rb(0.4, LearnerParams::from_beta(b, v1(-1.0), v1(2.0)), cov);
  auto h = [](const Vec& y) {
    Vec v(3);
    v << y[0], y[0] * y[0], std::cos(y[0]);
    return v;
  };
  const auto e = weighted_estimate(rb, h, 200000, 17);
  // closed-form moments of the two-component model
  const double m1 = b * -1.0 + (1 - b) * 2.0, m2 = b * 2.0 + (1 - b) * 5.0;
  const double c = std::exp(-0.5) * (b * std::cos(-1.0) + (1 - b) * std::cos(2.0));
  const double exact[3] = {m1, m2, c};
  for (int j = 0; j < 3; ++j) CHECK(std::abs(e.estimate[j] - exact[j]) <= 4.0 * e.std_err[j]);
  CHECK(e.max_weight <= rb.weight_bound() * (1 + 1e-12));
  CHECK(e.second_moment_wh <= rb.weight_bound() * rb.weight_bound() * e.second_moment_h);

  const auto d = direct_estimate(rb.model, h, 200000, 18);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(d.value[j] - exact[j]) <= 4.0 * (*d.std_err)[j]);

  const auto again = weighted_estimate(rb, h, 200000, 17);
  CHECK(again.estimate == e.estimate);
  CHECK_THROWS_AS(weighted_estimate(rb, h, 8, 1), input_error);
}

TEST_CASE("old-sample counts follow the binomial law and the Chernoff bound", "[replay]") {
  struct Case {
    double lam, beta;
    int N;
  };
  for (const Case& k : {Case{0.1, 0.0, 8}, Case{0.2, 0.1, 4}, Case{0.05, 0.0, 32}}) {
    const auto s = old_sample_statistics(k.lam, k.beta, k.N, 100000, 5);
    CHECK_THAT(s.p_none_exact, WithinAbs(std::pow((1 - k.lam) * (1 - k.beta), k.N), 1e-15));
    CHECK(std::abs(s.p_none_emp - s.p_none_exact) <= 3.0 * s.p_none_se);
    CHECK(s.tail_emp <= s.chernoff + 3.0 * s.tail_se);
  }
  const auto lam0 = old_sample_statistics(0.0, 0.0, 16, 1000, 1);
  CHECK(lam0.p_none_exact == 1.0);
  CHECK(lam0.p_none_emp == 1.0);
  CHECK_THROWS_AS(old_sample_statistics(1.0, 0.0, 4, 1000, 1), input_error);
  CHECK_THROWS_AS(old_sample_statistics(0.1, 0.0, 4, 10, 1), input_error);
}
