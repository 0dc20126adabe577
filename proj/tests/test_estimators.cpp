#include "catch_amalgamated.hpp"

#include "forgetlab.hpp"
#include "oracles.hpp"

using namespace forgetlab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}
Vec v1(double a) { return Vec::Constant(1, a); }

std::vector<FGenerator> generators_with_adjoints() {
  std::vector<FGenerator> g = all_generators();
  for (double a : {-1.5, 2.0, 3.0}) g.push_back(FGenerator::alpha(a));
  const std::size_t n = g.size();
  for (std::size_t i = 0; i < n; ++i) g.push_back(g[i].adjoint());
  return g;
}
}  // namespace

TEST_CASE("estimator config validation", "[estimators]") {
  EstimatorConfig c;
  CHECK_NOTHROW(c.validate());
  c.quad_order = 8;
  CHECK_THROWS_AS(c.validate(), input_error);
  c = EstimatorConfig{};
  c.mc_samples = 10;
  CHECK_THROWS_AS(c.validate(), input_error);
  c = EstimatorConfig{};
  c.rel_tol = 0.5;
  CHECK_THROWS_AS(c.validate(), input_error);
}

TEST_CASE("quadrature rules integrate polynomials exactly", "[estimators]") {
  const GaussRule gl = gauss_legendre(20, -1.0, 2.0);
  double s = 0.0;
  for (std::size_t i = 0; i < gl.x.size(); ++i) s += gl.w[i] * std::pow(gl.x[i], 9);
  CHECK_THAT(s, WithinRel((std::pow(2.0, 10) - 1.0) / 10.0, 1e-13));
  // Probabilists' weight: E[Z^4] = 3 and E[Z^6] = 15 for Z ~ N(0,1).
  const GaussRule& gh = gauss_hermite(40);
  double m4 = 0.0, m6 = 0.0, m0 = 0.0;
  for (std::size_t i = 0; i < gh.x.size(); ++i) {
    m0 += gh.w[i];
    m4 += gh.w[i] * std::pow(gh.x[i], 4);
    m6 += gh.w[i] * std::pow(gh.x[i], 6);
  }
  CHECK_THAT(m0, WithinAbs(1.0, 1e-13));
  CHECK_THAT(m4, WithinRel(3.0, 1e-12));
  CHECK_THAT(m6, WithinRel(15.0, 1e-12));
}

TEST_CASE("f-generators are normalized, convex and report curvature", "[estimators]") {
  for (const auto& g : generators_with_adjoints()) {
    INFO(g.name());
    CHECK(std::abs(g.f(1.0)) <= 1e-12);
    CHECK(std::abs(g.f1(1.0)) <= 1e-12);
    for (int i = -600; i <= 600; i += 5) {
      const double t = std::pow(10.0, i / 100.0);
      CHECK(g.f2(t) >= 0.0);
      CHECK(std::abs(g.kappa(t) - t * g.f2(t)) <= 1e-12 * std::max(1.0, std::abs(g.kappa(t))));
      // Derivatives agree with central differences of f.
      if (i % 50 == 0) {
        const double h = 1e-5 * t;
        CHECK_THAT((g.f(t + h) - g.f(t - h)) / (2 * h), WithinAbs(g.f1(t), 1e-5 * std::max(1.0, std::abs(g.f1(t)))));
      }
    }
  }
  CHECK_THROWS_AS(FGenerator::alpha(1.0), input_error);
  CHECK_THROWS_AS(FGenerator::alpha(4.0), input_error);
  CHECK_THROWS_AS(FGenerator::from_name("tv"), input_error);
}

TEST_CASE("curvature suprema on the log grid", "[estimators]") {
  double js = 0.0, tri = 0.0;
  for (int i = -600; i <= 600; ++i) {
    const double t = std::pow(10.0, i / 100.0);
    js = std::max(js, FGenerator::js().kappa(t));
    tri = std::max(tri, FGenerator::triangular().kappa(t));
    CHECK_THAT(FGenerator::kl().kappa(t), WithinAbs(1.0, 1e-15));
  }
  CHECK(js <= 1.0 + 1e-9);
  CHECK(tri <= 32.0 / 27.0 + 1e-9);
  CHECK(tri > 32.0 / 27.0 - 1e-4);  // attained at t = 1/2
}

TEST_CASE("divergence examples", "[estimators]") {
  EstimatorConfig cfg;
  const auto cov = CovarianceModel::identity(2);
  const auto q = MixtureDensity::two(0.3, v2(0, 0), v2(2, 1), cov);
  for (const auto& g : all_generators()) CHECK(std::abs(divergence(q, q, g, cfg)) <= 1e-9);

  const Vec v = v2(1.3, -0.7);
  CHECK_THAT(kl_divergence(MixtureDensity::single(v, cov), MixtureDensity::single(v2(0, 0), cov), cfg),
             WithinAbs(0.5 * v.squaredNorm(), 1e-10));
  CHECK_THAT(divergence(MixtureDensity::single(v, cov), MixtureDensity::single(v2(0, 0), cov), FGenerator::kl(), cfg),
             WithinAbs(0.5 * v.squaredNorm(), 1e-10));

  const TargetSpec spec = TargetSpec::separated(0.4, 3.0, 2);
  CHECK(std::abs(kl_divergence(spec.model(spec.alpha), spec.density(), cfg)) <= 1e-9);
}

TEST_CASE("KL between 1D mixtures matches direct integration", "[estimators]") {
  EstimatorConfig cfg;
  const auto cov = CovarianceModel::identity(1);
  const auto P = MixtureDensity::two(0.3, v1(0.0), v1(2.5), cov);
  const auto Q = MixtureDensity::two(0.6, v1(-0.5), v1(1.5), cov);
  auto dens = [](double x, double w, double a, double b) { return w * oracle::normal1(x, a, 1) + (1 - w) * oracle::normal1(x, b, 1); };
  const double ref = oracle::simpson(
      [&](double x) {
        const double p = dens(x, 0.3, 0.0, 2.5), q = dens(x, 0.6, -0.5, 1.5);
        return p > 0 ? p * std::log(p / q) : 0.0;
      },
      -20, 22, 40000);
  CHECK_THAT(kl_divergence(P, Q, cfg), WithinAbs(ref, 1e-9));
}

TEST_CASE("divergences are nonnegative on random pairs", "[estimators]") {
  EstimatorConfig cfg;
  cfg.quad_order = 80;
  const auto key = rng::key(11, 2);
  Mat s(2, 2);
  s << 1.0, -0.3, -0.3, 0.6;
  const CovarianceModel cov(s);
  for (int i = 0; i < 8; ++i) {
    auto rv = [&](int j) { return v2(2 * rng::normal(key, 10 * i + j, 0), 2 * rng::normal(key, 10 * i + j, 1)); };
    const auto q = MixtureDensity::two(0.1 + 0.8 * rng::uniform(key, 10 * i), rv(1), rv(2), cov);
    const auto p = MixtureDensity::two(0.1 + 0.8 * rng::uniform(key, 10 * i + 5), rv(3), rv(4), cov);
    for (const auto& g : all_generators()) CHECK(divergence(q, p, g, cfg) >= -1e-9);
  }
}

TEST_CASE("projected quadrature and Monte Carlo agree", "[estimators]") {
  EstimatorConfig quad;
  quad.quad_order = 100;
  EstimatorConfig mc = quad.with_method(Method::monte_carlo);
  mc.mc_samples = 20000;
  const auto key = rng::key(5, 8);
  int outside = 0;
  for (int i = 0; i < 50; ++i) {
    const int d = 1 + i % 3;
    auto rv = [&](int j) {
      Vec v(d);
      for (int k = 0; k < d; ++k) v[k] = 1.5 * rng::normal(key, 10 * i + j, k);
      return v;
    };
    const auto cov = CovarianceModel::identity(d);
    const auto P = MixtureDensity::two(0.2 + 0.6 * rng::uniform(key, 10 * i), rv(1), rv(2), cov);
    const auto Q = MixtureDensity::two(0.2 + 0.6 * rng::uniform(key, 10 * i + 5), rv(3), rv(4), cov);
    const double exact = kl_estimate(P, Q, quad).scalar();
    const Estimate e = kl_estimate(P, Q, mc.with_seed(100 + i));
    REQUIRE(e.std_err.has_value());
    outside += std::abs(e.scalar() - exact) > 4.0 * e.se();
  }
  CHECK(outside == 0);
}

TEST_CASE("expectation examples", "[estimators]") {
  EstimatorConfig cfg;
  Mat s(3, 3);
  s << 1.0, 0.2, 0.0, 0.2, 2.0, 0.3, 0.0, 0.3, 0.5;
  const CovarianceModel cov(s);
  Vec mu(3);
  mu << 0.5, -1.0, 2.0;
  const auto g = MixtureDensity::single(mu, cov);
  const Estimate one = expectation(g, [](const Vec&) { return Vec::Ones(1); }, cfg, std::vector<Vec>{});
  CHECK_THAT(one.scalar(), WithinAbs(1.0, 1e-12));
  CHECK_FALSE(one.std_err.has_value());

  const Estimate mean_mc = expectation(g, [](const Vec& y) { return y; }, cfg.with_method(Method::monte_carlo));
  REQUIRE(mean_mc.std_err.has_value());
  for (int j = 0; j < 3; ++j) CHECK(std::abs(mean_mc.value[j] - mu[j]) < 4.0 * (*mean_mc.std_err)[j]);

  CHECK_THROWS_AS(expectation(g, [](const Vec& y) { return y; }, cfg), method_error);

  // Old responsibility under p_n at β = 0.5, δ = 4: quadrature and Monte Carlo agree and respect the leakage bound.
  const TargetSpec spec = TargetSpec::separated(0.5, 4.0, 1);
  const auto q = spec.model(0.5);
  auto r_old = [&](const Vec& y) { return Vec::Constant(1, responsibilities(q, y)[0]); };
  const double quadv = expectation(spec.new_component(), r_old, cfg, std::vector<Vec>{spec.mu_old}).scalar();
  const Estimate mc = expectation(spec.new_component(), r_old, cfg.with_method(Method::monte_carlo));
  CHECK(std::abs(quadv - mc.scalar()) < 4.0 * mc.se());
  CHECK(quadv <= 0.5 * std::exp(-2.0));
}

TEST_CASE("Monte Carlo estimates are reproducible from the seed", "[estimators]") {
  EstimatorConfig mc = EstimatorConfig{}.with_method(Method::monte_carlo).with_seed(77);
  const auto P = MixtureDensity::two(0.3, v1(0.0), v1(2.0), CovarianceModel::identity(1));
  const auto Q = MixtureDensity::two(0.5, v1(0.0), v1(2.0), CovarianceModel::identity(1));
  CHECK(kl_estimate(P, Q, mc).scalar() == kl_estimate(P, Q, mc).scalar());
  CHECK(kl_estimate(P, Q, mc).scalar() != kl_estimate(P, Q, mc.with_seed(78)).scalar());
}

TEST_CASE("finite-difference oracle", "[estimators]") {
  Vec th(3);
  th << 0.3, -1.2, 2.0;
  const FdResult q = finite_difference_oracle([](const Vec& t) { return 0.5 * t.squaredNorm(); }, th);
  CHECK((q.grad - th).norm() < 1e-6);
  CHECK((q.hess - Mat::Identity(3, 3)).norm() < 1e-6);

  auto f = [](const Vec& t) { return std::sin(t[0]) * std::exp(0.5 * t[1]) + t[2] * t[2] * t[0]; };
  Vec g(3);
  g << std::cos(th[0]) * std::exp(0.5 * th[1]) + th[2] * th[2], 0.5 * std::sin(th[0]) * std::exp(0.5 * th[1]),
      2 * th[2] * th[0];
  for (double h : {1e-3, 1e-4}) {
    const Vec fd = fd_gradient(f, th, h);
    CHECK((fd - g).norm() / g.norm() <= 10 * h * h + 1e-10);
  }
  CHECK_THROWS_AS(fd_gradient(f, th, 1e-2), input_error);
  CHECK_THROWS_AS(fd_gradient([](const Vec&) { return std::nan(""); }, th), numeric_error);

  EstimatorConfig cfg;
  const TargetSpec spec = TargetSpec::separated(0.3, 2.5, 1);
  Vec opt(2);
  opt << logit(spec.alpha), spec.mu_new[0];
  const Vec g0 = fd_gradient([&](const Vec& t) { return reverse_kl_theta_loss(t, spec.mu_old, spec.density(), cfg); }, opt);
  CHECK(g0.norm() < 1e-6);

  const TargetSpec s4 = TargetSpec::separated(0.5, 4.0, 1);
  const SftKernel k(s4, cfg);
  const Vec fd = fd_gradient([&](const Vec& t) { return k(sigmoid(t[0])).loss; }, v1(0.0));
  CHECK_THAT(fd[0], WithinAbs(k(0.5).dphi, 1e-6));
}
