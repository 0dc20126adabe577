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
}  // namespace

TEST_CASE("covariance model factors and rejects non-PD input", "[mixture]") {
  Mat s(3, 3);
  s << 2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0;
  const CovarianceModel c(s);
  const Mat rec = c.chol() * c.chol().transpose();
  CHECK((rec - s).norm() / s.norm() < 1e-10);
  Mat bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(CovarianceModel(bad), input_error);
  Mat asym(2, 2);
  asym << 1.0, 0.5, 0.1, 1.0;
  CHECK_THROWS_AS(CovarianceModel(asym), input_error);
}

TEST_CASE("logit round trip holds in beta space", "[mixture]") {
  for (double phi = -30.0; phi <= 30.0; phi += 0.25) {
    const double b = sigmoid(phi);
    CHECK(b > 0.0);
    CHECK(b < 1.0);
    CHECK_THAT(sigmoid(logit(b)), WithinAbs(b, 1e-12));
  }
}

TEST_CASE("log density examples", "[mixture]") {
  const auto cov1 = CovarianceModel::identity(1);
  CHECK_THAT(log_density(MixtureDensity::single(v1(0.0), cov1), v1(0.0)), WithinAbs(-0.5 * std::log(2 * std::numbers::pi), 1e-14));

  const double a = 1.7;
  const auto sym = MixtureDensity::two(0.5, v1(-a), v1(a), cov1);
  CHECK_THAT(log_density(sym, v1(0.0)), WithinAbs(cov1.log_normal(v1(0.0), v1(a)), 1e-14));

  Mat s(2, 2);
  s << 1.2, 0.3, 0.3, 0.7;
  const CovarianceModel cov(s);
  const auto m = MixtureDensity::two(0.3, v2(0.1, -0.4), v2(1.5, 2.0), cov);
  for (const Vec& y : {v2(0, 0), v2(3, -1), v2(-2.5, 4)}) {
    const double dense = 0.3 * oracle::normal_dense(y, v2(0.1, -0.4), s) + 0.7 * oracle::normal_dense(y, v2(1.5, 2.0), s);
    CHECK_THAT(log_density(m, y), WithinRel(std::log(dense), 1e-12));
  }
  CHECK_THROWS_AS(log_density(m, v1(0.0)), input_error);
  CHECK(std::isfinite(log_density(m, v2(1e3, -1e3))));
}

TEST_CASE("responsibilities examples and normalization", "[mixture]") {
  const auto cov1 = CovarianceModel::identity(1);
  CHECK(responsibilities(MixtureDensity::two(0.5, v1(0.0), v1(20.0), cov1), v1(0.0))[0] > 1.0 - 1e-12);
  const Vec mid = responsibilities(MixtureDensity::two(0.5, v1(0.0), v1(2.0), cov1), v1(1.0));
  CHECK_THAT(mid[0], WithinAbs(0.5, 1e-15));

  const double n0 = 0.3 * oracle::normal1(1.0, 0.0, 1.0), n1 = 0.7 * oracle::normal1(1.0, 2.0, 1.0);
  CHECK_THAT(responsibilities(MixtureDensity::two(0.3, v1(0.0), v1(2.0), cov1), v1(1.0))[0], WithinAbs(n0 / (n0 + n1), 1e-14));

  const auto key = rng::key(7, 3);
  for (int K = 1; K <= 8; ++K) {
    Vec w(K);
    std::vector<Vec> mus;
    for (int k = 0; k < K; ++k) {
      w[k] = 0.1 + rng::uniform(key, 100 * K + k);
      mus.push_back(v2(4 * rng::normal(key, 100 * K + k, 0), 4 * rng::normal(key, 100 * K + k, 1)));
    }
    w /= w.sum();
    const MixtureDensity m(w, mus, CovarianceModel::identity(2));
    for (int i = 0; i < 50; ++i) {
      const Vec y = v2(10 * rng::normal(key, 5000 + i, 0), 10 * rng::normal(key, 5000 + i, 1));
      const Vec r = responsibilities(m, y);
      CHECK(std::abs(r.sum() - 1.0) <= 1e-12);
      CHECK(r.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("separation examples", "[mixture]") {
  const auto id = CovarianceModel::identity(2);
  CHECK(separation(id, v2(1, 1), v2(1, 1)) == 0.0);
  CHECK_THAT(separation(id, v2(0, 0), v2(3, 4)), WithinAbs(5.0, 1e-14));
  CHECK_THAT(separation(CovarianceModel::diagonal(v2(4, 1)), v2(0, 0), v2(2, 0)), WithinAbs(1.0, 1e-14));
}

TEST_CASE("Bhattacharyya coefficient matches direct integration", "[mixture]") {
  const auto cov1 = CovarianceModel::identity(1);
  CHECK(bhattacharyya_equal_cov(cov1, v1(0.3), v1(0.3)) == 1.0);
  for (double delta : {0.5, 1.0, 2.0, 4.0}) {
    const double bc = oracle::simpson(
        [&](double x) { return std::sqrt(oracle::normal1(x, 0.0, 1.0) * oracle::normal1(x, delta, 1.0)); }, -15, 15 + delta);
    CHECK_THAT(bhattacharyya_equal_cov(cov1, v1(0.0), v1(delta)), WithinAbs(bc, 1e-10));
  }
  CHECK_THAT(bhattacharyya_equal_cov(cov1, v1(0.0), v1(2.0)), WithinAbs(0.6065307, 1e-7));
  CHECK_THAT(bhattacharyya_equal_cov(cov1, v1(0.0), v1(4.0)), WithinAbs(0.1353353, 1e-7));

  // d = 2 with a correlated Σ: integrate √(p₁p₂) on a tensor grid.
  Mat s(2, 2);
  s << 1.0, 0.4, 0.4, 0.9;
  const CovarianceModel cov(s);
  const Vec m1 = v2(0, 0), m2 = v2(1.2, -0.5);
  const double bc2 = oracle::simpson2(
      [&](double x, double y) {
        return std::sqrt(oracle::normal_dense(v2(x, y), m1, s) * oracle::normal_dense(v2(x, y), m2, s));
      },
      -9, 9, 400);
  CHECK_THAT(bhattacharyya_equal_cov(cov, m1, m2), WithinAbs(bc2, 1e-8));
}

TEST_CASE("sampling is deterministic and follows the weights", "[mixture]") {
  const auto cov = CovarianceModel::identity(2);
  const auto one = sample(MixtureDensity::single(v2(1, 2), cov), 100, 3);
  CHECK(std::all_of(one.labels.begin(), one.labels.end(), [](int l) { return l == 0; }));
  const auto m = MixtureDensity::two(0.5, v2(0, 0), v2(3, 0), cov);
  const auto a = sample(m, 100000, 42), b = sample(m, 100000, 42);
  CHECK(a.points == b.points);
  CHECK(a.labels == b.labels);
  const double frac = std::count(a.labels.begin(), a.labels.end(), 0) / 1e5;
  CHECK(std::abs(frac - 0.5) < 0.01);
  const auto c = sample(m, 1000, 43);
  CHECK(c.points != a.points.topRows(1000));
}

TEST_CASE("Bayes partition statistics", "[mixture]") {
  const auto cov1 = CovarianceModel::identity(1);
  const auto bp = bayes_partition_stats(v1(0.0), v1(2.0), cov1);
  CHECK_THAT(bp.gamma, WithinAbs(0.158655253931457, 1e-12));
  CHECK_THAT(bp.kappa, WithinAbs(1.0 - 2.0 * 0.158655253931457, 1e-12));
  CHECK_THAT(bp.trunc_moment[0], WithinAbs(0.241970724519143, 1e-12));

  // Monte Carlo oracles for the region mass and the truncated score.
  const auto s = sample(MixtureDensity::single(v1(0.0), cov1), 400000, 9);
  double hits = 0.0, mom = 0.0, mom2 = 0.0;
  for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
    const double y = s.points(i, 0);
    const bool in = bp.classify(v1(y)) == Region::new_region;
    hits += in;
    mom += in ? y : 0.0;
    mom2 += in ? y * y : 0.0;
  }
  const double n = 4e5, p = hits / n, mu = mom / n;
  CHECK(std::abs(p - bp.gamma) < 3.0 * std::sqrt(bp.gamma * (1 - bp.gamma) / n));
  CHECK(std::abs(mu - bp.trunc_moment[0]) < 3.0 * std::sqrt((mom2 / n - mu * mu) / n));

  const auto far = bayes_partition_stats(v1(0.0), v1(12.0), cov1);
  CHECK(far.gamma < 1e-8);
  CHECK(far.kappa > 1.0 - 1e-7);
  CHECK_THROWS_AS(bayes_partition_stats(v1(1.0), v1(1.0), cov1), input_error);
}

TEST_CASE("projection basis is orthonormal and spans the offsets", "[mixture]") {
  Mat s(4, 4);
  s.setIdentity();
  s(0, 1) = s(1, 0) = 0.3;
  s(2, 3) = s(3, 2) = -0.2;
  const CovarianceModel cov(s);
  Vec c = Vec::Zero(4), p1(4), p2(4);
  p1 << 1, 2, 0, -1;
  p2 << -0.5, 0.3, 2, 1;
  const auto b = ProjectionBasis::build(cov, c, {p1, p2});
  REQUIRE(b.rank() == 2);
  CHECK((b.basis * b.basis.transpose() - Mat::Identity(2, 2)).norm() < 1e-10);
  for (const Vec& p : {p1, p2}) {
    const Vec w = cov.whiten(p - c);
    CHECK((w - b.basis.transpose() * (b.basis * w)).norm() < 1e-10 * w.norm());
  }
}

TEST_CASE("mixture density integrates to one", "[mixture]") {
  Mat s(2, 2);
  s << 1.0, 0.3, 0.3, 0.5;
  const CovarianceModel cov(s);
  const auto m = MixtureDensity::two(0.35, v2(-1, 0.5), v2(2, 1), cov);
  EstimatorConfig cfg;
  const Estimate e = expectation(m, [](const Vec&) { return Vec::Ones(1); }, cfg, std::vector<Vec>{m.means[0], m.means[1]});
  CHECK_THAT(e.scalar(), WithinAbs(1.0, 1e-8));
  CHECK_THROWS_AS(MixtureDensity(v2(0.5, 0.6), {v2(0, 0), v2(1, 1)}, cov), input_error);
}
