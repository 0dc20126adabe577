#pragma once

#include <cmath>
#include <cstdint>
#include <functional>

#include "errors.hpp"
#include "estimators.hpp"
#include "mixture.hpp"
#include "rng.hpp"

namespace forgetlab {

/// Behavior b = (1 − λ) q_{β, m_o, m_n} + λ N(m_o, Σ), which is again q_{β̃, m_o, m_n} with β̃ = λ + (1 − λ)β.
/// The learner's old mean plays the role of the old component p_o.
struct ReplayBehavior {
  double lambda;
  LearnerParams learner;
  MixtureDensity model;
  MixtureDensity behavior;
  double beta_tilde;

  ReplayBehavior(double lam, const LearnerParams& l, const CovarianceModel& cov)
      : lambda(lam),
        learner(l),
        model(l.density(cov)),
        behavior(MixtureDensity::two(lam + (1.0 - lam) * l.beta(), l.m_old, l.m_new, cov)),
        beta_tilde(lam + (1.0 - lam) * l.beta()) {
    require(lambda > 0.0 && lambda < 1.0, "lambda must lie in (0,1)");
  }

  double weight_bound() const { return 1.0 / (1.0 - lambda); }
};

/// w(y) = q(y)/b(y) = 1/((1 − λ) + λ p_o(y)/q(y)), evaluated in log space.
inline double importance_weight(const ReplayBehavior& rb, const Vec& y) {
  const double lr = rb.model.cov.log_normal(y, rb.learner.m_old) - log_density(rb.model, y);
  return 1.0 / ((1.0 - rb.lambda) + rb.lambda * std::exp(std::min(lr, 700.0)));
}

struct WeightedEstimate {
  Vec estimate;
  Vec std_err;
  double second_moment_wh;  // mean ‖w h‖²
  double second_moment_h;   // mean ‖h‖² under b
  double max_wh_sq;
  double max_h_sq;
  double max_weight;
};

/// Samples Y ~ b and averages w(Y) h(Y); unbiased for E_q[h].
inline WeightedEstimate weighted_estimate(const ReplayBehavior& rb, const std::function<Vec(const Vec&)>& h,
                                          std::int64_t n, std::uint64_t seed) {
  require(n >= kJackknifeBatches, "need at least one sample per jackknife batch");
  const SampleSet s = sample(rb.behavior, n, seed);
  std::optional<Accumulator> acc;
  WeightedEstimate r{};
  for (std::int64_t i = 0; i < n; ++i) {
    const Vec y = s.points.row(i).transpose();
    const double w = importance_weight(rb, y);
    const Vec hv = h(y);
    if (!acc) acc.emplace(hv.size());
    const double nh = hv.squaredNorm();
    acc->add(1.0 / static_cast<double>(n), static_cast<int>(i % kJackknifeBatches), Vec(w * hv));
    r.second_moment_wh += w * w * nh / static_cast<double>(n);
    r.second_moment_h += nh / static_cast<double>(n);
    r.max_wh_sq = std::max(r.max_wh_sq, w * w * nh);
    r.max_h_sq = std::max(r.max_h_sq, nh);
    r.max_weight = std::max(r.max_weight, w);
  }
  const Estimate e = acc->estimate();
  r.estimate = e.value;
  r.std_err = *e.std_err;
  return r;
}

/// Plain Monte Carlo of E_density[h] with jackknife errors (direct-sampling oracle).
inline Estimate direct_estimate(const MixtureDensity& density, const std::function<Vec(const Vec&)>& h,
                                std::int64_t n, std::uint64_t seed) {
  require(n >= kJackknifeBatches, "need at least one sample per jackknife batch");
  const SampleSet s = sample(density, n, seed);
  std::optional<Accumulator> acc;
  for (std::int64_t i = 0; i < n; ++i) {
    const Vec hv = h(s.points.row(i).transpose());
    if (!acc) acc.emplace(hv.size());
    acc->add(1.0 / static_cast<double>(n), static_cast<int>(i % kJackknifeBatches), hv);
  }
  return acc->estimate();
}

struct OldSampleStatistics {
  double p_none_exact;  // ((1 − λ)(1 − β))^N
  double p_none_emp;
  double p_none_se;     // binomial standard error at p_none_exact
  double chernoff;      // exp(−λN/8)
  double tail_emp;      // empirical Pr(old count ≤ λN/2)
  double tail_se;
};

/// Minibatches of N behavior draws; a draw is old with probability β̃ = λ + (1 − λ)β.
inline OldSampleStatistics old_sample_statistics(double lambda, double beta, int N, std::int64_t trials,
                                                 std::uint64_t seed) {
  require(lambda >= 0.0 && lambda < 1.0, "lambda must lie in [0,1)");
  require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0,1]");
  require(N >= 1, "batch size must be positive");
  require(trials >= 1000, "trials must be at least 1000");
  const double bt = lambda + (1.0 - lambda) * beta;
  const auto key = rng::key(seed, 0x7265706c);
  std::int64_t none = 0, tail = 0;
  const double cut = lambda * N / 2.0;
  for (std::int64_t t = 0; t < trials; ++t) {
    int old = 0;
    for (int j = 0; j < N; ++j)
      old += rng::uniform(key, static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(N) + j) < bt;
    none += old == 0;
    tail += old <= cut;
  }
  OldSampleStatistics s;
  const double nt = static_cast<double>(trials);
  s.p_none_exact = std::pow((1.0 - lambda) * (1.0 - beta), N);
  s.p_none_emp = none / nt;
  s.p_none_se = std::sqrt(s.p_none_exact * (1.0 - s.p_none_exact) / nt);
  s.chernoff = std::exp(-lambda * N / 8.0);
  s.tail_emp = tail / nt;
  s.tail_se = std::sqrt(std::max(s.tail_emp * (1.0 - s.tail_emp), 1.0 / nt) / nt);
  return s;
}

}  // namespace forgetlab
