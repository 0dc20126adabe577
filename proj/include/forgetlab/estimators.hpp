#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "errors.hpp"
#include "mixture.hpp"
#include "rng.hpp"

namespace forgetlab {

enum class Method { projected_quadrature, monte_carlo };

struct EstimatorConfig {
  Method method = Method::projected_quadrature;
  int quad_order = 200;
  std::int64_t mc_samples = 100000;
  std::uint64_t seed = 0;
  double rel_tol = 1e-8;  // tolerance on the total node mass of a quadrature grid

  void validate() const {
    require(quad_order >= 16, "quad_order must be at least 16");
    require(mc_samples >= 1000, "mc_samples must be at least 1000");
    require(rel_tol > 0.0 && rel_tol <= 1e-2, "rel_tol must lie in (0, 1e-2]");
  }
  EstimatorConfig with_seed(std::uint64_t s) const {
    EstimatorConfig c = *this;
    c.seed = s;
    return c;
  }
  EstimatorConfig with_method(Method m) const {
    EstimatorConfig c = *this;
    c.method = m;
    return c;
  }
};

inline constexpr int kJackknifeBatches = 32;

// ---------------------------------------------------------------------------
// Gauss rules for symmetric Jacobi matrices (zero diagonal), normalized to unit mass.

struct GaussRule {
  std::vector<double> x, w;
};

namespace detail {

// Golub–Welsch start, Newton polish on the orthonormal recurrence, Christoffel weights.
inline GaussRule symmetric_rule(int n, const std::function<double(int)>& b) {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd off(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) off[k - 1] = b(k);
  Eigen::SelfAdjointEigenSolver<Mat> es;
  es.computeFromTridiagonal(diag, off, Eigen::EigenvaluesOnly);
  GaussRule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = es.eigenvalues()[i];
    double sum_sq = 0.0;
    for (int it = 0; it < 3; ++it) {
      // p_k orthonormal: x p_k = b_{k+1} p_{k+1} + b_k p_{k-1}
      double pm = 0.0, p = 1.0, dpm = 0.0, dp = 0.0;
      sum_sq = 1.0;
      for (int k = 0; k < n; ++k) {
        const double bk = k > 0 ? b(k) : 0.0;
        const double bk1 = b(k + 1);
        const double pn = (x * p - bk * pm) / bk1;
        const double dpn = (p + x * dp - bk * dpm) / bk1;
        pm = p;
        p = pn;
        dpm = dp;
        dp = dpn;
        if (k + 1 < n) sum_sq += p * p;
      }
      if (it < 2 && dp != 0.0) x -= p / dp;
    }
    r.x[i] = x;
    r.w[i] = 1.0 / sum_sq;
  }
  double tot = 0.0;
  for (double v : r.w) tot += v;
  for (double& v : r.w) v /= tot;
  return r;
}

}  // namespace detail

/// Probabilists' Gauss–Hermite rule: ∫ φ(x) g(x) dx ≈ Σ w_i g(x_i), Σ w_i = 1. Cached per order.
inline const GaussRule& gauss_hermite(int n) {
  static std::mutex mu;
  static std::map<int, GaussRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end())
    it = cache.emplace(n, detail::symmetric_rule(n, [](int k) { return std::sqrt(static_cast<double>(k)); })).first;
  return it->second;
}

/// Gauss–Legendre rule on [a, b] for plain dx (weights sum to b − a).
inline GaussRule gauss_legendre(int n, double a, double b) {
  static std::mutex mu;
  static std::map<int, GaussRule> cache;
  GaussRule ref;
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it == cache.end())
      it = cache
               .emplace(n, detail::symmetric_rule(n,
                                                  [](int k) {
                                                    const double kk = k;
                                                    return kk / std::sqrt(4.0 * kk * kk - 1.0);
                                                  }))
               .first;
    ref = it->second;
  }
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  for (int i = 0; i < n; ++i) {
    ref.x[i] = mid + half * ref.x[i];
    ref.w[i] *= (b - a);
  }
  return ref;
}

// ---------------------------------------------------------------------------
// Gaussian node sets in reduced whitened coordinates: y = center + L·Bᵀ·z.
// Quadrature: B spans L⁻¹(span points − center). Monte Carlo: B = I, z ~ N(0, I).

/// Halfspace {y : normal·(y − point) ≥ 0} whose boundary the quadrature should not straddle.
struct Halfspace {
  Vec normal;
  Vec point;
};

inline constexpr double kPruneWeight = 1e-32;
inline constexpr double kSplitHalfWidth = 14.0;

struct GaussianGrid {
  Vec center;
  Mat basis;  // r × d, orthonormal rows
  Mat lb;     // L·Bᵀ, d × r
  Mat z;      // r × N
  Vec w;
  Eigen::VectorXi batch;  // -1 for quadrature
  bool monte_carlo = false;

  int rank() const { return static_cast<int>(basis.rows()); }
  Eigen::Index size() const { return w.size(); }

  /// Reduced coordinates of a point that lies in the grid's affine span.
  Vec coords(const CovarianceModel& cov, const Vec& mu) const {
    const Vec u = cov.whiten(mu - center);
    Vec a = basis * u;
    if ((u - basis.transpose() * a).norm() > 1e-9 * std::max(1.0, u.norm()))
      throw method_error("point lies outside the projected quadrature span");
    return a;
  }
  Vec point(Eigen::Index i) const { return center + lb * z.col(i); }
  /// L⁻ᵀBᵀv: maps E[(z − a_m) h] to E[Σ⁻¹(Y − m) h].
  Vec to_ambient(const CovarianceModel& cov, const Vec& v) const {
    return cov.chol().transpose().triangularView<Eigen::Upper>().solve(basis.transpose() * v);
  }
  /// E[Σ⁻¹(Y−m)(Y−m)ᵀΣ⁻¹ h] from the reduced moment M = E[(z−a)(z−a)ᵀ h] and E[h].
  Mat to_ambient_second(const CovarianceModel& cov, const Mat& m, double eh) const {
    const int d = cov.dim();
    Mat inner = basis.transpose() * m * basis + eh * (Mat::Identity(d, d) - basis.transpose() * basis);
    const auto lt = cov.chol().transpose().triangularView<Eigen::Upper>();
    Mat a = lt.solve(inner);                          // L⁻ᵀ inner
    return lt.solve(a.transpose()).transpose();       // (L⁻ᵀ inner) L⁻¹
  }
};

namespace detail {

inline std::vector<std::pair<std::vector<double>, std::vector<double>>> split_axis(double z1, int order) {
  std::vector<double> xs, ws;
  auto add_piece = [&](double a, double b, int n) {
    GaussRule gl = gauss_legendre(n, a, b);
    for (int i = 0; i < n; ++i) {
      xs.push_back(gl.x[i]);
      ws.push_back(gl.w[i] * normal_pdf(gl.x[i]));
    }
  };
  const double W = kSplitHalfWidth;
  if (z1 <= -W || z1 >= W) {
    add_piece(-W, W, order);
  } else {
    const int n_half = std::max(order / 2, 16);
    add_piece(-W, z1, n_half);
    add_piece(z1, W, n_half);
  }
  return {{xs, ws}};
}

}  // namespace detail

inline GaussianGrid quadrature_grid(const CovarianceModel& cov, const Vec& center, const std::vector<Vec>& span,
                                    int order, const Halfspace* split = nullptr) {
  Vec lead;
  if (split) lead = cov.sigma() * split->normal;
  const ProjectionBasis pb = ProjectionBasis::build(cov, center, span, lead);
  const int r = pb.rank();
  GaussianGrid g;
  g.center = center;
  g.basis = pb.basis;
  g.lb = cov.chol() * pb.basis.transpose();
  if (r == 0) {
    g.z.resize(0, 1);
    g.w = Vec::Ones(1);
    g.batch = Eigen::VectorXi::Constant(1, -1);
    return g;
  }
  const GaussRule& gh = gauss_hermite(order);
  std::vector<std::vector<double>> ax(r, gh.x), aw(r, gh.w);
  if (split) {
    const Vec u = cov.chol().transpose() * split->normal;
    const double z1 = -split->normal.dot(center - split->point) / u.norm();
    auto piece = detail::split_axis(z1, order);
    ax[0] = piece[0].first;
    aw[0] = piece[0].second;
  }
  std::vector<double> zs, ws;
  std::vector<int> idx(r, 0);
  while (true) {
    double w = 1.0;
    for (int j = 0; j < r; ++j) w *= aw[j][idx[j]];
    if (w > kPruneWeight) {
      for (int j = 0; j < r; ++j) zs.push_back(ax[j][idx[j]]);
      ws.push_back(w);
    }
    int j = r - 1;
    while (j >= 0 && ++idx[j] == static_cast<int>(ax[j].size())) idx[j--] = 0;
    if (j < 0) break;
  }
  const Eigen::Index n = static_cast<Eigen::Index>(ws.size());
  g.z = Eigen::Map<const Mat>(zs.data(), r, n);
  g.w = Eigen::Map<const Vec>(ws.data(), n);
  g.batch = Eigen::VectorXi::Constant(n, -1);
  return g;
}

inline GaussianGrid monte_carlo_grid(const CovarianceModel& cov, const Vec& center, std::int64_t n,
                                     std::uint64_t seed, std::uint64_t stream) {
  require(n >= 1, "sample size must be positive");
  const int d = cov.dim();
  GaussianGrid g;
  g.monte_carlo = true;
  g.center = center;
  g.basis = Mat::Identity(d, d);
  g.lb = cov.chol();
  g.z.resize(d, n);
  g.w = Vec::Constant(n, 1.0 / static_cast<double>(n));
  g.batch.resize(n);
  const auto key = rng::key(seed, stream);
  for (std::int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) g.z(j, i) = rng::normal(key, static_cast<std::uint64_t>(i), j);
    g.batch[i] = static_cast<int>(i % kJackknifeBatches);
  }
  return g;
}

/// Nodes for E_{N(center, Σ)}[h] where h depends on y only through the affine span of `span` ∪ {center}.
inline GaussianGrid gaussian_grid(const CovarianceModel& cov, const Vec& center, const std::vector<Vec>& span,
                                  const EstimatorConfig& cfg, const Halfspace* split = nullptr,
                                  std::uint64_t stream = 0) {
  cfg.validate();
  if (cfg.method == Method::monte_carlo) return monte_carlo_grid(cov, center, cfg.mc_samples, cfg.seed, stream);
  GaussianGrid g = quadrature_grid(cov, center, span, cfg.quad_order, split);
  if (std::abs(g.w.sum() - 1.0) > cfg.rel_tol) throw numeric_error("quadrature grid lost mass beyond rel_tol");
  return g;
}

/// Component log terms log w_k − ½‖z − a_k‖² of a mixture on a grid (shared Gaussian factors dropped).
struct ReducedMixture {
  Vec log_w;
  Mat a;  // r × K

  ReducedMixture(const MixtureDensity& m, const GaussianGrid& g) : log_w(m.size()), a(g.rank(), m.size()) {
    for (int k = 0; k < m.size(); ++k) {
      log_w[k] = m.weights[k] > 0.0 ? std::log(m.weights[k]) : -kInf;
      a.col(k) = g.coords(m.cov, m.means[k]);
    }
  }
  int size() const { return static_cast<int>(log_w.size()); }
  double term(const GaussianGrid& g, Eigen::Index i, int k) const {
    return log_w[k] - 0.5 * (g.z.col(i) - a.col(k)).squaredNorm();
  }
  double log_value(const GaussianGrid& g, Eigen::Index i) const {
    double buf[64];
    const int K = size();
    for (int k = 0; k < K; ++k) buf[k] = term(g, i, k);
    return log_sum_exp(buf, K);
  }
  /// Responsibilities written into out (length K); returns the log value.
  double resp(const GaussianGrid& g, Eigen::Index i, double* out) const {
    const int K = size();
    for (int k = 0; k < K; ++k) out[k] = term(g, i, k);
    const double lz = log_sum_exp(out, K);
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += (out[k] = std::exp(out[k] - lz));
    for (int k = 0; k < K; ++k) out[k] /= s;
    return lz;
  }
};

// ---------------------------------------------------------------------------
// Estimates with jackknife standard errors.

struct Estimate {
  Vec value;
  std::optional<Vec> std_err;
  double scalar() const { return value[0]; }
  double se() const { return std_err ? (*std_err)[0] : 0.0; }
};

/// Jackknife over batches of a smooth function of batch-averaged quantities (rows = quantities).
inline Vec jackknife_se(const Mat& batch_sums, const Vec& batch_mass,
                        const std::function<Vec(const Vec& means)>& combine) {
  const int B = static_cast<int>(batch_sums.cols());
  const Vec tot = batch_sums.rowwise().sum();
  const double mass = batch_mass.sum();
  std::vector<Vec> loo(B);
  Vec mean_loo;
  for (int b = 0; b < B; ++b) {
    loo[b] = combine((tot - batch_sums.col(b)) / (mass - batch_mass[b]));
    mean_loo = b == 0 ? loo[b] : Vec(mean_loo + loo[b]);
  }
  mean_loo /= B;
  Vec var = Vec::Zero(mean_loo.size());
  for (int b = 0; b < B; ++b) var += (loo[b] - mean_loo).cwiseAbs2();
  return (var * (B - 1.0) / B).cwiseSqrt();
}

/// Weighted sums with per-batch partials for Monte Carlo error bars.
class Accumulator {
 public:
  explicit Accumulator(Eigen::Index dim) : sum_(Vec::Zero(dim)), bsum_(Mat::Zero(dim, kJackknifeBatches)),
                                           bmass_(Vec::Zero(kJackknifeBatches)) {}

  template <class V>
  void add(double w, int batch, const V& v) {
    sum_ += w * v;
    if (batch >= 0) {
      mc_ = true;
      bsum_.col(batch) += w * v;
      bmass_[batch] += w;
    }
  }
  void add(double w, int batch, double v) { add(w, batch, Vec::Constant(1, v)); }

  const Vec& sum() const { return sum_; }
  bool monte_carlo() const { return mc_; }
  const Mat& batch_sums() const { return bsum_; }
  const Vec& batch_mass() const { return bmass_; }

  Estimate estimate() const {
    Estimate e{sum_, std::nullopt};
    if (mc_) e.std_err = jackknife_se(bsum_, bmass_, [](const Vec& m) { return m; });
    return e;
  }

 private:
  Vec sum_;
  Mat bsum_;
  Vec bmass_;
  bool mc_ = false;
};

/// Ambient nodes of a whole mixture (component grids concatenated with weights w_k).
struct NodeSet {
  Mat y;  // d × N
  Vec w;
  Eigen::VectorXi batch;
  Eigen::VectorXi comp;
  Eigen::Index size() const { return w.size(); }
};

inline NodeSet nodes_for(const MixtureDensity& density, const std::vector<Vec>& span, const EstimatorConfig& cfg,
                         std::uint64_t stream = 0) {
  std::vector<Vec> pts = span;
  for (const auto& m : density.means) pts.push_back(m);
  NodeSet ns;
  ns.y.resize(density.dim(), 0);
  std::vector<GaussianGrid> grids;
  Eigen::Index total = 0;
  for (int k = 0; k < density.size(); ++k) {
    if (density.weights[k] <= 0.0) continue;
    grids.push_back(gaussian_grid(density.cov, density.means[k], pts, cfg, nullptr, stream * 131 + k));
    total += grids.back().size();
  }
  ns.y.resize(density.dim(), total);
  ns.w.resize(total);
  ns.batch.resize(total);
  ns.comp.resize(total);
  Eigen::Index c = 0;
  int gi = 0;
  for (int k = 0; k < density.size(); ++k) {
    if (density.weights[k] <= 0.0) continue;
    const GaussianGrid& g = grids[gi++];
    for (Eigen::Index i = 0; i < g.size(); ++i, ++c) {
      ns.y.col(c) = g.point(i);
      ns.w[c] = density.weights[k] * g.w[i];
      ns.batch[c] = g.batch[i];
      ns.comp[c] = k;
    }
  }
  return ns;
}

template <class F>
Estimate integrate(const NodeSet& ns, F&& h) {
  std::optional<Accumulator> acc;
  for (Eigen::Index i = 0; i < ns.size(); ++i) {
    Vec v;
    if constexpr (std::is_convertible_v<decltype(h(ns.y.col(i))), double>) {
      v = Vec::Constant(1, static_cast<double>(h(ns.y.col(i))));
    } else {
      v = h(ns.y.col(i));
    }
    if (!v.allFinite()) throw numeric_error("non-finite integrand value");
    if (!acc) acc.emplace(v.size());
    acc->add(ns.w[i], ns.batch[i], v);
  }
  return acc->estimate();
}

/// E_density[h]. Quadrature needs `span` (the caller's assertion that h factors through those points' span).
inline Estimate expectation(const MixtureDensity& density, const std::function<Vec(const Vec&)>& h,
                            const EstimatorConfig& cfg, const std::optional<std::vector<Vec>>& span = std::nullopt) {
  cfg.validate();
  if (cfg.method == Method::projected_quadrature && !span)
    throw method_error("projected quadrature requested for an integrand with no declared projection");
  const NodeSet ns = nodes_for(density, span ? *span : std::vector<Vec>{}, cfg);
  return integrate(ns, [&](const Vec& y) { return h(y); });
}

// ---------------------------------------------------------------------------
// f-divergence generators, normalized so f(1) = f'(1) = 0.

class FGenerator {
 public:
  enum class Kind { kl, js, triangular, hellinger, pearson, neyman, alpha };

  static FGenerator kl() { return FGenerator(Kind::kl); }
  static FGenerator js() { return FGenerator(Kind::js); }
  static FGenerator triangular() { return FGenerator(Kind::triangular); }
  static FGenerator hellinger() { return FGenerator(Kind::hellinger); }
  static FGenerator pearson() { return FGenerator(Kind::pearson); }
  static FGenerator neyman() { return FGenerator(Kind::neyman); }
  static FGenerator alpha(double a) {
    require(a >= -2.0 && a <= 3.0 && a != 0.0 && a != 1.0, "alpha parameter must lie in [-2,3] without 0 and 1");
    FGenerator g(Kind::alpha);
    g.a_ = a;
    return g;
  }
  static FGenerator from_name(const std::string& name, double a = 0.5) {
    if (name == "kl") return kl();
    if (name == "js") return js();
    if (name == "triangular") return triangular();
    if (name == "hellinger") return hellinger();
    if (name == "pearson") return pearson();
    if (name == "neyman") return neyman();
    if (name == "alpha") return alpha(a);
    throw input_error("unknown f-generator '" + name + "'");
  }

  /// f◇(t) = t f(1/t).
  FGenerator adjoint() const {
    FGenerator g = *this;
    g.adjoint_ = !adjoint_;
    return g;
  }

  Kind kind() const { return kind_; }
  bool is_adjoint() const { return adjoint_; }
  double param() const { return a_; }
  std::string name() const {
    static const char* names[] = {"kl", "js", "triangular", "hellinger", "pearson", "neyman", "alpha"};
    std::string s = names[static_cast<int>(kind_)];
    if (kind_ == Kind::alpha) s += "(" + std::to_string(a_) + ")";
    return adjoint_ ? s + "_adjoint" : s;
  }

  double f(double t) const { return adjoint_ ? t * base_f(1.0 / t) : base_f(t); }
  double f1(double t) const { return adjoint_ ? base_f(1.0 / t) - base_f1(1.0 / t) / t : base_f1(t); }
  double f2(double t) const { return adjoint_ ? base_f2(1.0 / t) / (t * t * t) : base_f2(t); }
  double kappa(double t) const { return t * f2(t); }

  double kappa_sup() const {
    switch (kind_) {
      case Kind::kl: return adjoint_ ? kInf : 1.0;
      case Kind::js: return 1.0;
      case Kind::triangular: return 32.0 / 27.0;
      default: return kInf;
    }
  }

 private:
  explicit FGenerator(Kind k) : kind_(k) {}

  double base_f(double t) const {
    switch (kind_) {
      case Kind::kl: return t * std::log(t) - t + 1.0;
      case Kind::js: return t * std::log(t) - (t + 1.0) * std::log((t + 1.0) / 2.0);
      case Kind::triangular: return (t - 1.0) * (t - 1.0) / (t + 1.0);
      case Kind::hellinger: {
        const double s = std::sqrt(t) - 1.0;
        return s * s;
      }
      case Kind::pearson: return (t - 1.0) * (t - 1.0);
      case Kind::neyman: return (1.0 - t) * (1.0 - t) / t;
      case Kind::alpha: return (std::pow(t, a_) - a_ * (t - 1.0) - 1.0) / (a_ * (a_ - 1.0));
    }
    return 0.0;
  }
  double base_f1(double t) const {
    switch (kind_) {
      case Kind::kl: return std::log(t);
      case Kind::js: return std::log(2.0 * t / (t + 1.0));
      case Kind::triangular: return (t - 1.0) * (t + 3.0) / ((t + 1.0) * (t + 1.0));
      case Kind::hellinger: return 1.0 - 1.0 / std::sqrt(t);
      case Kind::pearson: return 2.0 * (t - 1.0);
      case Kind::neyman: return 1.0 - 1.0 / (t * t);
      case Kind::alpha: return (std::pow(t, a_ - 1.0) - 1.0) / (a_ - 1.0);
    }
    return 0.0;
  }
  double base_f2(double t) const {
    switch (kind_) {
      case Kind::kl: return 1.0 / t;
      case Kind::js: return 1.0 / (t * (t + 1.0));
      case Kind::triangular: return 8.0 / ((t + 1.0) * (t + 1.0) * (t + 1.0));
      case Kind::hellinger: return 0.5 / (t * std::sqrt(t));
      case Kind::pearson: return 2.0;
      case Kind::neyman: return 2.0 / (t * t * t);
      case Kind::alpha: return std::pow(t, a_ - 2.0);
    }
    return 0.0;
  }

  Kind kind_;
  double a_ = 0.0;
  bool adjoint_ = false;
};

inline std::vector<FGenerator> all_generators() {
  return {FGenerator::kl(),      FGenerator::js(),     FGenerator::triangular(), FGenerator::hellinger(),
          FGenerator::pearson(), FGenerator::neyman(), FGenerator::alpha(0.5)};
}

/// Exponentiated log-ratio clipped to the finite double range.
inline double ratio_from_log(double lr) { return std::exp(std::clamp(lr, -700.0, 700.0)); }

/// D_gen(q‖p) = E_p[f(q/p)]; KL(q‖p) for gen = kl.
/// Calls visit(grid, i, weight, batch, log q, log p) over nodes of p's components, span = all means.
template <class F>
void visit_pair(const MixtureDensity& q, const MixtureDensity& p, const EstimatorConfig& cfg, F&& visit) {
  require(q.dim() == p.dim(), "densities must share a dimension");
  std::vector<Vec> span = q.means;
  span.insert(span.end(), p.means.begin(), p.means.end());
  for (int k = 0; k < p.size(); ++k) {
    if (p.weights[k] <= 0.0) continue;
    const GaussianGrid g = gaussian_grid(p.cov, p.means[k], span, cfg, nullptr, 7 + k);
    const ReducedMixture rq(q, g), rp(p, g);
    for (Eigen::Index i = 0; i < g.size(); ++i)
      visit(g, i, p.weights[k] * g.w[i], g.batch[i], rq.log_value(g, i), rp.log_value(g, i));
  }
}

inline Estimate divergence_estimate(const MixtureDensity& q, const MixtureDensity& p, const FGenerator& gen,
                                    const EstimatorConfig& cfg) {
  Accumulator acc(1);
  visit_pair(q, p, cfg, [&](const GaussianGrid&, Eigen::Index, double w, int b, double lq, double lp) {
    const double v = gen.f(ratio_from_log(lq - lp));
    if (!std::isfinite(v)) throw numeric_error("non-finite divergence integrand");
    acc.add(w, b, v);
  });
  return acc.estimate();
}

/// KL(P ‖ Q) = E_P[log P − log Q], integrated directly in log space under P.
inline Estimate kl_estimate(const MixtureDensity& P, const MixtureDensity& Q, const EstimatorConfig& cfg) {
  Accumulator acc(1);
  visit_pair(Q, P, cfg, [&](const GaussianGrid&, Eigen::Index, double w, int b, double lq, double lp) {
    acc.add(w, b, lp - lq);
  });
  return acc.estimate();
}

inline double kl_divergence(const MixtureDensity& P, const MixtureDensity& Q, const EstimatorConfig& cfg) {
  return kl_estimate(P, Q, cfg).scalar();
}

inline double divergence(const MixtureDensity& q, const MixtureDensity& p, const FGenerator& gen,
                         const EstimatorConfig& cfg) {
  return divergence_estimate(q, p, gen, cfg).scalar();
}

// ---------------------------------------------------------------------------
// Finite differences.

struct FdResult {
  Vec grad;
  Mat hess;
};

inline double checked(double v) {
  if (!std::isfinite(v)) throw numeric_error("finite-difference evaluation is not finite");
  return v;
}

inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& theta, double h = 1e-4) {
  require(h >= 1e-6 && h <= 1e-3, "finite-difference step must lie in [1e-6, 1e-3]");
  Vec g(theta.size());
  Vec t = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    t[i] = theta[i] + h;
    const double fp = checked(f(t));
    t[i] = theta[i] - h;
    const double fm = checked(f(t));
    t[i] = theta[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Central-difference Jacobian of a vector map (rows = outputs); symmetrize for Hessians of a gradient.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& g, const Vec& theta, double h = 1e-4) {
  require(h >= 1e-6 && h <= 1e-3, "finite-difference step must lie in [1e-6, 1e-3]");
  Mat J;
  Vec t = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    t[i] = theta[i] + h;
    const Vec gp = g(t);
    t[i] = theta[i] - h;
    const Vec gm = g(t);
    t[i] = theta[i];
    if (!gp.allFinite() || !gm.allFinite()) throw numeric_error("finite-difference evaluation is not finite");
    if (i == 0) J.resize(gp.size(), theta.size());
    J.col(i) = (gp - gm) / (2.0 * h);
  }
  return J;
}

inline FdResult finite_difference_oracle(const std::function<double(const Vec&)>& f, const Vec& theta,
                                         double h = 1e-4) {
  require(h >= 1e-6 && h <= 1e-3, "finite-difference step must lie in [1e-6, 1e-3]");
  const Eigen::Index n = theta.size();
  FdResult r{fd_gradient(f, theta, h), Mat(n, n)};
  const double f0 = checked(f(theta));
  Vec t = theta;
  for (Eigen::Index i = 0; i < n; ++i) {
    t[i] = theta[i] + h;
    const double fp = checked(f(t));
    t[i] = theta[i] - h;
    const double fm = checked(f(t));
    t[i] = theta[i];
    r.hess(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
    for (Eigen::Index j = 0; j < i; ++j) {
      auto at = [&](double si, double sj) {
        Vec u = theta;
        u[i] += si * h;
        u[j] += sj * h;
        return checked(f(u));
      };
      const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h * h);
      r.hess(i, j) = r.hess(j, i) = v;
    }
  }
  r.hess = 0.5 * (r.hess + r.hess.transpose()).eval();
  return r;
}

}  // namespace forgetlab
