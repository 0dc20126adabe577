#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "checks.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace forgetlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) out.push_back(trim(item));
  return out;
}

/// Flat `key = value` file; `#` starts a comment.
class Config {
 public:
  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read config '" + path + "'");
    Config c;
    std::string line;
    for (int no = 1; std::getline(in, line); ++no) {
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      require(eq != std::string::npos, "line " + std::to_string(no) + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      require(!key.empty(), "line " + std::to_string(no) + ": empty key");
      require(!c.values_.count(key), "config." + key + ": duplicate key");
      c.values_[key] = value;
    }
    return c;
  }

  bool has(const std::string& k) const { return values_.count(k) > 0; }

  void allow_only(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : values_) require(allowed.count(k) > 0, "config." + k + ": unknown key");
  }

  std::string str(const std::string& k, const std::string& def = {}) const {
    const auto it = values_.find(k);
    if (it == values_.end()) {
      require(!def.empty(), "config." + k + ": required key missing");
      return def;
    }
    return it->second;
  }

  std::string choice(const std::string& k, const std::vector<std::string>& options, const std::string& def) const {
    const std::string v = str(k, def);
    if (std::find(options.begin(), options.end(), v) == options.end()) {
      std::string all;
      for (const auto& o : options) all += (all.empty() ? "" : "|") + o;
      throw input_error("config." + k + ": expected one of " + all + ", got '" + v + "'");
    }
    return v;
  }

  double num(const std::string& k, std::optional<double> def = std::nullopt) const {
    if (!has(k)) {
      require(def.has_value(), "config." + k + ": required key missing");
      return *def;
    }
    return parse_double(k, values_.at(k));
  }

  /// Number constrained to an interval; `open_*` excludes the endpoint.
  double num_in(const std::string& k, double lo, double hi, bool open_lo, bool open_hi,
                std::optional<double> def = std::nullopt) const {
    const double v = num(k, def);
    const bool ok = (open_lo ? v > lo : v >= lo) && (open_hi ? v < hi : v <= hi);
    if (!ok) {
      std::ostringstream os;
      os << "config." << k << ": must lie in " << (open_lo ? "(" : "[") << lo << ", " << hi << (open_hi ? ")" : "]")
         << ", got " << (values_.count(k) ? values_.at(k) : std::to_string(v));
      throw input_error(os.str());
    }
    return v;
  }

  long long integer(const std::string& k, long long lo, long long hi, std::optional<long long> def = std::nullopt) const {
    long long v;
    if (!has(k)) {
      require(def.has_value(), "config." + k + ": required key missing");
      v = *def;
    } else {
      const std::string& s = values_.at(k);
      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      require(r.ec == std::errc() && r.ptr == s.data() + s.size(), "config." + k + ": expected an integer, got '" + s + "'");
    }
    require(v >= lo && v <= hi,
            "config." + k + ": must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " + std::to_string(v));
    return v;
  }

  Vec vec(const std::string& k, std::optional<Vec> def = std::nullopt) const {
    if (!has(k)) {
      require(def.has_value(), "config." + k + ": required key missing");
      return *def;
    }
    return parse_vec(k, values_.at(k));
  }

  /// `a,b; c,d; ...` rows of equal length.
  std::vector<Vec> vec_list(const std::string& k) const {
    std::vector<Vec> out;
    for (const auto& row : split(str(k), ';')) out.push_back(parse_vec(k, row));
    require(!out.empty(), "config." + k + ": empty list");
    for (const auto& v : out) require(v.size() == out[0].size(), "config." + k + ": rows differ in length");
    return out;
  }

 private:
  static double parse_double(const std::string& k, const std::string& s) {
    double v;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    require(r.ec == std::errc() && r.ptr == s.data() + s.size() && std::isfinite(v),
            "config." + k + ": expected a finite number, got '" + s + "'");
    return v;
  }
  static Vec parse_vec(const std::string& k, const std::string& s) {
    const auto parts = split(s, ',');
    Vec v(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = parse_double(k, parts[i]);
    return v;
  }

  std::map<std::string, std::string> values_;
};

const std::set<std::string> kCommonKeys = {"schema", "kind", "seed", "output_dir", "method", "quad_order", "mc_samples"};
const std::set<std::string> kGeometryKeys = {"d", "delta", "mu_old", "mu_new", "sigma_diag"};

std::set<std::string> keys_for(const std::string& kind) {
  std::set<std::string> k = kCommonKeys;
  auto add = [&](std::initializer_list<const char*> extra) {
    for (const char* e : extra) k.insert(e);
  };
  auto add_geometry = [&] { k.insert(kGeometryKeys.begin(), kGeometryKeys.end()); };
  if (kind == "flow") add_geometry(), add({"alpha", "objective", "beta0", "m_new0", "dt", "t_max", "stop_below_beta"});
  if (kind == "replay") add_geometry(), add({"alpha", "lambda", "grid_points", "batch", "trials", "beta"});
  if (kind == "sdft")
    add_geometry(), add({"alpha_c", "nu_c", "step_gamma", "ema_zeta", "demo_lambda", "steps", "alpha0", "nu0", "beta0", "m0"});
  if (kind == "ttt") add_geometry(), add({"eta", "lambda_ref", "beta0", "u_old", "u_new", "partition", "grid_points"});
  if (kind == "oapl") add_geometry(), add({"tau", "beta0", "u_old", "u_new", "partition", "grid_points"});
  if (kind == "fdiv") add_geometry(), add({"alpha", "generator", "generator_param", "grid_points"});
  if (kind == "kmode") add({"weights", "means", "sigma_diag", "trained", "mode_index", "model_weights", "model_means"});
  if (kind == "logconcave") add({"a", "mu1", "mu2", "alpha", "beta", "m_new"});
  if (kind == "check") add({"suite"});
  return k;
}

struct Common {
  std::string kind;
  std::uint64_t seed;
  fs::path output_dir;
  EstimatorConfig est;
};

std::uint64_t env_seed(std::uint64_t fallback) {
  const char* s = std::getenv("FORGETLAB_SEED");
  if (!s || !*s) return fallback;
  std::uint64_t v;
  const std::string str(s);
  const auto r = std::from_chars(str.data(), str.data() + str.size(), v);
  require(r.ec == std::errc() && r.ptr == str.data() + str.size(), "FORGETLAB_SEED: expected an unsigned integer");
  return v;
}

fs::path env_output_dir(const fs::path& fallback) {
  const char* s = std::getenv("FORGETLAB_OUTPUT_DIR");
  return s && *s ? fs::path(s) : fallback;
}

Common read_common(const Config& c) {
  require(c.str("schema") == "forgetlab/1", "config.schema: expected 'forgetlab/1', got '" + c.str("schema") + "'");
  Common m;
  m.kind = c.choice("kind", {"flow", "replay", "sdft", "ttt", "oapl", "fdiv", "kmode", "logconcave", "check"}, "");
  c.allow_only(keys_for(m.kind));
  m.seed = env_seed(static_cast<std::uint64_t>(c.integer("seed", 0, std::numeric_limits<long long>::max(), 0)));
  m.output_dir = env_output_dir(c.str("output_dir", "."));
  m.est.method = c.choice("method", {"quadrature", "monte_carlo"}, "quadrature") == "quadrature" ? Method::projected_quadrature
                                                                                                  : Method::monte_carlo;
  m.est.quad_order = static_cast<int>(c.integer("quad_order", 16, 2000, 200));
  m.est.mc_samples = c.integer("mc_samples", 1000, 100000000, 100000);
  m.est.seed = m.seed;
  return m;
}

CovarianceModel read_cov(const Config& c, int d) {
  if (!c.has("sigma_diag")) return CovarianceModel::identity(d);
  const Vec s = c.vec("sigma_diag");
  require(s.size() == d, "config.sigma_diag: expected " + std::to_string(d) + " entries");
  require(s.minCoeff() > 0.0, "config.sigma_diag: entries must be positive");
  return CovarianceModel::diagonal(s);
}

Geometry read_geometry(const Config& c) {
  if (c.has("delta")) {
    require(!c.has("mu_old") && !c.has("mu_new") && !c.has("sigma_diag"),
            "config.delta: cannot be combined with mu_old, mu_new or sigma_diag");
    const int d = static_cast<int>(c.integer("d", 1, 64, 1));
    const double delta = c.num_in("delta", 0.0, 1e6, true, false);
    Vec mn = Vec::Zero(d);
    mn[0] = delta;
    return Geometry{Vec::Zero(d), mn, CovarianceModel::identity(d)};
  }
  const Vec mo = c.vec("mu_old"), mn = c.vec("mu_new");
  require(mo.size() == mn.size(), "config.mu_new: length differs from mu_old");
  require(!c.has("d") || c.integer("d", 1, 64) == mo.size(), "config.d: disagrees with the length of mu_old");
  require((mo - mn).norm() > 0.0, "config.mu_new: must differ from mu_old");
  return Geometry{mo, mn, read_cov(c, static_cast<int>(mo.size()))};
}

TargetSpec read_target(const Config& c, const Geometry& g) {
  return TargetSpec(c.num_in("alpha", 0.0, 1.0, true, true), g.mu_o, g.mu_n, g.cov);
}

StepReward read_reward(const Config& c) {
  return StepReward{c.num("u_old", 0.0), c.num("u_new", 1.0),
                    c.choice("partition", {"bayes_halfspace", "disjoint"}, "bayes_halfspace") == "disjoint"
                        ? PartitionKind::disjoint
                        : PartitionKind::bayes_halfspace};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw io_error("cannot create output directory '" + dir.string() + "'");
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  if (!out) throw io_error("cannot write '" + path.string() + "'");
}

std::ostringstream csv_stream() {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17);
  return os;
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// ---- scenario kinds -----------------------------------------------------------

json run_flow(const Config& c, const Common& m, std::ostringstream& csv) {
  const Geometry g = read_geometry(c);
  const TargetSpec spec = read_target(c, g);
  const bool sft = c.choice("objective", {"sft_logit", "reverse_kl"}, "sft_logit") == "sft_logit";
  const double b0 = c.num_in("beta0", 0.0, 1.0, true, true);
  const Vec m0 = c.vec("m_new0", spec.mu_new);
  require(m0.size() == spec.dim(), "config.m_new0: wrong length");
  const double dt = c.num_in("dt", 0.0, 10.0, true, false, 0.05);
  const double t_max = c.num_in("t_max", 0.0, 1e7, true, false, 100.0);
  FlowOptions opts;
  opts.stop_below_beta = c.num_in("stop_below_beta", 0.0, 1.0, false, true, 0.0);
  const Trajectory tr = integrate_flow(sft ? FlowObjective::sft_logit : FlowObjective::reverse_kl,
                                       LearnerParams::from_beta(b0, spec.mu_old, m0), spec, dt, t_max, m.est, opts);
  write_trajectory_csv(tr, csv);
  return {{"steps", tr.size() - 1}, {"final_time", tr.times.back()}, {"final_beta", tr.final_beta()},
          {"final_loss", tr.losses.back()}, {"halvings", tr.halvings}, {"collapsed", tr.collapsed},
          {"max_loss_increase", tr.max_loss_increase}};
}

json run_replay(const Config& c, const Common& m, std::ostringstream& csv) {
  const Geometry g = read_geometry(c);
  const TargetSpec spec = read_target(c, g);
  const double lam = c.num_in("lambda", 0.0, 1.0, true, true);
  const int points = static_cast<int>(c.integer("grid_points", 3, 100001, 101));
  const int batch = static_cast<int>(c.integer("batch", 1, 100000, 50));
  const long long trials = c.integer("trials", 1000, 100000000, 100000);
  const double beta = c.num_in("beta", 0.0, 1.0, false, false, 0.0);
  const ReplayGridResult den = replay_grid_argmin(lam, ReplayMode::denominator, spec, m.est, points);
  const ReplayGridResult num = replay_grid_argmin(lam, ReplayMode::numerator, spec, m.est, points);
  csv << "beta,loss_denominator,loss_numerator\n";
  for (std::size_t i = 0; i < den.betas.size(); ++i) csv << den.betas[i] << ',' << den.losses[i] << ',' << num.losses[i] << '\n';
  const OldSampleStatistics s = old_sample_statistics(lam, beta, batch, trials, m.seed);
  return {{"argmin_denominator", den.beta_argmin}, {"argmin_numerator", num.beta_argmin},
          {"closed_form_denominator", replay_population_minimizer(lam, ReplayMode::denominator).beta_star},
          {"closed_form_numerator", replay_population_minimizer(lam, ReplayMode::numerator).beta_star},
          {"p_none_exact", s.p_none_exact}, {"p_none_empirical", s.p_none_emp}, {"p_none_se", s.p_none_se},
          {"chernoff_bound", s.chernoff}, {"tail_empirical", s.tail_emp}};
}

json run_sdft(const Config& c, const Common& m, std::ostringstream& csv) {
  const int d = static_cast<int>(c.integer("d", 1, 64, 1));
  const Vec mo = c.vec("mu_old", Vec(Vec::Zero(d)));
  require(mo.size() == d, "config.mu_old: wrong length");
  const CovarianceModel cov = read_cov(c, d);
  const Vec nu_c = c.vec("nu_c");
  require(nu_c.size() == d, "config.nu_c: wrong length");
  const SdftConfig cfg{c.num_in("alpha_c", 0.0, 1.0, true, true), nu_c, c.num_in("step_gamma", 0.0, 100.0, true, false, 0.2),
                       c.num_in("ema_zeta", 0.0, 1.0, true, false, 0.5), c.num_in("demo_lambda", 0.0, 1.0, false, false, 0.5),
                       mo, cov};
  const SdftState init{c.num_in("alpha0", 0.0, 1.0, true, true, cfg.alpha_c), c.vec("nu0", nu_c),
                       c.num_in("beta0", 0.0, 1.0, true, true, cfg.alpha_c), c.vec("m0", nu_c)};
  require(init.nu_t.size() == d && init.m_t.size() == d, "config.nu0/m0: wrong length");
  const int steps = static_cast<int>(c.integer("steps", 1, 100000, 200));
  const SdftRun run = sdft_run(init, cfg, steps, m.est);
  csv << "t,alpha_t,beta_t";
  for (int j = 0; j < d; ++j) csv << ",nu_" << j;
  for (int j = 0; j < d; ++j) csv << ",m_" << j;
  csv << ",lag,old_grad_norm\n";
  for (std::size_t t = 0; t < run.states.size(); ++t) {
    const SdftState& s = run.states[t];
    csv << t << ',' << s.alpha_t << ',' << s.beta_t;
    for (int j = 0; j < d; ++j) csv << ',' << s.nu_t[j];
    for (int j = 0; j < d; ++j) csv << ',' << s.m_t[j];
    csv << ',' << run.lags[t] << ',' << run.old_grad_norms[t] << '\n';
  }
  double max_ratio = 0.0;
  for (double r : run.contraction_ratios) max_ratio = std::max(max_ratio, r);
  return {{"limit_error", run.limit_error}, {"old_grad_sum", run.old_grad_sum}, {"max_contraction_ratio", max_ratio},
          {"fit_kappa", run.fit_kappa}, {"fit_c", run.fit_c}, {"clamp_events", run.clamp_events}};
}

json run_ttt(const Config& c, const Common& m, std::ostringstream& csv) {
  const TttConfig cfg{c.num_in("eta", 0.0, 1e3, true, false, 1.0), c.num_in("lambda_ref", 0.0, 1e6, false, false, 0.0),
                      c.num_in("beta0", 0.0, 1.0, true, true, 0.5), read_reward(c), read_geometry(c)};
  const int points = static_cast<int>(c.integer("grid_points", 3, 100001, 201));
  const TttAnalysis a = ttt_analysis(cfg, m.est);
  csv << "beta,J,D,objective\n";
  for (int i = 0; i < points; ++i) {
    const double b = static_cast<double>(i) / (points - 1);
    csv << b << ',' << a.J(b) << ',' << a.D(b) << ',' << a.objective(b) << '\n';
  }
  return {{"beta_star", a.beta_star}, {"case", a.case_label}, {"lambda_crit_new", a.lambda_crit_new},
          {"lambda_crit_old", a.lambda_crit_old}, {"gamma", a.gamma}, {"kappa", a.kappa}};
}

json run_oapl(const Config& c, const Common& m, std::ostringstream& csv) {
  const OaplConfig cfg{c.num_in("tau", 0.0, 1e3, true, false, 1.0), c.num_in("beta0", 0.0, 1.0, true, true, 0.5),
                       read_reward(c), read_geometry(c)};
  const int points = static_cast<int>(c.integer("grid_points", 3, 10001, 51));
  const OaplTarget t = oapl_target(cfg, m.est);
  csv << "beta,j_value,grad_m_norm\n";
  for (int i = 1; i < points - 1; ++i) {
    const double b = static_cast<double>(i) / (points - 1);
    const OaplGradient g = oapl_regression_grad(b, cfg.geometry.mu_n, cfg, m.est);
    csv << b << ',' << g.j_value << ',' << g.grad_m.norm() << '\n';
  }
  const OaplGradient sync = oapl_regression_grad(cfg.beta0, cfg.geometry.mu_n, cfg, m.est);
  return {{"v_star", t.v_star}, {"z", t.z}, {"beta_star_disjoint", t.beta_star_disjoint},
          {"expected_old_resp", t.expected_old_resp}, {"gamma", t.gamma},
          {"oldmode_term_norm", sync.oldmode_term_norm}, {"oldmode_bound", sync.oldmode_bound}};
}

json run_fdiv(const Config& c, const Common& m, std::ostringstream& csv) {
  const TargetSpec spec = read_target(c, read_geometry(c));
  const std::string name = c.choice("generator", {"kl", "js", "triangular", "hellinger", "pearson", "neyman", "alpha"}, "kl");
  const FGenerator gen = FGenerator::from_name(name, c.num_in("generator_param", 0.0, 1.0, true, true, 0.5));
  const FdivScan s = fdiv_sft_scan(gen, spec, m.est, static_cast<int>(c.integer("grid_points", 3, 100001, 101)));
  csv << "beta,loss\n";
  for (std::size_t i = 0; i < s.betas.size(); ++i) csv << s.betas[i] << ',' << s.losses[i] << '\n';
  return {{"generator", gen.name()}, {"monotone", s.monotone}, {"kappa_sup", checks::number_or_null(gen.kappa_sup())}};
}

json run_kmode(const Config& c, const Common& m, std::ostringstream& csv) {
  const Vec w = c.vec("weights");
  const std::vector<Vec> means = c.vec_list("means");
  const int K = static_cast<int>(w.size());
  require(K >= 2 && static_cast<int>(means.size()) == K, "config.means: expected one row per weight");
  require(w.minCoeff() > 0.0 && std::abs(w.sum() - 1.0) < 1e-9, "config.weights: must be positive and sum to 1");
  const CovarianceModel cov = read_cov(c, static_cast<int>(means[0].size()));
  std::vector<int> trained;
  for (const auto& t : split(c.str("trained"), ',')) {
    int v = -1;
    const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
    require(r.ec == std::errc() && v >= 0 && v < K, "config.trained: indices must lie in [0, " + std::to_string(K - 1) + "]");
    trained.push_back(v);
  }
  const int k = static_cast<int>(c.integer("mode_index", 0, K - 1, 0));
  const Vec mw = c.vec("model_weights", w);
  require(mw.size() == K && mw.minCoeff() > 0.0 && std::abs(mw.sum() - 1.0) < 1e-9,
          "config.model_weights: must have K positive entries summing to 1");
  std::vector<Vec> mm = c.has("model_means") ? c.vec_list("model_means") : means;
  require(static_cast<int>(mm.size()) == K && mm[0].size() == means[0].size(), "config.model_means: shape mismatch");
  require(mm[k] == means[k], "config.model_means: row mode_index must equal the target mean");
  const MixtureDensity target(w, means, cov);
  const KmodeResult r = kmode_analysis(target, trained, k, MixtureDensity(mw, mm, cov), m.est);
  csv << "k,alpha,beta_star,beta_closed\n";
  for (int j = 0; j < K; ++j) csv << j << ',' << w[j] << ',' << r.beta_star[j] << ',' << r.beta_closed[j] << '\n';
  return {{"max_closed_diff", r.max_closed_diff}, {"iterations", r.iterations},
          {"projected_grad_norm", r.projected_grad_norm}, {"old_grad", vec_json(r.old_grad_k)},
          {"grad_bound", r.grad_bound}, {"bounds_ok", r.bounds_ok}, {"monte_carlo", r.monte_carlo}};
}

json run_logconcave(const Config& c, const Common& m, std::ostringstream& csv) {
  const LocationFamily1D fam = LocationFamily1D::log_cosh(c.num_in("a", 0.0, 1.0, false, false, 0.5));
  const double mu1 = c.num("mu1", 0.0), mu2 = c.num("mu2");
  require(mu1 != mu2, "config.mu2: must differ from mu1");
  const LogConcaveReport r = logconcave_checks(fam, mu1, mu2, c.num_in("alpha", 0.0, 1.0, true, true, 0.5),
                                               c.num_in("beta", 0.0, 1.0, true, true, 0.5), c.num("m_new", mu2), m.est);
  csv << "bc,bc_bound,fisher_residual,sft_monotone,drift_grad,drift_bound,eps_q,eps_p,mass,ibp_residual\n";
  csv << r.bc << ',' << r.bc_bound << ',' << r.fisher_residual << ',' << (r.sft_monotone ? 1 : 0) << ',' << r.drift_grad
      << ',' << r.drift_bound << ',' << r.eps_q << ',' << r.eps_p << ',' << r.mass << ',' << r.ibp_residual << '\n';
  return {{"bc", r.bc}, {"bc_bound", r.bc_bound}, {"fisher_residual", r.fisher_residual},
          {"sft_monotone", r.sft_monotone}, {"drift_grad", r.drift_grad}, {"drift_bound", r.drift_bound}};
}

void print_record(const checks::CheckRecord& r) {
  std::cout << std::left << std::setw(5) << r.status << std::setw(36) << r.name << " measured=" << r.measured
            << " tol=" << r.tolerance << " (" << std::fixed << std::setprecision(0) << r.runtime_ms << " ms)"
            << std::defaultfloat << std::setprecision(6) << "  [" << r.paper_ref << "]\n";
}

int run_checks(const std::string& suite, std::uint64_t seed, const fs::path& report) {
  require(checks::valid_suite(suite), "unknown suite '" + suite + "' (expected all|core|near_on_policy|extensions)");
  if (report.has_parent_path()) ensure_dir(report.parent_path());
  checks::Context ctx;
  ctx.seed = seed;
  ctx.est.seed = seed;
  const auto records = checks::run_suite(suite, ctx, print_record);
  const json j = checks::report_json(records, seed, kVersion);
  write_file(report, j.dump(2) + "\n");
  const auto failed = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.status != "pass"; });
  std::cout << records.size() - failed << "/" << records.size() << " checks passed; report: " << report.string() << "\n";
  return failed == 0 ? kExitOk : kExitCheckFailed;
}

int run_config(const std::string& path) {
  const Config c = Config::load(path);
  const Common m = read_common(c);
  if (m.kind == "check") {
    const std::string suite = c.choice("suite", {"all", "core", "near_on_policy", "extensions"}, "all");
    return run_checks(suite, m.seed, m.output_dir / "report.json");
  }
  std::ostringstream csv = csv_stream();
  json results;
  if (m.kind == "flow") results = run_flow(c, m, csv);
  if (m.kind == "replay") results = run_replay(c, m, csv);
  if (m.kind == "sdft") results = run_sdft(c, m, csv);
  if (m.kind == "ttt") results = run_ttt(c, m, csv);
  if (m.kind == "oapl") results = run_oapl(c, m, csv);
  if (m.kind == "fdiv") results = run_fdiv(c, m, csv);
  if (m.kind == "kmode") results = run_kmode(c, m, csv);
  if (m.kind == "logconcave") results = run_logconcave(c, m, csv);
  ensure_dir(m.output_dir);
  const fs::path csv_path = m.output_dir / (m.kind + ".csv");
  write_file(csv_path, csv.str());
  const json summary = {{"version", kVersion}, {"kind", m.kind}, {"seed", m.seed},
                        {"csv", csv_path.filename().string()}, {"results", results}};
  write_file(m.output_dir / "summary.json", summary.dump(2) + "\n");
  std::cout << "wrote " << csv_path.string() << " and " << (m.output_dir / "summary.json").string() << "\n";
  return kExitOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const input_error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const method_error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const consistency_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const io_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forgetlab: forgetting in mixture models, numerically"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run a scenario config, writing <kind>.csv and summary.json");
  run->add_option("config", config_path, "Path to a key = value config")->required();

  std::string suite;
  std::string report;
  std::optional<std::uint64_t> seed_opt;
  auto* check = app.add_subcommand("check", "Run a verification suite and write a JSON report");
  check->add_option("suite", suite, "all | core | near_on_policy | extensions")->required();
  check->add_option("--report", report, "Report path (default: $FORGETLAB_OUTPUT_DIR/check_<suite>.json)");
  check->add_option("--seed", seed_opt, "Base seed (default: $FORGETLAB_SEED or 20240601)");

  app.add_subcommand("version", "Print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (run->parsed()) return guarded([&] { return run_config(config_path); });
  if (check->parsed())
    return guarded([&] {
      const std::uint64_t seed = seed_opt ? *seed_opt : env_seed(checks::Context{}.seed);
      const fs::path path = report.empty() ? env_output_dir(".") / ("check_" + suite + ".json") : fs::path(report);
      return run_checks(suite, seed, path);
    });
  std::cout << "forgetlab " << kVersion << "\n";
  return kExitOk;
}
