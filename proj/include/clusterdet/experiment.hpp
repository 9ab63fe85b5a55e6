#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "correlation.hpp"
#include "detectors.hpp"
#include "errors.hpp"
#include "mcsim.hpp"
#include "netgeom.hpp"
#include "precoding.hpp"
#include "rng.hpp"
#include "tailprob.hpp"

namespace clusterdet {

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double x) { return 10.0 * std::log10(x); }

inline std::vector<int> divisors(int n) {
  if (n < 1) throw ConfigError("divisors need a positive n");
  std::vector<int> out;
  for (int d = 1; d <= n; ++d)
    if (n % d == 0) out.push_back(d);
  return out;
}

// Full experiment description.  All keys are flat `key=value` entries; the
// measurement SNR (sigma_s2/sigma_v2) and communication SNR (E_bar/sigma_w2)
// may be given in dB, which then derive sigma_s2 and e_bar; set snr_m_db=nan
// (or snr_c_db=nan) to use the raw variance keys instead.
struct ExperimentConfig {
  // correlation model
  std::string acf = "equicorrelated";
  double rho = 0.9;
  double sigma_s2 = 1.0;
  double sigma_v2 = 1.0;

  // channel
  double sigma_w2 = 1.0;
  double e_bar = 0.0;  // used only when snr_c_db is nan
  double snr_m_db = -6.0;
  double snr_c_db = 12.0;
  double p1 = 1.0;

  // geometry
  int n = 100;
  int l = 10;
  std::string l_list;  // comma-separated; empty -> all divisors of n
  double A0 = 1.0;
  double epsilon = 2.0;
  std::string placement = "lattice";  // lattice | uniform
  double lambda = 1.0;                // PPP intensity (nodes per unit area)

  // precoding
  std::string strategy = "pfs-mac";  // pfs-mac | afs-pac | auto
  double beta = 1.0;
  // Worst-case distance convention for the filter-and-forward gain on ideal
  // square cluster cells: "centroid" (half diagonal, head at the centroid),
  // "bound" (full diagonal), or "realized" (measured on the layout).
  std::string dmax_convention = "centroid";

  // detection
  std::string detector = "all";  // fcs | lcs | ed | all
  std::string threshold_rule = "mean-under-h1";  // or target-alpha
  double alpha = 1e-2;

  // SNR_C sweep grid (dB)
  double snr_c_min_db = 0.0;
  double snr_c_max_db = 18.0;
  int snr_c_points = 10;

  // Monte Carlo / random deployments
  long long trials = 10000;
  int realizations = 200;

  // infrastructure
  std::uint64_t seed = 1;
  int threads = 0;
  std::string out;         // output path; empty -> stdout
  std::string trial_csv;   // optional per-trial dump (mc-validate)
  std::string layout_out;  // optional layout CSV path (mc-validate)

  bool snr_m_given() const { return std::isfinite(snr_m_db); }
  bool snr_c_given() const { return std::isfinite(snr_c_db); }

  double resolved_sigma_s2() const {
    return snr_m_given() ? sigma_v2 * db_to_linear(snr_m_db) : sigma_s2;
  }
  double resolved_e_bar() const {
    if (snr_c_given()) return sigma_w2 * db_to_linear(snr_c_db);
    if (!(e_bar > 0.0))
      throw ConfigError("either snr_c_db or a positive e_bar is required");
    return e_bar;
  }
  double snr_m() const { return resolved_sigma_s2() / sigma_v2; }
  double snr_c() const { return resolved_e_bar() / sigma_w2; }

  CorrelationModel make_model() const {
    CorrelationModel m;
    m.family = acf_family_from_string(acf);
    m.sigma_s2 = resolved_sigma_s2();
    m.rho = rho;
    m.sigma_v2 = sigma_v2;
    m.validate();
    return m;
  }

  ChannelParams make_channel() const {
    ChannelParams c;
    c.E_bar = resolved_e_bar();
    c.sigma_w2 = sigma_w2;
    c.p1 = p1;
    c.validate();
    return c;
  }

  std::vector<DetectorKind> detector_kinds() const {
    if (detector == "all")
      return {DetectorKind::Fcs, DetectorKind::Lcs, DetectorKind::Ed};
    return {detector_from_string(detector)};
  }

  std::vector<int> grid_l() const {
    if (l_list.empty()) return divisors(n);
    std::vector<int> out;
    std::stringstream ss(l_list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      std::size_t pos = 0;
      int v = 0;
      try {
        v = std::stoi(tok, &pos);
      } catch (const std::exception&) {
        throw ConfigError("bad l_list entry: " + tok);
      }
      if (pos != tok.size() || v < 1)
        throw ConfigError("bad l_list entry: " + tok);
      out.push_back(v);
    }
    if (out.empty()) throw ConfigError("l_list is empty");
    return out;
  }

  double dmax_for(int cluster_size) const {
    if (dmax_convention == "centroid")
      return centroid_max_distance(cluster_size, A0);
    if (dmax_convention == "bound")
      return max_intracluster_distance(cluster_size, A0);
    if (dmax_convention == "realized")
      return centroid_max_distance(cluster_size, A0);  // plan measures it
    throw ConfigError("unknown dmax_convention: " + dmax_convention);
  }

  Placement placement_kind() const {
    if (placement == "lattice") return Placement::RegularLattice;
    if (placement == "uniform") return Placement::UniformRandom;
    throw ConfigError("unknown placement: " + placement);
  }

  // Fixed-order key=value view; the embedded CSV/JSON config header.
  std::vector<std::pair<std::string, std::string>> to_kv() const;
};

namespace detail {

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace detail

inline std::vector<std::pair<std::string, std::string>>
ExperimentConfig::to_kv() const {
  using detail::fmt_g;
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("acf", acf);
  kv.emplace_back("rho", fmt_g(rho));
  kv.emplace_back("sigma_s2", fmt_g(sigma_s2));
  kv.emplace_back("sigma_v2", fmt_g(sigma_v2));
  kv.emplace_back("sigma_w2", fmt_g(sigma_w2));
  kv.emplace_back("e_bar", fmt_g(e_bar));
  kv.emplace_back("snr_m_db", fmt_g(snr_m_db));
  kv.emplace_back("snr_c_db", fmt_g(snr_c_db));
  kv.emplace_back("p1", fmt_g(p1));
  kv.emplace_back("n", std::to_string(n));
  kv.emplace_back("l", std::to_string(l));
  kv.emplace_back("l_list", l_list);
  kv.emplace_back("A0", fmt_g(A0));
  kv.emplace_back("epsilon", fmt_g(epsilon));
  kv.emplace_back("placement", placement);
  kv.emplace_back("lambda", fmt_g(lambda));
  kv.emplace_back("strategy", strategy);
  kv.emplace_back("beta", fmt_g(beta));
  kv.emplace_back("dmax_convention", dmax_convention);
  kv.emplace_back("detector", detector);
  kv.emplace_back("threshold_rule", threshold_rule);
  kv.emplace_back("alpha", fmt_g(alpha));
  kv.emplace_back("snr_c_min_db", fmt_g(snr_c_min_db));
  kv.emplace_back("snr_c_max_db", fmt_g(snr_c_max_db));
  kv.emplace_back("snr_c_points", std::to_string(snr_c_points));
  kv.emplace_back("trials", std::to_string(trials));
  kv.emplace_back("realizations", std::to_string(realizations));
  kv.emplace_back("seed", std::to_string(seed));
  kv.emplace_back("threads", std::to_string(threads));
  return kv;
}

// Parses flat `key=value` text ('#' starts a comment, blank lines ignored)
// on top of the given defaults.  Unknown keys are rejected.
inline ExperimentConfig parse_config_text(const std::string& text,
                                          ExperimentConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const char* ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
  };
  auto as_double = [&](const std::string& k, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("bad numeric value for " + k + ": " + v);
    }
  };
  auto as_ll = [&](const std::string& k, const std::string& v) {
    try {
      std::size_t pos = 0;
      const long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("bad integer value for " + k + ": " + v);
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        " is not key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "acf") cfg.acf = val;
    else if (key == "rho") cfg.rho = as_double(key, val);
    else if (key == "sigma_s2") cfg.sigma_s2 = as_double(key, val);
    else if (key == "sigma_v2") cfg.sigma_v2 = as_double(key, val);
    else if (key == "sigma_w2") cfg.sigma_w2 = as_double(key, val);
    else if (key == "e_bar") cfg.e_bar = as_double(key, val);
    else if (key == "snr_m_db") cfg.snr_m_db = as_double(key, val);
    else if (key == "snr_c_db") cfg.snr_c_db = as_double(key, val);
    else if (key == "p1") cfg.p1 = as_double(key, val);
    else if (key == "n") cfg.n = static_cast<int>(as_ll(key, val));
    else if (key == "l") cfg.l = static_cast<int>(as_ll(key, val));
    else if (key == "l_list") cfg.l_list = val;
    else if (key == "A0") cfg.A0 = as_double(key, val);
    else if (key == "epsilon") cfg.epsilon = as_double(key, val);
    else if (key == "placement") cfg.placement = val;
    else if (key == "lambda") cfg.lambda = as_double(key, val);
    else if (key == "strategy") cfg.strategy = val;
    else if (key == "beta") cfg.beta = as_double(key, val);
    else if (key == "dmax_convention") cfg.dmax_convention = val;
    else if (key == "detector") cfg.detector = val;
    else if (key == "threshold_rule") cfg.threshold_rule = val;
    else if (key == "alpha") cfg.alpha = as_double(key, val);
    else if (key == "snr_c_min_db") cfg.snr_c_min_db = as_double(key, val);
    else if (key == "snr_c_max_db") cfg.snr_c_max_db = as_double(key, val);
    else if (key == "snr_c_points")
      cfg.snr_c_points = static_cast<int>(as_ll(key, val));
    else if (key == "trials") cfg.trials = as_ll(key, val);
    else if (key == "realizations")
      cfg.realizations = static_cast<int>(as_ll(key, val));
    else if (key == "seed")
      cfg.seed = static_cast<std::uint64_t>(as_ll(key, val));
    else if (key == "threads") cfg.threads = static_cast<int>(as_ll(key, val));
    else if (key == "out") cfg.out = val;
    else if (key == "trial_csv") cfg.trial_csv = val;
    else if (key == "layout_out") cfg.layout_out = val;
    else throw ConfigError("unknown config key: " + key);
  }
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path,
                                          ExperimentConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), std::move(cfg));
}

// ---- single-instance assembly ----------------------------------------------

// Everything needed to evaluate one (n, l) operating point.
struct Instance {
  NetworkLayout layout;
  CorrelationModel model;
  ChannelParams channel;
  PrecodingPlan plan;
  ReceivedCovariances rc;
  double ed_norm = 1.0;
  double gamma_eff = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline Strategy resolve_strategy(const std::string& requested,
                                 const CorrelationModel& model) {
  if (requested == "pfs-mac") return Strategy::PfsMac;
  if (requested == "afs-pac") return Strategy::AfsPac;
  if (requested == "auto")
    return model.geometry_free() ? Strategy::PfsMac : Strategy::AfsPac;
  throw ConfigError("unknown strategy: " + requested);
}

}  // namespace detail

// Builds the operating point for cluster size `cluster_size` with an optional
// communication-SNR override (used by the SNR sweep).
inline Instance make_instance(const ExperimentConfig& cfg, int cluster_size,
                              double snr_c_db_override =
                                  std::numeric_limits<double>::quiet_NaN()) {
  ExperimentConfig c = cfg;
  if (std::isfinite(snr_c_db_override)) c.snr_c_db = snr_c_db_override;
  if (c.n < 1 || cluster_size < 1 || c.n % cluster_size != 0)
    throw ConfigError("cluster size must divide n");
  Instance inst;
  inst.model = c.make_model();
  inst.channel = c.make_channel();
  inst.layout = build_grid_network(c.n, cluster_size, c.A0, c.placement_kind(),
                                   c.seed, c.epsilon);
  const Strategy strategy = detail::resolve_strategy(c.strategy, inst.model);
  if (strategy == Strategy::PfsMac) {
    if (c.dmax_convention == "realized") {
      inst.plan = pfs_mac_plan(inst.layout, inst.model, inst.channel, c.beta,
                               DmaxMode::Realized);
    } else {
      inst.plan = pfs_mac_uniform_plan(c.n, cluster_size, inst.model,
                                       inst.channel, c.beta,
                                       c.dmax_for(cluster_size), c.epsilon);
    }
    const double g = inst.plan.clusters.front().gamma;
    inst.ed_norm = g * g * inst.model.sigma_v2 + inst.channel.sigma_w2;
    inst.gamma_eff = mac_snr_from_gamma(g, inst.model, inst.channel);
  } else {
    inst.plan = afs_pac_plan(inst.layout, inst.model, inst.channel, c.beta);
    inst.ed_norm = 1.0;
  }
  const HypothesisCovariances cov =
      hypothesis_covariances(inst.model, inst.layout, CovScope::full());
  inst.rc = received_covariances(inst.plan, cov);
  return inst;
}

// ---- runners ---------------------------------------------------------------

struct SweepRow {
  DetectorKind kind = DetectorKind::Lcs;
  int l = 0;
  double snr_c_db = 0.0;
  int n_prime = 0;
  double gamma_eff = 0.0;
  double tau = 0.0;
  double s0 = 0.0, s1 = 0.0;
  double log10_pfa = 0.0, log10_pm = 0.0;
  bool pfa_at_mean = false, pm_at_mean = false;
};

namespace detail {

inline SweepRow evaluate_point(const Instance& inst, DetectorKind kind,
                               const std::string& threshold_rule,
                               double alpha) {
  const Eigen::MatrixXcd P = detector_matrix(kind, inst.rc, inst.ed_norm);
  const QfLmgf lmgf0 = qf_lmgf(inst.rc.xi0, P);
  const QfLmgf lmgf1 = qf_lmgf(inst.rc.xi1, P);
  double tau;
  if (threshold_rule == "mean-under-h1")
    tau = (inst.rc.xi1 * P).trace().real();
  else if (threshold_rule == "target-alpha")
    tau = threshold_for_pfa(lmgf0, alpha);
  else
    throw ConfigError("unknown threshold_rule: " + threshold_rule);
  const ErrorProbReport rep = error_probabilities(lmgf0, lmgf1, tau);
  SweepRow row;
  row.kind = kind;
  row.n_prime = inst.rc.n_prime;
  row.gamma_eff = inst.gamma_eff;
  row.tau = tau;
  row.s0 = rep.tilt0.s;
  row.s1 = rep.tilt1.s;
  row.log10_pfa = rep.log_pfa / std::log(10.0);
  row.log10_pm = rep.log_pm / std::log(10.0);
  row.pfa_at_mean = rep.pfa_at_mean;
  row.pm_at_mean = rep.pm_at_mean;
  return row;
}

}  // namespace detail

// One row per (cluster size, detector): error probabilities across the
// cluster-size grid at fixed SNRs.
inline std::vector<SweepRow> sweep_cluster_size(const ExperimentConfig& cfg) {
  std::vector<SweepRow> rows;
  const std::vector<DetectorKind> kinds = cfg.detector_kinds();
  for (int l : cfg.grid_l()) {
    const Instance inst = make_instance(cfg, l);
    for (DetectorKind kind : kinds) {
      SweepRow row =
          detail::evaluate_point(inst, kind, cfg.threshold_rule, cfg.alpha);
      row.l = l;
      row.snr_c_db = cfg.snr_c_db;
      rows.push_back(row);
    }
  }
  return rows;
}

// One row per (SNR_C grid point, cluster size, detector).
inline std::vector<SweepRow> sweep_snr_c(const ExperimentConfig& cfg) {
  if (cfg.snr_c_points < 2) throw ConfigError("snr_c_points must be >= 2");
  std::vector<int> ls;
  if (cfg.l_list.empty())
    ls.push_back(cfg.l);
  else
    ls = cfg.grid_l();
  const std::vector<DetectorKind> kinds = cfg.detector_kinds();
  std::vector<SweepRow> rows;
  for (int k = 0; k < cfg.snr_c_points; ++k) {
    const double db =
        cfg.snr_c_min_db + k * (cfg.snr_c_max_db - cfg.snr_c_min_db) /
                               (cfg.snr_c_points - 1);
    for (int l : ls) {
      const Instance inst = make_instance(cfg, l, db);
      for (DetectorKind kind : kinds) {
        SweepRow row =
            detail::evaluate_point(inst, kind, cfg.threshold_rule, cfg.alpha);
        row.l = l;
        row.snr_c_db = db;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

struct LOptRow {
  double snr_c_db = 0.0;
  int l_opt = 0;
  double log10_pfa = 0.0;
};

// Exhaustive scan of the closed-form false-alarm probability over the
// divisors of n; ties resolve to the smaller cluster size.  Stationary model
// only (the closed forms assume it).
inline std::vector<LOptRow> find_l_opt(const ExperimentConfig& cfg) {
  if (acf_family_from_string(cfg.acf) != AcfFamily::Equicorrelated)
    throw ConfigError("l_opt scan needs the equicorrelated model");
  if (cfg.snr_c_points < 2) throw ConfigError("snr_c_points must be >= 2");
  const DetectorKind kind = cfg.detector == "all"
                                ? DetectorKind::Lcs
                                : detector_from_string(cfg.detector);
  const CorrelationModel model = cfg.make_model();
  std::vector<LOptRow> rows;
  for (int k = 0; k < cfg.snr_c_points; ++k) {
    const double db =
        cfg.snr_c_min_db + k * (cfg.snr_c_max_db - cfg.snr_c_min_db) /
                               (cfg.snr_c_points - 1);
    ChannelParams channel;
    channel.E_bar = cfg.sigma_w2 * db_to_linear(db);
    channel.sigma_w2 = cfg.sigma_w2;
    channel.p1 = cfg.p1;
    LOptRow best;
    best.snr_c_db = db;
    best.l_opt = 0;
    best.log10_pfa = std::numeric_limits<double>::infinity();
    for (int l : divisors(cfg.n)) {
      const double beta_eff =
          static_cast<double>(channel_uses(cfg.beta, l)) / l;
      // Same gain route the plans use, so closed-form and engine sweeps see
      // the identical effective SNR.
      const double g = pfs_mac_gamma(model, channel, beta_eff,
                                     cfg.dmax_for(l), cfg.epsilon);
      const double gamma = mac_snr_from_gamma(g, model, channel);
      const double lp =
          lemma1_log_pfa(kind, cfg.n, l, beta_eff, cfg.rho, gamma) /
          std::log(10.0);
      if (lp < best.log10_pfa) {
        best.log10_pfa = lp;
        best.l_opt = l;
      }
    }
    rows.push_back(best);
  }
  return rows;
}

struct PppExperimentRow {
  int l = 0;
  DetectorKind kind = DetectorKind::Lcs;
  PppDetectorSummary summary;
  int resampled = 0;
};

// Random-deployment study across the cluster-size grid: per size, averages
// analytic and empirical miss probabilities over Poisson realizations at the
// target false-alarm level.
inline std::vector<PppExperimentRow> run_ppp_experiment(
    const ExperimentConfig& cfg) {
  const std::vector<DetectorKind> kinds = cfg.detector_kinds();
  std::vector<PppExperimentRow> rows;
  for (int l : cfg.grid_l()) {
    if (cfg.n % l != 0)
      throw ConfigError("ppp grid cluster size must divide the nominal n");
    PppConfig ppp;
    ppp.lambda = cfg.lambda;
    ppp.nominal_n = cfg.n;
    ppp.nominal_l = l;
    ppp.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(l), 30);
    McConfig mc;
    mc.trials = cfg.trials;
    mc.base_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(l), 31);
    mc.threads = cfg.threads;
    const CorrelationModel model = cfg.make_model();
    const ChannelParams channel = cfg.make_channel();
    const PppStudyResult study =
        ppp_study(ppp, model, channel, kinds, cfg.beta, cfg.alpha,
                  cfg.realizations, mc, l, cfg.A0, cfg.epsilon);
    for (DetectorKind kind : kinds) {
      PppExperimentRow row;
      row.l = l;
      row.kind = kind;
      row.summary = summarize_ppp(study, kind);
      row.resampled = study.resampled;
      rows.push_back(row);
    }
  }
  return rows;
}

// ---- CSV / JSON emission ---------------------------------------------------

namespace detail {

inline void csv_preamble(std::ostream& os, const ExperimentConfig& cfg,
                         const std::string& verb) {
  os << "# clusterdet " << verb << "\n";
  os << "# " << kLeadingOrderCaveat << "\n";
  for (const auto& [k, v] : cfg.to_kv()) os << "# " << k << "=" << v << "\n";
}

}  // namespace detail

inline std::string sweep_csv(const ExperimentConfig& cfg,
                             const std::vector<SweepRow>& rows,
                             const std::string& verb) {
  using detail::fmt_g;
  std::ostringstream os;
  detail::csv_preamble(os, cfg, verb);
  os << "detector,l,snr_c_db,n_prime,gamma_eff,tau,s0,s1,log10_pfa,log10_pm,"
        "pfa_at_mean,pm_at_mean\n";
  for (const SweepRow& r : rows) {
    os << to_string(r.kind) << ',' << r.l << ',' << fmt_g(r.snr_c_db) << ','
       << r.n_prime << ',' << fmt_g(r.gamma_eff) << ',' << fmt_g(r.tau) << ','
       << fmt_g(r.s0) << ',' << fmt_g(r.s1) << ',' << fmt_g(r.log10_pfa)
       << ',' << fmt_g(r.log10_pm) << ',' << (r.pfa_at_mean ? 1 : 0) << ','
       << (r.pm_at_mean ? 1 : 0) << '\n';
  }
  return os.str();
}

inline std::string lopt_csv(const ExperimentConfig& cfg,
                            const std::vector<LOptRow>& rows) {
  using detail::fmt_g;
  std::ostringstream os;
  detail::csv_preamble(os, cfg, "lopt");
  os << "snr_c_db,l_opt,log10_pfa\n";
  for (const LOptRow& r : rows)
    os << fmt_g(r.snr_c_db) << ',' << r.l_opt << ',' << fmt_g(r.log10_pfa)
       << '\n';
  return os.str();
}

inline std::string ppp_csv(const ExperimentConfig& cfg,
                           const std::vector<PppExperimentRow>& rows) {
  using detail::fmt_g;
  std::ostringstream os;
  detail::csv_preamble(os, cfg, "ppp");
  os << "l,detector,realizations,resampled,analytic_pm_mean,refined_pm_mean,"
        "empirical_pm_mean,empirical_pm_se,analytic_pfa_mean,"
        "empirical_pfa_mean,trials_per_realization\n";
  for (const PppExperimentRow& r : rows) {
    const PppDetectorSummary& s = r.summary;
    os << r.l << ',' << to_string(r.kind) << ',' << s.realizations << ','
       << r.resampled << ',' << fmt_g(s.analytic_pm_mean) << ','
       << fmt_g(s.refined_pm_mean) << ',' << fmt_g(s.emp_pm_mean) << ','
       << fmt_g(s.emp_pm_se) << ',' << fmt_g(s.analytic_pfa_mean) << ','
       << fmt_g(s.emp_pfa_mean) << ','
       << (s.realizations ? s.trials_total / s.realizations : 0) << '\n';
  }
  return os.str();
}

// Validation run on one operating point: analytic, refined, and empirical
// error rates side by side, as a JSON document.  Optionally dumps per-trial
// statistics and the layout.
inline std::string mc_validate(const ExperimentConfig& cfg) {
  const Instance inst = make_instance(cfg, cfg.l);
  const std::vector<DetectorKind> kinds = cfg.detector_kinds();

  std::vector<DetectorSpec> specs;
  nlohmann::json results = nlohmann::json::array();
  for (DetectorKind kind : kinds) {
    const Eigen::MatrixXcd P = detector_matrix(kind, inst.rc, inst.ed_norm);
    const QfLmgf lmgf0 = qf_lmgf(inst.rc.xi0, P);
    const QfLmgf lmgf1 = qf_lmgf(inst.rc.xi1, P);
    double tau;
    if (cfg.threshold_rule == "mean-under-h1")
      tau = (inst.rc.xi1 * P).trace().real();
    else if (cfg.threshold_rule == "target-alpha")
      tau = threshold_for_pfa(lmgf0, cfg.alpha);
    else
      throw ConfigError("unknown threshold_rule: " + cfg.threshold_rule);
    const ErrorProbReport rep = error_probabilities(lmgf0, lmgf1, tau);
    nlohmann::json j;
    j["detector"] = to_string(kind);
    j["tau"] = tau;
    j["n_prime"] = inst.rc.n_prime;
    j["analytic"] = {{"pfa", rep.pfa},
                     {"pm", rep.pm},
                     {"log10_pfa", rep.log_pfa / std::log(10.0)},
                     {"log10_pm", rep.log_pm / std::log(10.0)},
                     {"s0", rep.tilt0.s},
                     {"s1", rep.tilt1.s},
                     {"pfa_at_mean", rep.pfa_at_mean},
                     {"pm_at_mean", rep.pm_at_mean}};
    j["refined"] = {
        {"pfa", refined_tail_probability(lmgf0, tau, TailSide::Upper)},
        {"pm", refined_tail_probability(lmgf1, tau, TailSide::Lower)}};
    results.push_back(std::move(j));
    DetectorSpec spec;
    spec.kind = kind;
    spec.P = P;
    spec.tau = tau;
    specs.push_back(std::move(spec));
  }

  McConfig mc;
  mc.trials = cfg.trials;
  mc.base_seed = cfg.seed;
  mc.threads = cfg.threads;

  std::ofstream trial_out;
  TrialObserver observer;
  std::vector<std::string> trial_lines;
  if (!cfg.trial_csv.empty()) {
    // Collect per-trial rows indexed by (trial, hypothesis) so the dump is
    // deterministic under threading, then write once.
    trial_lines.assign(static_cast<std::size_t>(2 * mc.trials), std::string());
    observer = [&](long long t, Hypothesis hyp,
                   const std::vector<double>& stats,
                   const std::vector<Hypothesis>& dec) {
      std::ostringstream line;
      for (std::size_t d = 0; d < stats.size(); ++d) {
        line << t << ',' << (hyp == Hypothesis::H0 ? 0 : 1) << ','
             << to_string(kinds[d]) << ',' << detail::fmt_g(stats[d]) << ','
             << (dec[d] == Hypothesis::H0 ? 0 : 1) << '\n';
      }
      trial_lines[static_cast<std::size_t>(2 * t) +
                  (hyp == Hypothesis::H0 ? 0 : 1)] = line.str();
    };
  }

  const std::vector<EmpiricalRates> rates = empirical_error_rates(
      inst.layout, inst.model, inst.plan, specs, mc, observer);

  if (!cfg.trial_csv.empty()) {
    trial_out.open(cfg.trial_csv);
    if (!trial_out)
      throw ConfigError("cannot open trial_csv path: " + cfg.trial_csv);
    trial_out << "trial,hypothesis,detector,statistic,decision\n";
    for (const std::string& s : trial_lines) trial_out << s;
  }
  if (!cfg.layout_out.empty())
    write_layout(inst.layout, cfg.layout_out + ".csv",
                 cfg.layout_out + ".json");

  for (std::size_t d = 0; d < kinds.size(); ++d) {
    const CiRate& fa = rates[d].pfa;
    const CiRate& miss = rates[d].pm;
    results[d]["empirical"] = {
        {"pfa",
         {{"count", fa.count},
          {"trials", fa.trials},
          {"rate", fa.rate},
          {"ci_lo", fa.lo},
          {"ci_hi", fa.hi},
          {"ci_valid", fa.ci_valid}}},
        {"pm",
         {{"count", miss.count},
          {"trials", miss.trials},
          {"rate", miss.rate},
          {"ci_lo", miss.lo},
          {"ci_hi", miss.hi},
          {"ci_valid", miss.ci_valid}}}};
  }

  nlohmann::json doc;
  nlohmann::json jcfg;
  for (const auto& [k, v] : cfg.to_kv()) jcfg[k] = v;
  doc["config"] = std::move(jcfg);
  doc["caveat"] = kLeadingOrderCaveat;
  doc["results"] = std::move(results);
  return doc.dump(2) + "\n";
}

}  // namespace clusterdet
