// Experiment harness: error-probability sweeps, optimal-cluster-size scans,
// random-deployment studies, and Monte-Carlo validation for clustered
// detection of a correlated Gaussian field.
#include <CLI11.hpp>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <clusterdet/experiment.hpp>

namespace {

void emit(const clusterdet::ExperimentConfig& cfg, const std::string& text) {
  if (cfg.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(cfg.out);
  if (!os) throw clusterdet::ConfigError("cannot open output path: " + cfg.out);
  os << text;
}

}  // namespace

int main(int argc, char** argv) {
  using clusterdet::ExperimentConfig;
  CLI::App app{
      "clusterdet: detection error probabilities and energy/correlation "
      "trade-offs for clustered sensing of a correlated Gaussian field"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path,
                 "flat key=value config file (flags override file keys)");

  ExperimentConfig flags;  // staging area for command-line values
  std::vector<std::pair<CLI::Option*, std::function<void(ExperimentConfig&)>>>
      overrides;
  auto add = [&](const std::string& name, auto ExperimentConfig::* mem,
                 const char* desc) {
    CLI::Option* opt = app.add_option(name, flags.*mem, desc);
    overrides.emplace_back(
        opt, [mem, &flags](ExperimentConfig& c) { c.*mem = flags.*mem; });
    return opt;
  };

  add("--acf", &ExperimentConfig::acf,
      "correlation family: equicorrelated | exp-base | exp-scale | hyperbolic");
  add("--rho", &ExperimentConfig::rho, "correlation parameter");
  add("--sigma-s2", &ExperimentConfig::sigma_s2,
      "signal variance (used when snr_m_db=nan)");
  add("--sigma-v2", &ExperimentConfig::sigma_v2, "measurement noise variance");
  add("--sigma-w2", &ExperimentConfig::sigma_w2, "channel noise variance");
  add("--e-bar", &ExperimentConfig::e_bar,
      "per-node energy budget (used when snr_c_db=nan)");
  add("--snr-m-db", &ExperimentConfig::snr_m_db,
      "measurement SNR sigma_s2/sigma_v2 in dB");
  add("--snr-c-db", &ExperimentConfig::snr_c_db,
      "communication SNR E_bar/sigma_w2 in dB");
  add("--p1", &ExperimentConfig::p1, "prior probability of signal presence");
  add("--n", &ExperimentConfig::n, "total number of sensors");
  add("--l", &ExperimentConfig::l, "cluster size (single-point runs)");
  add("--l-list", &ExperimentConfig::l_list,
      "comma-separated cluster sizes; empty means all divisors of n");
  add("--a0", &ExperimentConfig::A0, "area per sensor");
  add("--epsilon", &ExperimentConfig::epsilon, "path-loss exponent");
  add("--placement", &ExperimentConfig::placement,
      "node placement: lattice | uniform");
  add("--lambda", &ExperimentConfig::lambda, "PPP intensity per unit area");
  add("--strategy", &ExperimentConfig::strategy,
      "precoding: pfs-mac | afs-pac | auto");
  add("--beta", &ExperimentConfig::beta, "bandwidth fraction l'/l");
  add("--dmax-convention", &ExperimentConfig::dmax_convention,
      "worst-case distance on ideal cells: centroid | bound | realized");
  add("--detector", &ExperimentConfig::detector, "fcs | lcs | ed | all");
  add("--threshold-rule", &ExperimentConfig::threshold_rule,
      "mean-under-h1 | target-alpha");
  add("--alpha", &ExperimentConfig::alpha, "target false-alarm level");
  add("--snr-c-min-db", &ExperimentConfig::snr_c_min_db, "sweep grid start");
  add("--snr-c-max-db", &ExperimentConfig::snr_c_max_db, "sweep grid end");
  add("--snr-c-points", &ExperimentConfig::snr_c_points, "sweep grid points");
  add("--trials", &ExperimentConfig::trials, "Monte-Carlo trials");
  add("--realizations", &ExperimentConfig::realizations,
      "random deployments to average");
  add("--seed", &ExperimentConfig::seed, "base seed");
  add("--threads", &ExperimentConfig::threads,
      "worker threads (0: CLUSTERDET_THREADS or hardware)");
  add("--out", &ExperimentConfig::out, "output path (default stdout)");
  add("--trial-csv", &ExperimentConfig::trial_csv,
      "per-trial statistic dump (mc-validate)");
  add("--layout-out", &ExperimentConfig::layout_out,
      "layout dump path prefix (mc-validate)");

  for (const auto& [name, desc] :
       std::initializer_list<std::pair<const char*, const char*>>{
           {"sweep-l", "error probabilities across the cluster-size grid"},
           {"sweep-snr", "error probabilities across a communication-SNR grid"},
           {"lopt", "optimal cluster size per communication-SNR point"},
           {"ppp", "averaged miss probability over random deployments"},
           {"mc-validate",
            "analytic vs Monte-Carlo rates on one operating point"}})
    app.add_subcommand(name, desc)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty())
      cfg = clusterdet::parse_config_file(config_path, cfg);
    for (const auto& [opt, apply] : overrides)
      if (opt->count() > 0) apply(cfg);

    const std::string verb = app.get_subcommands().front()->get_name();
    std::string text;
    if (verb == "sweep-l")
      text = sweep_csv(cfg, sweep_cluster_size(cfg), "sweep-l");
    else if (verb == "sweep-snr")
      text = sweep_csv(cfg, sweep_snr_c(cfg), "sweep-snr");
    else if (verb == "lopt")
      text = lopt_csv(cfg, find_l_opt(cfg));
    else if (verb == "ppp")
      text = ppp_csv(cfg, run_ppp_experiment(cfg));
    else
      text = mc_validate(cfg);
    emit(cfg, text);
  } catch (const clusterdet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const clusterdet::Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
