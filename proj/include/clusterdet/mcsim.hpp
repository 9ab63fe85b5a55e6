#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "correlation.hpp"
#include "detectors.hpp"
#include "errors.hpp"
#include "netgeom.hpp"
#include "precoding.hpp"
#include "rng.hpp"
#include "tailprob.hpp"

namespace clusterdet {

// Worker count: explicit request, else the CLUSTERDET_THREADS environment
// variable, else the hardware concurrency.  Results never depend on the
// choice (per-trial seeding; order-independent integer aggregation).
inline int resolve_thread_count(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CLUSTERDET_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0 && v <= 4096)
      return static_cast<int>(v);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

// Draws z ~ CN(0, Sigma) as z = L g with L the lower Cholesky factor and g
// i.i.d. unit-variance circularly-symmetric entries.  Diagonal covariances
// take a scaling fast path (bitwise identical draws either way would need the
// same multiply order, so the fast path is also the exact L for a diagonal).
class GaussianSampler {
 public:
  explicit GaussianSampler(const Eigen::MatrixXcd& Sigma)
      : n_(static_cast<int>(Sigma.rows())) {
    if (Sigma.rows() != Sigma.cols())
      throw DimensionMismatchError("covariance must be square");
    diagonal_ = true;
    for (int j = 0; j < n_ && diagonal_; ++j)
      for (int i = 0; i < n_; ++i)
        if (i != j && Sigma(i, j) != std::complex<double>(0.0, 0.0)) {
          diagonal_ = false;
          break;
        }
    if (diagonal_) {
      scale_.resize(n_);
      for (int i = 0; i < n_; ++i) {
        const double d = Sigma(i, i).real();
        if (!(d > 0.0))
          throw NotPositiveDefiniteError("covariance factorization failure");
        scale_(i) = std::sqrt(d);
      }
    } else {
      Eigen::LLT<Eigen::MatrixXcd> llt(Sigma);
      if (llt.info() != Eigen::Success)
        throw NotPositiveDefiniteError("covariance factorization failure");
      L_ = llt.matrixL();
    }
  }

  int dim() const { return n_; }

  Eigen::VectorXcd sample(Rng& rng) const {
    Eigen::VectorXcd g(n_);
    for (int i = 0; i < n_; ++i) g(i) = rng.standard_cn();
    if (diagonal_) return scale_.asDiagonal() * g;
    return L_ * g;
  }

 private:
  int n_;
  bool diagonal_;
  Eigen::VectorXd scale_;
  Eigen::MatrixXcd L_;
};

inline Eigen::VectorXcd sample_gaussian_vector(const Eigen::MatrixXcd& Sigma,
                                               std::uint64_t seed) {
  GaussianSampler sampler(Sigma);
  Rng rng(seed);
  return sampler.sample(rng);
}

// Received vector for one measurement snapshot: per cluster, the precoded
// projection of that cluster's samples plus white receiver noise.
inline Eigen::VectorXcd simulate_received(const PrecodingPlan& plan,
                                          const Eigen::VectorXcd& y,
                                          Rng& rng) {
  if (y.size() != plan.n)
    throw DimensionMismatchError("measurement vector size mismatch");
  Eigen::VectorXcd z(plan.n_prime);
  const double sw = std::sqrt(plan.sigma_w2);
  int off = 0;
  Eigen::VectorXcd yi;
  for (const ClusterPlan& cp : plan.clusters) {
    yi.resize(cp.l);
    for (int k = 0; k < cp.l; ++k) yi(k) = y(cp.members[k]);
    Eigen::VectorXcd zi = cp.B.adjoint() * yi;
    for (int j = 0; j < cp.lp; ++j) zi(j) += sw * rng.standard_cn();
    z.segment(off, cp.lp) = zi;
    off += cp.lp;
  }
  return z;
}

inline Eigen::VectorXcd simulate_received(const PrecodingPlan& plan,
                                          const Eigen::VectorXcd& y,
                                          std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  return simulate_received(plan, y, rng);
}

// Binomial proportion with a normal-approximation confidence interval.  The
// interval is reported only once at least five successes have been seen
// (rare-event estimates below that are flagged, not trusted).
struct CiRate {
  long long count = 0;
  long long trials = 0;
  double rate = 0.0;
  double lo = 0.0, hi = 0.0;
  bool ci_valid = false;
};

inline CiRate make_ci_rate(long long count, long long trials, double z) {
  CiRate r;
  r.count = count;
  r.trials = trials;
  r.rate = trials > 0 ? static_cast<double>(count) / trials : 0.0;
  r.ci_valid = count >= 5;
  const double se =
      trials > 0 ? std::sqrt(std::max(0.0, r.rate * (1.0 - r.rate) / trials))
                 : 0.0;
  r.lo = std::max(0.0, r.rate - z * se);
  r.hi = std::min(1.0, r.rate + z * se);
  return r;
}

struct McConfig {
  long long trials = 10000;
  std::uint64_t base_seed = 1234567;
  double ci_z = 1.959963984540054;  // two-sided 95%
  int threads = 0;                  // 0: environment / hardware default
};

struct EmpiricalRates {
  CiRate pfa, pm;
};

namespace detail {

// Seed-stream tags keeping every random purpose on its own derived stream.
constexpr std::uint64_t kTagTrialH0 = 3;
constexpr std::uint64_t kTagTrialH1 = 4;
constexpr std::uint64_t kTagPppRealization = 10;
constexpr std::uint64_t kTagPppTrials = 20;

}  // namespace detail

// Observer for per-trial records (statistic and decision per detector, both
// hypotheses).  Values arrive indexed by trial, so recording is
// order-independent and thread-safe when each observer slot is distinct.
using TrialObserver = std::function<void(
    long long trial, Hypothesis hyp, const std::vector<double>& statistics,
    const std::vector<Hypothesis>& decisions)>;

// Shared-sample Monte Carlo over several detectors at once: every detector
// sees the same measurement and noise draws, so cross-detector comparisons
// are paired.  Trial t under each hypothesis consumes an independent stream
// seeded only by (base_seed, t), which makes the totals a pure function of
// the configuration regardless of thread count.
inline std::vector<EmpiricalRates> empirical_error_rates(
    const NetworkLayout& lay, const CorrelationModel& model,
    const PrecodingPlan& plan, const std::vector<DetectorSpec>& specs,
    const McConfig& mc, const TrialObserver& observer = nullptr) {
  if (specs.empty()) throw ConfigError("no detectors given");
  if (lay.n != plan.n)
    throw DimensionMismatchError("layout and plan disagree on node count");
  const HypothesisCovariances cov =
      hypothesis_covariances(model, lay, CovScope::full());
  const GaussianSampler sampler0(cov.sigma0);
  const GaussianSampler sampler1(cov.sigma1);
  const int nspec = static_cast<int>(specs.size());
  const long long trials = mc.trials;
  if (trials <= 0) throw ConfigError("trial count must be positive");

  int nthreads = resolve_thread_count(mc.threads);
  nthreads = static_cast<int>(
      std::max<long long>(1, std::min<long long>(nthreads, trials)));

  std::vector<std::vector<long long>> fa(nthreads,
                                         std::vector<long long>(nspec, 0));
  std::vector<std::vector<long long>> miss(nthreads,
                                           std::vector<long long>(nspec, 0));

  auto run_range = [&](int tid, long long t_begin, long long t_end) {
    std::vector<double> stats(nspec);
    std::vector<Hypothesis> dec(nspec);
    for (long long t = t_begin; t < t_end; ++t) {
      {
        Rng rng(derive_seed(mc.base_seed, static_cast<std::uint64_t>(t),
                            detail::kTagTrialH0));
        const Eigen::VectorXcd y = sampler0.sample(rng);
        const Eigen::VectorXcd z = simulate_received(plan, y, rng);
        for (int d = 0; d < nspec; ++d) {
          stats[d] = evaluate_statistic(specs[d].P, z);
          dec[d] = stats[d] > specs[d].tau ? Hypothesis::H1 : Hypothesis::H0;
          if (dec[d] == Hypothesis::H1) ++fa[tid][d];
        }
        if (observer) observer(t, Hypothesis::H0, stats, dec);
      }
      {
        Rng rng(derive_seed(mc.base_seed, static_cast<std::uint64_t>(t),
                            detail::kTagTrialH1));
        const Eigen::VectorXcd y = sampler1.sample(rng);
        const Eigen::VectorXcd z = simulate_received(plan, y, rng);
        for (int d = 0; d < nspec; ++d) {
          stats[d] = evaluate_statistic(specs[d].P, z);
          dec[d] = stats[d] > specs[d].tau ? Hypothesis::H1 : Hypothesis::H0;
          if (dec[d] == Hypothesis::H0) ++miss[tid][d];
        }
        if (observer) observer(t, Hypothesis::H1, stats, dec);
      }
    }
  };

  if (nthreads == 1) {
    run_range(0, 0, trials);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    const long long chunk = (trials + nthreads - 1) / nthreads;
    for (int tid = 0; tid < nthreads; ++tid) {
      const long long b = tid * chunk;
      const long long e = std::min(trials, b + chunk);
      if (b >= e) break;
      pool.emplace_back(run_range, tid, b, e);
    }
    for (std::thread& th : pool) th.join();
  }

  std::vector<EmpiricalRates> out(nspec);
  for (int d = 0; d < nspec; ++d) {
    long long fa_total = 0, miss_total = 0;
    for (int tid = 0; tid < nthreads; ++tid) {
      fa_total += fa[tid][d];
      miss_total += miss[tid][d];
    }
    out[d].pfa = make_ci_rate(fa_total, trials, mc.ci_z);
    out[d].pm = make_ci_rate(miss_total, trials, mc.ci_z);
  }
  return out;
}

inline EmpiricalRates empirical_error_rates(const NetworkLayout& lay,
                                            const CorrelationModel& model,
                                            const PrecodingPlan& plan,
                                            const DetectorSpec& spec,
                                            const McConfig& mc) {
  return empirical_error_rates(lay, model, plan,
                               std::vector<DetectorSpec>{spec}, mc)[0];
}

// ---- random-deployment averaging -------------------------------------------

// One (realization, detector) record of a Poisson-deployment study.
struct PppRow {
  int realization = 0;
  int n = 0;        // realized node count
  int n_prime = 0;  // channel uses
  DetectorKind kind = DetectorKind::Lcs;
  double tau = 0.0;
  double analytic_pfa = 0.0, analytic_pm = 0.0;  // leading-order values
  double refined_pfa = 0.0, refined_pm = 0.0;    // uniform refinement
  long long fa_count = 0, miss_count = 0, trials = 0;
};

struct PppDetectorSummary {
  DetectorKind kind = DetectorKind::Lcs;
  int realizations = 0;
  double analytic_pfa_mean = 0.0, analytic_pm_mean = 0.0;
  double refined_pm_mean = 0.0;
  double emp_pfa_mean = 0.0, emp_pm_mean = 0.0;
  double emp_pm_sd = 0.0;   // spread of per-realization empirical rates
  double emp_pm_se = 0.0;   // standard error of the empirical mean
  double analytic_pm_sd = 0.0;
  long long trials_total = 0;
};

struct PppStudyResult {
  int realizations = 0;
  int resampled = 0;  // realizations that failed and were redrawn
  std::vector<DetectorKind> kinds;
  std::vector<PppRow> rows;  // realization-major, kind-minor
};

inline PppDetectorSummary summarize_ppp(const PppStudyResult& study,
                                        DetectorKind kind) {
  PppDetectorSummary s;
  s.kind = kind;
  std::vector<double> emp_pm, ana_pm;
  for (const PppRow& row : study.rows) {
    if (row.kind != kind) continue;
    ++s.realizations;
    s.analytic_pfa_mean += row.analytic_pfa;
    s.analytic_pm_mean += row.analytic_pm;
    s.refined_pm_mean += row.refined_pm;
    const double pfa_hat =
        row.trials ? static_cast<double>(row.fa_count) / row.trials : 0.0;
    const double pm_hat =
        row.trials ? static_cast<double>(row.miss_count) / row.trials : 0.0;
    s.emp_pfa_mean += pfa_hat;
    s.emp_pm_mean += pm_hat;
    emp_pm.push_back(pm_hat);
    ana_pm.push_back(row.analytic_pm);
    s.trials_total += row.trials;
  }
  if (s.realizations == 0) return s;
  const double r = s.realizations;
  s.analytic_pfa_mean /= r;
  s.analytic_pm_mean /= r;
  s.refined_pm_mean /= r;
  s.emp_pfa_mean /= r;
  s.emp_pm_mean /= r;
  double acc = 0.0, acc_ana = 0.0;
  for (std::size_t i = 0; i < emp_pm.size(); ++i) {
    acc += (emp_pm[i] - s.emp_pm_mean) * (emp_pm[i] - s.emp_pm_mean);
    acc_ana += (ana_pm[i] - s.analytic_pm_mean) *
               (ana_pm[i] - s.analytic_pm_mean);
  }
  if (s.realizations > 1) {
    s.emp_pm_sd = std::sqrt(acc / (r - 1.0));
    s.analytic_pm_sd = std::sqrt(acc_ana / (r - 1.0));
  }
  s.emp_pm_se = s.emp_pm_sd / std::sqrt(r);
  return s;
}

// Averaged detection study over random Poisson deployments.  Per
// realization: sample the network, build the precoding (amplify-and-forward
// for distance-based correlation families, filter-and-forward for the
// stationary family), calibrate the threshold to the target false-alarm
// level, record analytic and empirical error rates on shared trial samples.
// Realizations whose numerical pipeline fails are logged, counted, and
// redrawn, up to a hard cap.
inline PppStudyResult ppp_study(const PppConfig& ppp,
                                const CorrelationModel& model,
                                const ChannelParams& channel,
                                const std::vector<DetectorKind>& kinds,
                                double beta, double alpha, int realizations,
                                const McConfig& mc, int l, double A0,
                                double epsilon) {
  if (realizations <= 0) throw ConfigError("realization count must be positive");
  if (kinds.empty()) throw ConfigError("no detectors given");
  PppStudyResult study;
  study.kinds = kinds;
  // Boundary operating points (calibrated threshold at or beyond the H1
  // mean) can reject a sizable fraction of draws, so the cap scales with the
  // requested ensemble while still guaranteeing termination.
  const int failure_cap = std::max(50, 5 * realizations);
  std::uint64_t attempt = 0;
  for (int r = 0; r < realizations; ++r) {
    const std::uint64_t lay_seed =
        derive_seed(ppp.seed, attempt, detail::kTagPppRealization);
    const std::uint64_t mc_seed =
        derive_seed(mc.base_seed, attempt, detail::kTagPppTrials);
    ++attempt;
    try {
      PppConfig local = ppp;
      local.seed = lay_seed;
      const NetworkLayout lay = sample_ppp_network(local, l, A0, epsilon);
      const PrecodingPlan plan =
          model.geometry_free()
              ? pfs_mac_plan(lay, model, channel, beta, DmaxMode::Realized)
              : afs_pac_plan(lay, model, channel, beta);
      const HypothesisCovariances cov =
          hypothesis_covariances(model, lay, CovScope::full());
      const ReceivedCovariances rc = received_covariances(plan, cov);

      std::vector<DetectorSpec> specs;
      std::vector<PppRow> rows;
      for (DetectorKind kind : kinds) {
        const Eigen::MatrixXcd P = detector_matrix(kind, rc);
        const QfLmgf lmgf0 = qf_lmgf(rc.xi0, P);
        const QfLmgf lmgf1 = qf_lmgf(rc.xi1, P);
        const double tau = threshold_for_pfa(lmgf0, alpha);
        const ErrorProbReport rep = error_probabilities(lmgf0, lmgf1, tau);
        PppRow row;
        row.realization = r;
        row.n = lay.n;
        row.n_prime = rc.n_prime;
        row.kind = kind;
        row.tau = tau;
        row.analytic_pfa = rep.pfa;
        row.analytic_pm = rep.pm;
        row.refined_pfa = refined_tail_probability(lmgf0, tau, TailSide::Upper);
        row.refined_pm = refined_tail_probability(lmgf1, tau, TailSide::Lower);
        row.trials = mc.trials;
        rows.push_back(row);
        DetectorSpec spec;
        spec.kind = kind;
        spec.P = P;
        spec.tau = tau;
        specs.push_back(std::move(spec));
      }

      McConfig local_mc = mc;
      local_mc.base_seed = mc_seed;
      const std::vector<EmpiricalRates> rates =
          empirical_error_rates(lay, model, plan, specs, local_mc);
      for (std::size_t d = 0; d < kinds.size(); ++d) {
        rows[d].fa_count = rates[d].pfa.count;
        rows[d].miss_count = rates[d].pm.count;
        study.rows.push_back(rows[d]);
      }
      ++study.realizations;
    } catch (const Error& e) {
      ++study.resampled;
      std::cerr << "deployment realization redrawn: " << e.what() << "\n";
      if (study.resampled > failure_cap)
        throw NoConvergenceError(
            "too many failed deployment realizations; configuration looks "
            "numerically infeasible");
      --r;  // redraw this slot with the next attempt seed
    }
  }
  return study;
}

struct AveragedMiss {
  double analytic_pm_mean = 0.0;
  double emp_pm_mean = 0.0;
  double ci_halfwidth = 0.0;  // on the empirical mean over realizations
  int realizations = 0;
  int resampled = 0;
};

inline AveragedMiss average_over_ppp(const PppConfig& ppp,
                                     const CorrelationModel& model,
                                     const ChannelParams& channel,
                                     DetectorKind kind, double beta,
                                     double alpha, int realizations,
                                     const McConfig& mc, double A0 = 1.0,
                                     double epsilon = 2.0) {
  const PppStudyResult study =
      ppp_study(ppp, model, channel, {kind}, beta, alpha, realizations, mc,
                ppp.nominal_l, A0, epsilon);
  const PppDetectorSummary s = summarize_ppp(study, kind);
  AveragedMiss out;
  out.analytic_pm_mean = s.analytic_pm_mean;
  out.emp_pm_mean = s.emp_pm_mean;
  out.ci_halfwidth = mc.ci_z * s.emp_pm_se;
  out.realizations = study.realizations;
  out.resampled = study.resampled;
  return out;
}

}  // namespace clusterdet
