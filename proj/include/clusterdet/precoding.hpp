#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <utility>
#include <vector>

#include "correlation.hpp"
#include "errors.hpp"
#include "netgeom.hpp"

namespace clusterdet {

enum class Strategy { AfsPac, PfsMac };

inline std::string to_string(Strategy s) {
  return s == Strategy::AfsPac ? "afs-pac" : "pfs-mac";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "afs-pac") return Strategy::AfsPac;
  if (s == "pfs-mac") return Strategy::PfsMac;
  throw ConfigError("unknown strategy: " + s);
}

// How the PFS-MAC scale picks its worst-case distance: the corner-to-corner
// bound sqrt(2*l*A0), or the realized per-cluster maximum.
enum class DmaxMode { AnalyticBound, Realized };

struct ChannelParams {
  double E_bar = 1.0;    // per-node average energy budget
  double sigma_w2 = 1.0; // communication-noise power at the CH / FC
  double p1 = 1.0;       // prior of the signal-present hypothesis in the
                         // energy accounting; 1 gives the worst-case budget

  void validate() const {
    if (E_bar <= 0 || sigma_w2 <= 0)
      throw ConfigError("E_bar and sigma_w2 must be positive");
    if (p1 < 0 || p1 > 1) throw ConfigError("p1 must lie in [0,1]");
  }
};

// Bandwidth-use count for a cluster of realized size l: at least one channel
// use, at most l, nearest integer to beta*l.
inline int channel_uses(double beta, int l) {
  if (beta <= 0 || beta > 1) throw ConfigError("beta must lie in (0,1]");
  const int lp = static_cast<int>(std::lround(beta * l));
  return std::min(l, std::max(1, lp));
}

// One cluster's slice of a precoding plan.  C maps the cluster's l measured
// samples to lp transmitted coefficients (rows = nodes, columns = channel
// uses); B = A*C is the composite measurement-to-CH map including path loss.
struct ClusterPlan {
  std::vector<int> members;   // global node ids, in covariance-row order
  std::vector<int> selected;  // AFS-PAC: member positions that transmit
  std::vector<int> bins;      // PFS-MAC: DFT bins used
  Eigen::VectorXd gains;      // path-loss amplitude gains a_k per member
  Eigen::VectorXd dist;       // node-to-CH distances per member
  Eigen::MatrixXcd C;         // l x lp precoder
  Eigen::MatrixXcd B;         // l x lp composite A*C
  double gamma = 0.0;         // PFS-MAC scale; 0 for AFS-PAC
  double dmax = 0.0;          // distance used in the PFS-MAC scale
  int l = 0;
  int lp = 0;
};

struct PrecodingPlan {
  Strategy strategy = Strategy::AfsPac;
  double beta = 1.0;       // nominal bandwidth fraction
  double sigma_w2 = 1.0;   // copied from the channel for covariance assembly
  double E_bar = 1.0;
  std::vector<ClusterPlan> clusters;
  int n = 0;        // network size the plan was built against
  int n_prime = 0;  // total transmitted dimension, sum of lp

  // Starting row of each cluster's slice of the received vector.
  std::vector<int> offsets() const {
    std::vector<int> off(clusters.size() + 1, 0);
    for (std::size_t i = 0; i < clusters.size(); ++i)
      off[i + 1] = off[i] + clusters[i].lp;
    return off;
  }

  std::vector<int> block_sizes() const {
    std::vector<int> bs;
    bs.reserve(clusters.size());
    for (const auto& c : clusters) bs.push_back(c.lp);
    return bs;
  }
};

namespace detail {

inline void check_energy_feasible(const PrecodingPlan& plan,
                                  const CorrelationModel& model, double p1) {
  const double power = model.sigma_v2 + p1 * model.sigma_s2;
  for (const auto& c : plan.clusters)
    for (int k = 0; k < c.l; ++k) {
      const double ek = power * c.C.row(k).squaredNorm();
      if (ek > plan.E_bar * (1.0 + 1e-12))
        throw Error("plan violates the per-node energy budget");
    }
}

}  // namespace detail

// Amplify-and-forward over parallel access channels: every transmitting node
// scales its raw measurement by the common gain sqrt(E_bar/(sigma_s2+sigma_v2))
// and gets its own channel use.  With beta < 1, the nodes nearest their CH
// transmit and the rest stay silent (zero rows in C).
inline PrecodingPlan afs_pac_plan(const NetworkLayout& lay,
                                  const CorrelationModel& model,
                                  const ChannelParams& channel, double beta) {
  model.validate();
  channel.validate();
  PrecodingPlan plan;
  plan.strategy = Strategy::AfsPac;
  plan.beta = beta;
  plan.sigma_w2 = channel.sigma_w2;
  plan.E_bar = channel.E_bar;
  plan.n = lay.n;
  const double c_gain =
      std::sqrt(channel.E_bar / (model.sigma_s2 + model.sigma_v2));
  for (int i = 0; i < lay.m; ++i) {
    const auto& mem = lay.members[i];
    const int l = static_cast<int>(mem.size());
    if (l == 0) continue;  // empty cluster contributes nothing
    ClusterPlan cp;
    cp.members = mem;
    cp.l = l;
    cp.lp = channel_uses(beta, l);
    cp.gains.resize(l);
    cp.dist.resize(l);
    for (int k = 0; k < l; ++k) {
      cp.dist(k) = lay.distance_to_ch(mem[k]);
      cp.gains(k) = path_loss_gain(lay, mem[k]);
    }
    // Transmitting subset: nearest lp nodes, ties by node id.
    std::vector<int> order(l);
    for (int k = 0; k < l; ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (cp.dist(a) != cp.dist(b)) return cp.dist(a) < cp.dist(b);
      return mem[a] < mem[b];
    });
    cp.selected.assign(order.begin(), order.begin() + cp.lp);
    std::sort(cp.selected.begin(), cp.selected.end());
    cp.C = Eigen::MatrixXcd::Zero(l, cp.lp);
    cp.B = Eigen::MatrixXcd::Zero(l, cp.lp);
    for (int j = 0; j < cp.lp; ++j) {
      const int k = cp.selected[j];
      cp.C(k, j) = c_gain;
      cp.B(k, j) = cp.gains(k) * c_gain;
    }
    plan.n_prime += cp.lp;
    plan.clusters.push_back(std::move(cp));
  }
  if (plan.n_prime == 0) throw EmptyNetworkError("plan covers no nodes");
  detail::check_energy_feasible(plan, model, channel.p1);
  return plan;
}

// Scale of the PFS-MAC precoder: saturates the energy budget for a node at
// distance dmax when the signal-present prior is 1.
inline double pfs_mac_gamma(const CorrelationModel& model,
                            const ChannelParams& channel, double beta_eff,
                            double dmax, double epsilon) {
  if (beta_eff <= 0 || dmax <= 0) throw ConfigError("invalid PFS-MAC scale inputs");
  return std::sqrt(channel.E_bar / ((model.sigma_s2 + model.sigma_v2) *
                                    beta_eff * std::pow(dmax, epsilon)));
}

namespace detail {

inline ClusterPlan pfs_mac_cluster(const CorrelationModel& model,
                                   const ChannelParams& channel, double beta,
                                   int l, double dmax, double epsilon) {
  ClusterPlan cp;
  cp.l = l;
  cp.lp = channel_uses(beta, l);
  cp.dmax = dmax;
  const double beta_eff = static_cast<double>(cp.lp) / l;
  cp.gamma = pfs_mac_gamma(model, channel, beta_eff, dmax, epsilon);
  const auto order = equicorrelated_psd_order(l);
  cp.bins.assign(order.begin(), order.begin() + cp.lp);
  // B = A * (gamma * A^{-1} * F) collapses to gamma*F exactly; build it that
  // way instead of multiplying the gains in and out.
  const Eigen::MatrixXcd F = dft_columns(l, cp.bins);
  cp.B = cp.gamma * F;
  return cp;
}

}  // namespace detail

// Filter-and-forward over a shared multiple-access channel: each cluster
// transmits lp DFT coefficients of its measurement block, channel-inverted
// per node and scaled so the worst-placed node exactly meets the energy
// budget.  Restricted to the equicorrelated (stationary) family, whose PSD
// ordering and DFT eigenbasis are exact.
inline PrecodingPlan pfs_mac_plan(const NetworkLayout& lay,
                                  const CorrelationModel& model,
                                  const ChannelParams& channel, double beta,
                                  DmaxMode dmax_mode) {
  model.validate();
  channel.validate();
  if (!model.geometry_free())
    throw NonStationaryModelError(
        "PFS-MAC requires the stationary equicorrelated model");
  PrecodingPlan plan;
  plan.strategy = Strategy::PfsMac;
  plan.beta = beta;
  plan.sigma_w2 = channel.sigma_w2;
  plan.E_bar = channel.E_bar;
  plan.n = lay.n;
  for (int i = 0; i < lay.m; ++i) {
    const auto& mem = lay.members[i];
    const int l = static_cast<int>(mem.size());
    if (l == 0) continue;
    // The analytic bound depends on the cluster cell area (l_nominal*A0),
    // not on how many nodes a random realization put inside the cell.
    const double dmax =
        dmax_mode == DmaxMode::AnalyticBound
            ? max_intracluster_distance(lay.l_nominal, lay.A0)
            : std::max(lay.d_min(), realized_max_distance(lay, i));
    ClusterPlan cp =
        detail::pfs_mac_cluster(model, channel, beta, l, dmax, lay.epsilon);
    cp.members = mem;
    cp.gains.resize(l);
    cp.dist.resize(l);
    for (int k = 0; k < l; ++k) {
      cp.dist(k) = lay.distance_to_ch(mem[k]);
      cp.gains(k) = path_loss_gain(lay, mem[k]);
    }
    cp.C = cp.gamma * cp.gains.cwiseInverse().asDiagonal() *
           dft_columns(l, cp.bins);
    plan.n_prime += cp.lp;
    plan.clusters.push_back(std::move(cp));
  }
  if (plan.n_prime == 0) throw EmptyNetworkError("plan covers no nodes");
  detail::check_energy_feasible(plan, model, channel.p1);
  return plan;
}

// Idealized uniform PFS-MAC plan: n = m*l nodes in equal square clusters,
// every node treated as sitting at the supplied worst-case distance.  This is
// the geometry-free model behind the closed-form sweeps; pass
// centroid_max_distance(l, A0) or max_intracluster_distance(l, A0) as dmax.
inline PrecodingPlan pfs_mac_uniform_plan(int n, int l,
                                          const CorrelationModel& model,
                                          const ChannelParams& channel,
                                          double beta, double dmax,
                                          double epsilon = 2.0) {
  model.validate();
  channel.validate();
  if (!model.geometry_free())
    throw NonStationaryModelError(
        "PFS-MAC requires the stationary equicorrelated model");
  if (n <= 0 || l <= 0 || n % l != 0)
    throw NonDivisibleError("uniform plan needs l dividing n");
  PrecodingPlan plan;
  plan.strategy = Strategy::PfsMac;
  plan.beta = beta;
  plan.sigma_w2 = channel.sigma_w2;
  plan.E_bar = channel.E_bar;
  plan.n = n;
  const int m = n / l;
  for (int i = 0; i < m; ++i) {
    ClusterPlan cp = detail::pfs_mac_cluster(model, channel, beta, l, dmax, epsilon);
    cp.members.resize(l);
    for (int k = 0; k < l; ++k) cp.members[k] = i * l + k;
    cp.dist = Eigen::VectorXd::Constant(l, dmax);
    cp.gains = Eigen::VectorXd::Constant(l, std::pow(dmax, -epsilon / 2.0));
    cp.C = cp.gamma * cp.gains.cwiseInverse().asDiagonal() *
           dft_columns(l, cp.bins);
    plan.n_prime += cp.lp;
    plan.clusters.push_back(std::move(cp));
  }
  detail::check_energy_feasible(plan, model, channel.p1);
  return plan;
}

struct ReceivedCovariances {
  Eigen::MatrixXcd xi0;  // noise-only hypothesis, always block-diagonal
  Eigen::MatrixXcd xi1;  // signal-present hypothesis
  std::vector<int> block_sizes;
  int n_prime = 0;
};

// Covariances of the stacked CH-received vector z = B^H y + w under both
// hypotheses: Xi_j = B^H Sigma_j B + sigma_w2 I, assembled cluster-block-wise.
inline ReceivedCovariances received_covariances(const PrecodingPlan& plan,
                                                const HypothesisCovariances& cov) {
  if (cov.sigma1.rows() != plan.n)
    throw DimensionMismatchError(
        "covariance size does not match the plan's network size");
  ReceivedCovariances rc;
  rc.n_prime = plan.n_prime;
  rc.block_sizes = plan.block_sizes();
  rc.xi0 = Eigen::MatrixXcd::Zero(plan.n_prime, plan.n_prime);
  rc.xi1 = Eigen::MatrixXcd::Zero(plan.n_prime, plan.n_prime);
  const auto off = plan.offsets();
  const int mc = static_cast<int>(plan.clusters.size());
  for (int i = 0; i < mc; ++i) {
    const auto& ci = plan.clusters[i];
    for (int j = 0; j < mc; ++j) {
      const auto& cj = plan.clusters[j];
      Eigen::MatrixXcd S1(ci.l, cj.l);
      for (int a = 0; a < ci.l; ++a)
        for (int b = 0; b < cj.l; ++b)
          S1(a, b) = cov.sigma1(ci.members[a], cj.members[b]);
      rc.xi1.block(off[i], off[j], ci.lp, cj.lp) = ci.B.adjoint() * S1 * cj.B;
    }
    // Sigma0 is diagonal, so Xi0 only has diagonal cluster blocks.
    Eigen::MatrixXcd S0(ci.l, ci.l);
    for (int a = 0; a < ci.l; ++a)
      for (int b = 0; b < ci.l; ++b)
        S0(a, b) = cov.sigma0(ci.members[a], ci.members[b]);
    rc.xi0.block(off[i], off[i], ci.lp, ci.lp) = ci.B.adjoint() * S0 * ci.B;
    rc.xi0.block(off[i], off[i], ci.lp, ci.lp) +=
        plan.sigma_w2 * Eigen::MatrixXcd::Identity(ci.lp, ci.lp);
    rc.xi1.block(off[i], off[i], ci.lp, ci.lp) +=
        plan.sigma_w2 * Eigen::MatrixXcd::Identity(ci.lp, ci.lp);
  }
  rc.xi0 = ((rc.xi0 + rc.xi0.adjoint()) / 2.0).eval();
  rc.xi1 = ((rc.xi1 + rc.xi1.adjoint()) / 2.0).eval();
  return rc;
}

// Per-cluster received covariances (the diagonal blocks of the full pair).
inline ReceivedCovariances cluster_received_covariances(
    const ReceivedCovariances& rc, int i) {
  std::vector<int> off(rc.block_sizes.size() + 1, 0);
  for (std::size_t b = 0; b < rc.block_sizes.size(); ++b)
    off[b + 1] = off[b] + rc.block_sizes[b];
  ReceivedCovariances out;
  const int sz = rc.block_sizes.at(i);
  out.n_prime = sz;
  out.block_sizes = {sz};
  out.xi0 = rc.xi0.block(off[i], off[i], sz, sz);
  out.xi1 = rc.xi1.block(off[i], off[i], sz, sz);
  return out;
}

// Average energy spent by each node: E_k = (sigma_v2 + p1*sigma_s2) times the
// squared row norm of the cluster precoder; zero for silent and uncovered
// nodes.
inline Eigen::VectorXd per_node_energy(const PrecodingPlan& plan,
                                       const CorrelationModel& model,
                                       double p1) {
  if (p1 < 0 || p1 > 1) throw ConfigError("p1 must lie in [0,1]");
  const double power = model.sigma_v2 + p1 * model.sigma_s2;
  Eigen::VectorXd e = Eigen::VectorXd::Zero(plan.n);
  for (const auto& c : plan.clusters)
    for (int k = 0; k < c.l; ++k)
      e(c.members[k]) = power * c.C.row(k).squaredNorm();
  return e;
}

// Measurement and channel SNR aliases used by the closed-form expressions.
inline double snr_m(const CorrelationModel& model) {
  return model.sigma_s2 / model.sigma_v2;
}
inline double snr_c(const ChannelParams& channel) {
  return channel.E_bar / channel.sigma_w2;
}

// Effective per-sample SNR at the CH with a PFS-MAC plan whose scale assumes
// worst-case distance dmax.
inline double pfs_mac_effective_snr_at(double snrm, double snrc, double dmax,
                                       double epsilon) {
  return snrm * snrc / (snrc + (1.0 + snrm) * std::pow(dmax, epsilon));
}

// Corner-to-corner worst-case form quoted with the strategy definition.
inline double pfs_mac_effective_snr(double snrm, double snrc, int l, double A0,
                                    double epsilon) {
  return pfs_mac_effective_snr_at(snrm, snrc, max_intracluster_distance(l, A0),
                                  epsilon);
}

// Effective SNR of node k's contribution under AFS-PAC.
inline double afs_pac_effective_snr(double snrm, double snrc, double dist,
                                    double epsilon) {
  return snrm * snrc / (snrc + (1.0 + snrm) * std::pow(dist, epsilon));
}

// Effective SNR realized by a PFS-MAC scale gamma:
// gamma^2 sigma_s2 / (gamma^2 sigma_v2 + sigma_w2).
inline double mac_snr_from_gamma(double gamma, const CorrelationModel& model,
                                 const ChannelParams& channel) {
  const double g2 = gamma * gamma;
  return g2 * model.sigma_s2 / (g2 * model.sigma_v2 + channel.sigma_w2);
}

// Three-term split of the full-correlation quadratic-form matrix: the
// block-diagonal local term, per-cluster corrections M_ii, and inter-cluster
// couplings M_ij.  Their sum reconstructs Xi0^{-1} - Xi1^{-1} exactly; the
// M terms measure what a per-cluster detector discards.
struct FcsDecomposition {
  Eigen::MatrixXcd local;                 // block-diagonal per-cluster term
  std::vector<Eigen::MatrixXcd> m_diag;   // per-cluster corrections
  std::map<std::pair<int, int>, Eigen::MatrixXcd> m_cross;  // i != j couplings

  Eigen::MatrixXcd reconstruct(const std::vector<int>& block_sizes) const {
    Eigen::MatrixXcd sum = local;
    std::vector<int> off(block_sizes.size() + 1, 0);
    for (std::size_t b = 0; b < block_sizes.size(); ++b)
      off[b + 1] = off[b] + block_sizes[b];
    for (std::size_t i = 0; i < m_diag.size(); ++i)
      sum.block(off[i], off[i], block_sizes[i], block_sizes[i]) += m_diag[i];
    for (const auto& [ij, M] : m_cross)
      sum.block(off[ij.first], off[ij.second], block_sizes[ij.first],
                block_sizes[ij.second]) += M;
    return sum;
  }
};

inline FcsDecomposition decompose_fcs(const ReceivedCovariances& rc) {
  const int np = rc.n_prime;
  Eigen::LLT<Eigen::MatrixXcd> llt1(rc.xi1);
  Eigen::LLT<Eigen::MatrixXcd> llt0(rc.xi0);
  if (llt1.info() != Eigen::Success || llt0.info() != Eigen::Success)
    throw NotPositiveDefiniteError("received covariance is not positive definite");
  const Eigen::MatrixXcd inv1 = llt1.solve(Eigen::MatrixXcd::Identity(np, np));

  FcsDecomposition dec;
  dec.local = Eigen::MatrixXcd::Zero(np, np);
  std::vector<int> off(rc.block_sizes.size() + 1, 0);
  for (std::size_t b = 0; b < rc.block_sizes.size(); ++b)
    off[b + 1] = off[b] + rc.block_sizes[b];
  const int mc = static_cast<int>(rc.block_sizes.size());
  for (int i = 0; i < mc; ++i) {
    const int sz = rc.block_sizes[i];
    const Eigen::MatrixXcd xi1_ii = rc.xi1.block(off[i], off[i], sz, sz);
    const Eigen::MatrixXcd xi0_ii = rc.xi0.block(off[i], off[i], sz, sz);
    Eigen::LLT<Eigen::MatrixXcd> li1(xi1_ii), li0(xi0_ii);
    if (li1.info() != Eigen::Success || li0.info() != Eigen::Success)
      throw NotPositiveDefiniteError("cluster covariance block is singular");
    const Eigen::MatrixXcd id = Eigen::MatrixXcd::Identity(sz, sz);
    const Eigen::MatrixXcd inv1_ii = li1.solve(id);
    dec.local.block(off[i], off[i], sz, sz) = li0.solve(id) - inv1_ii;
    dec.m_diag.push_back(inv1_ii - inv1.block(off[i], off[i], sz, sz));
    for (int j = 0; j < mc; ++j)
      if (j != i)
        dec.m_cross[{i, j}] = -inv1.block(off[i], off[j], sz, rc.block_sizes[j]);
  }
  return dec;
}

}  // namespace clusterdet
