#include <catch2/catch_amalgamated.hpp>

#include <clusterdet/correlation.hpp>
#include <clusterdet/netgeom.hpp>
#include <clusterdet/precoding.hpp>

#include <cmath>
#include <complex>

using namespace clusterdet;

namespace {

CorrelationModel equi_model(double rho, double s2 = 1.0, double v2 = 1.0) {
  CorrelationModel m;
  m.family = AcfFamily::Equicorrelated;
  m.sigma_s2 = s2;
  m.rho = rho;
  m.sigma_v2 = v2;
  return m;
}

NetworkLayout two_node_unit_layout() {
  // both nodes exactly 1 away from the CH so the channel gains are all 1
  NetworkLayout lay;
  lay.n = 2;
  lay.m = 1;
  lay.l_nominal = 2;
  lay.A0 = 4.0;
  lay.epsilon = 2.0;
  lay.region_w = lay.region_h = 2.0;
  lay.tiles_r = lay.tiles_c = 1;
  lay.ch_positions = {{1.0, 1.0}};
  lay.positions = {{0.0, 1.0}, {2.0, 1.0}};
  lay.cluster_of = {0, 0};
  lay.members = {{0, 1}};
  return lay;
}

}  // namespace

TEST_CASE("channel-use count rounds and clamps", "[precoding]") {
  REQUIRE(channel_uses(1.0, 5) == 5);
  REQUIRE(channel_uses(0.5, 5) == 3);  // lround half away from zero
  REQUIRE(channel_uses(0.5, 1) == 1);
  REQUIRE(channel_uses(0.1, 4) == 1);  // never below one use
  REQUIRE(channel_uses(1.0, 1) == 1);
  REQUIRE_THROWS_AS(channel_uses(0.0, 4), ConfigError);
  REQUIRE_THROWS_AS(channel_uses(1.5, 4), ConfigError);
}

TEST_CASE("orthogonal-access plan scales to the energy budget",
          "[precoding]") {
  const NetworkLayout lay = two_node_unit_layout();
  const CorrelationModel model = equi_model(0.4);
  ChannelParams ch;
  ch.E_bar = 2.0;
  ch.sigma_w2 = 1.0;

  const PrecodingPlan plan = afs_pac_plan(lay, model, ch, 1.0);
  REQUIRE(plan.strategy == Strategy::AfsPac);
  REQUIRE(plan.n_prime == 2);
  // c = sqrt(E / (s2 + v2)) = sqrt(2/2) = 1, times unit path gain
  REQUIRE(std::abs(plan.clusters[0].B(0, 0) - std::complex<double>(1, 0)) <
          1e-14);
  REQUIRE(std::abs(plan.clusters[0].B(1, 1) - std::complex<double>(1, 0)) <
          1e-14);
  REQUIRE(std::abs(plan.clusters[0].B(0, 1)) < 1e-14);

  // with unit channels the received covariances reduce to Sigma_j + w2 I
  const HypothesisCovariances hc =
      hypothesis_covariances(model, lay, CovScope::full());
  const ReceivedCovariances rc = received_covariances(
      plan, hc);
  REQUIRE((rc.xi1 - (hc.sigma1 + Eigen::MatrixXcd::Identity(2, 2)))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  REQUIRE((rc.xi0 - (hc.sigma0 + Eigen::MatrixXcd::Identity(2, 2)))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
}

TEST_CASE("per-node energy respects the budget", "[precoding]") {
  const CorrelationModel model = equi_model(0.5);
  ChannelParams ch;
  ch.E_bar = 3.0;
  ch.sigma_w2 = 1.0;

  SECTION("all transmitters saturate at full duty") {
    const NetworkLayout lay =
        build_grid_network(24, 4, 1.0, Placement::UniformRandom, 21);
    const PrecodingPlan plan = afs_pac_plan(lay, model, ch, 1.0);
    const Eigen::VectorXd e = per_node_energy(plan, model, 1.0);
    REQUIRE(e.size() == 24);
    for (int k = 0; k < 24; ++k)
      REQUIRE(e(k) == Catch::Approx(3.0).epsilon(1e-12));
  }

  SECTION("reduced duty silences the far nodes") {
    const NetworkLayout lay =
        build_grid_network(16, 4, 1.0, Placement::UniformRandom, 22);
    const PrecodingPlan plan = afs_pac_plan(lay, model, ch, 0.5);
    REQUIRE(plan.n_prime == 8);  // lround(0.5*4)=2 of 4 per cluster
    const Eigen::VectorXd e = per_node_energy(plan, model, 1.0);
    int silent = 0;
    for (int k = 0; k < 16; ++k) {
      if (e(k) == 0.0) ++silent;
      REQUIRE(e(k) <= 3.0 * (1.0 + 1e-12));
    }
    REQUIRE(silent == 8);

    // the selected set is the nearest half of each cluster
    for (const ClusterPlan& cp : plan.clusters) {
      REQUIRE(cp.lp == 2);
      double max_sel = 0.0, min_unsel = 1e300;
      for (int j = 0; j < cp.l; ++j) {
        const bool sel = std::find(cp.selected.begin(), cp.selected.end(),
                                   cp.members[j]) != cp.selected.end();
        if (sel)
          max_sel = std::max(max_sel, cp.dist(j));
        else
          min_unsel = std::min(min_unsel, cp.dist(j));
      }
      REQUIRE(max_sel <= min_unsel + 1e-12);
    }
  }

  SECTION("energy grows with the active-signal probability") {
    const NetworkLayout lay =
        build_grid_network(8, 4, 1.0, Placement::UniformRandom, 23);
    const PrecodingPlan plan = afs_pac_plan(lay, model, ch, 1.0);
    const Eigen::VectorXd e0 = per_node_energy(plan, model, 0.0);
    const Eigen::VectorXd e1 = per_node_energy(plan, model, 1.0);
    for (int k = 0; k < 8; ++k) REQUIRE(e0(k) < e1(k));
  }
}

TEST_CASE("coherent-sum plan forms scaled DFT beams", "[precoding]") {
  const int n = 8, l = 4;
  const CorrelationModel model = equi_model(0.6);
  ChannelParams ch;
  ch.E_bar = 1.0;
  ch.sigma_w2 = 1.0;

  const double dmax = centroid_max_distance(l, 1.0);
  const PrecodingPlan plan =
      pfs_mac_uniform_plan(n, l, model, ch, 1.0, dmax);
  REQUIRE(plan.strategy == Strategy::PfsMac);
  REQUIRE(plan.n_prime == n);
  REQUIRE(plan.clusters.size() == 2);

  const ClusterPlan& cp = plan.clusters[0];
  REQUIRE(cp.bins == std::vector<int>{0, 1, 2, 3});
  const double gamma = cp.gamma;
  REQUIRE(gamma ==
          Catch::Approx(pfs_mac_gamma(model, ch, 1.0, dmax, 2.0)));
  // first beam is the DC column: gamma/sqrt(l) in every entry
  for (int k = 0; k < l; ++k)
    REQUIRE(std::abs(cp.B(k, 0) -
                     std::complex<double>(gamma / std::sqrt(double(l)), 0)) <
            1e-14);
  // columns stay orthogonal after scaling: B^H B = gamma^2 I
  const Eigen::MatrixXcd bhb = cp.B.adjoint() * cp.B;
  REQUIRE((bhb - gamma * gamma * Eigen::MatrixXcd::Identity(l, l))
              .cwiseAbs()
              .maxCoeff() < 1e-12);

  const HypothesisCovariances hc = hypothesis_covariances(
      model, build_grid_network(n, l, 1.0, Placement::RegularLattice),
      CovScope::full());
  const ReceivedCovariances rc = received_covariances(plan, hc);

  // noise-only covariance is exactly white
  const double nu = gamma * gamma * model.sigma_v2 + ch.sigma_w2;
  REQUIRE((rc.xi0 - nu * Eigen::MatrixXcd::Identity(n, n))
              .cwiseAbs()
              .maxCoeff() < 1e-12);

  // signal-present covariance is block diagonal with the expected corner
  for (int a = 0; a < l; ++a)
    for (int b = l; b < n; ++b) {
      // cross-cluster coupling only through the DC beams
      if (a == 0 && b == l) {
        REQUIRE(std::abs(rc.xi1(a, b) -
                         gamma * gamma * model.sigma_s2 * model.rho *
                             double(l)) < 1e-12);
      } else {
        REQUIRE(std::abs(rc.xi1(a, b)) < 1e-12);
      }
    }
  const double dc_power =
      gamma * gamma * model.sigma_s2 * (1.0 + (l - 1) * model.rho);
  REQUIRE(std::abs(rc.xi1(0, 0) - (dc_power + nu)) < 1e-12);
  REQUIRE(std::abs(rc.xi1(1, 1) -
                   (gamma * gamma * model.sigma_s2 * (1.0 - model.rho) + nu)) <
          1e-12);

  // per-cluster view slices the same blocks
  const ReceivedCovariances c0 = cluster_received_covariances(rc, 0);
  REQUIRE((c0.xi1 - rc.xi1.topLeftCorner(l, l)).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((c0.xi0 - rc.xi0.topLeftCorner(l, l)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("coherent-sum plan at realized distances saturates the budget",
          "[precoding]") {
  const CorrelationModel model = equi_model(0.5);
  ChannelParams ch;
  ch.E_bar = 2.5;
  ch.sigma_w2 = 0.5;
  const NetworkLayout lay =
      build_grid_network(36, 6, 1.0, Placement::UniformRandom, 31);
  const PrecodingPlan plan =
      pfs_mac_plan(lay, model, ch, 1.0, DmaxMode::Realized);
  const Eigen::VectorXd e = per_node_energy(plan, model, 1.0);
  double emax = 0.0;
  for (int k = 0; k < lay.n; ++k) {
    REQUIRE(e(k) <= ch.E_bar * (1.0 + 1e-12));
    emax = std::max(emax, e(k));
  }
  // per-cluster scaling is set by the farthest member, which transmits at E
  REQUIRE(emax == Catch::Approx(ch.E_bar).epsilon(1e-12));
}

TEST_CASE("coherent-sum plan requires a stationary model", "[precoding]") {
  CorrelationModel m;
  m.family = AcfFamily::ExpScale;
  m.sigma_s2 = 1.0;
  m.rho = 10.0;
  const NetworkLayout lay =
      build_grid_network(8, 4, 1.0, Placement::RegularLattice);
  ChannelParams ch;
  REQUIRE_THROWS_AS(pfs_mac_plan(lay, m, ch, 1.0, DmaxMode::AnalyticBound),
                    NonStationaryModelError);
}

TEST_CASE("full-network inverse splits into local and coupling parts",
          "[precoding]") {
  ChannelParams ch;
  const int n = 12, l = 4;

  SECTION("uncorrelated clusters leave no coupling") {
    const PrecodingPlan plan = pfs_mac_uniform_plan(
        n, l, equi_model(0.0), ch, 1.0, centroid_max_distance(l, 1.0));
    const HypothesisCovariances hc = hypothesis_covariances(
        equi_model(0.0),
        build_grid_network(n, l, 1.0, Placement::RegularLattice),
        CovScope::full());
    const ReceivedCovariances rc = received_covariances(plan, hc);
    const FcsDecomposition fd = decompose_fcs(rc);
    REQUIRE((fd.reconstruct(rc.block_sizes) -
             (rc.xi0.inverse() - rc.xi1.inverse()))
                .cwiseAbs()
                .maxCoeff() < 1e-10);
    for (const auto& mb : fd.m_diag) REQUIRE(mb.cwiseAbs().maxCoeff() < 1e-12);
    for (const auto& [key, mb] : fd.m_cross)
      REQUIRE(mb.cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("correlated clusters produce nonzero coupling") {
    const PrecodingPlan plan = pfs_mac_uniform_plan(
        n, l, equi_model(0.7), ch, 1.0, centroid_max_distance(l, 1.0));
    const HypothesisCovariances hc = hypothesis_covariances(
        equi_model(0.7),
        build_grid_network(n, l, 1.0, Placement::RegularLattice),
        CovScope::full());
    const ReceivedCovariances rc = received_covariances(plan, hc);
    const FcsDecomposition fd = decompose_fcs(rc);
    REQUIRE((fd.reconstruct(rc.block_sizes) -
             (rc.xi0.inverse() - rc.xi1.inverse()))
                .cwiseAbs()
                .maxCoeff() < 1e-10);
    double cross = 0.0;
    for (const auto& [key, mb] : fd.m_cross)
      cross = std::max(cross, mb.cwiseAbs().maxCoeff());
    REQUIRE(cross > 1e-6);
  }
}

TEST_CASE("effective detection SNR composes the two link SNRs",
          "[precoding]") {
  const double snrm = std::pow(10.0, -0.6);
  const double snrc = std::pow(10.0, 1.2);
  const int l = 10;
  const double d2 = 2.0 * l * 1.0 / 4.0;  // squared centroid half-diagonal

  const double direct =
      snrm * snrc / (snrc + (1.0 + snrm) * d2);
  REQUIRE(pfs_mac_effective_snr_at(snrm, snrc, std::sqrt(d2), 2.0) ==
          Catch::Approx(direct).epsilon(1e-14));

  // huge channel SNR recovers the measurement SNR
  REQUIRE(pfs_mac_effective_snr_at(snrm, 1e12, std::sqrt(d2), 2.0) ==
          Catch::Approx(snrm).epsilon(1e-9));

  // decreasing in cluster size through the distance term
  double prev = 1e300;
  for (int ll : {1, 2, 5, 10, 20}) {
    const double g = pfs_mac_effective_snr_at(
        snrm, snrc, centroid_max_distance(ll, 1.0), 2.0);
    REQUIRE(g < prev);
    prev = g;
  }

  // consistency with the amplitude route: Gamma from the MAC gain equals the
  // closed-form composition with the same beta_eff * dmax^eps load
  CorrelationModel model = equi_model(0.9);
  ChannelParams ch;
  ch.E_bar = 4.0;
  ch.sigma_w2 = 1.0;
  const double beta_eff = 0.6;
  const double dmax = centroid_max_distance(l, 1.0);
  const double gamma = pfs_mac_gamma(model, ch, beta_eff, dmax, 2.0);
  const double got = mac_snr_from_gamma(gamma, model, ch);
  const double sm = snr_m(model);
  const double sc = snr_c(ch);
  const double want =
      sm * sc / (sc + (1.0 + sm) * beta_eff * std::pow(dmax, 2.0));
  REQUIRE(got == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("vanishing signal power collapses the hypotheses", "[precoding]") {
  ChannelParams ch;
  const CorrelationModel model = equi_model(0.5, 1e-12);
  const PrecodingPlan plan = pfs_mac_uniform_plan(
      8, 4, model, ch, 1.0, centroid_max_distance(4, 1.0));
  const HypothesisCovariances hc = hypothesis_covariances(
      model, build_grid_network(8, 4, 1.0, Placement::RegularLattice),
      CovScope::full());
  const ReceivedCovariances rc = received_covariances(plan, hc);
  REQUIRE((rc.xi1 - rc.xi0).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("strategy names round trip", "[precoding]") {
  REQUIRE(strategy_from_string(to_string(Strategy::AfsPac)) ==
          Strategy::AfsPac);
  REQUIRE(strategy_from_string(to_string(Strategy::PfsMac)) ==
          Strategy::PfsMac);
  REQUIRE_THROWS_AS(strategy_from_string("bogus"), ConfigError);
}
