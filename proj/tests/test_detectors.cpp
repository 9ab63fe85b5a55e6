#include <catch2/catch_amalgamated.hpp>

#include <clusterdet/correlation.hpp>
#include <clusterdet/detectors.hpp>
#include <clusterdet/netgeom.hpp>
#include <clusterdet/precoding.hpp>

#include "oracles.hpp"

#include <cmath>
#include <complex>

using namespace clusterdet;

namespace {

ReceivedCovariances uniform_rc(int n, int l, double rho, double beta = 1.0) {
  CorrelationModel model;
  model.family = AcfFamily::Equicorrelated;
  model.sigma_s2 = 1.0;
  model.rho = rho;
  model.sigma_v2 = 1.0;
  ChannelParams ch;
  const PrecodingPlan plan = pfs_mac_uniform_plan(
      n, l, model, ch, beta, centroid_max_distance(l, 1.0));
  const HypothesisCovariances hc = hypothesis_covariances(
      model, build_grid_network(n, l, 1.0, Placement::RegularLattice),
      CovScope::full());
  return received_covariances(plan, hc);
}

}  // namespace

TEST_CASE("inverse-difference statistic matrix from scaled identities",
          "[detectors]") {
  ReceivedCovariances rc;
  rc.n_prime = 3;
  rc.block_sizes = {3};
  rc.xi0 = Eigen::MatrixXcd::Identity(3, 3);
  rc.xi1 = 2.0 * Eigen::MatrixXcd::Identity(3, 3);
  const Eigen::MatrixXcd p = fcs_matrix(rc);
  REQUIRE((p - 0.5 * Eigen::MatrixXcd::Identity(3, 3)).cwiseAbs().maxCoeff() <
          1e-14);
  // single block: the blockwise variant is the same matrix
  REQUIRE((lcs_matrix(rc) - p).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("whitened statistic eigenvalues stay inside the unit interval",
          "[detectors]") {
  // for P = Xi0^-1 - Xi1^-1 with Xi1 = Xi0 + S (S psd), eig(Xi0 P) in [0,1)
  auto [xi0, xi1] = oracles::random_pd_pair(6, 99);
  ReceivedCovariances rc;
  rc.n_prime = 6;
  rc.block_sizes = {6};
  rc.xi0 = xi0;
  rc.xi1 = xi1;
  const Eigen::MatrixXcd p = fcs_matrix(rc);
  const Eigen::MatrixXcd m = xi0 * p;  // similar to Xi0^{1/2} P Xi0^{1/2}
  const Eigen::VectorXd ev = m.eigenvalues().real();
  for (int k = 0; k < 6; ++k) {
    REQUIRE(ev(k) > -1e-12);
    REQUIRE(ev(k) < 1.0);
  }
}

TEST_CASE("blockwise statistic zeroes the cross-cluster entries",
          "[detectors]") {
  const ReceivedCovariances rc = uniform_rc(12, 4, 0.7);
  const Eigen::MatrixXcd p = lcs_matrix(rc);
  int off = 0;
  for (std::size_t i = 0; i < rc.block_sizes.size(); ++i) {
    const int li = rc.block_sizes[i];
    for (int a = 0; a < rc.n_prime; ++a)
      for (int b = off; b < off + li; ++b)
        if (a < off || a >= off + li) {
          REQUIRE(p(a, b) == std::complex<double>(0.0, 0.0));
        }
    off += li;
  }

  // per-block content matches the inverse difference of the sliced blocks
  off = 0;
  for (std::size_t i = 0; i < rc.block_sizes.size(); ++i) {
    const int li = rc.block_sizes[i];
    const ReceivedCovariances ci =
        cluster_received_covariances(rc, static_cast<int>(i));
    const Eigen::MatrixXcd want = ci.xi0.inverse() - ci.xi1.inverse();
    REQUIRE((p.block(off, off, li, li) - want).cwiseAbs().maxCoeff() < 1e-10);
    off += li;
  }
}

TEST_CASE("scalar clusters reduce the blockwise statistic to a diagonal",
          "[detectors]") {
  const ReceivedCovariances rc = uniform_rc(4, 1, 0.9);
  const Eigen::MatrixXcd p = lcs_matrix(rc);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      if (a != b) REQUIRE(std::abs(p(a, b)) < 1e-14);
  const double want =
      1.0 / rc.xi0(0, 0).real() - 1.0 / rc.xi1(0, 0).real();
  REQUIRE(std::abs(p(0, 0).real() - want) < 1e-12);
}

TEST_CASE("energy statistic matrix is a scaled identity", "[detectors]") {
  REQUIRE((ed_matrix(5) - Eigen::MatrixXcd::Identity(5, 5))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  const double nu = 2.5;
  REQUIRE((ed_matrix(5, nu) - Eigen::MatrixXcd::Identity(5, 5) / nu)
              .cwiseAbs()
              .maxCoeff() < 1e-15);
  REQUIRE_THROWS_AS(ed_matrix(0), ConfigError);
  REQUIRE_THROWS_AS(ed_matrix(5, 0.0), ConfigError);
  REQUIRE_THROWS_AS(ed_matrix(5, -1.0), ConfigError);
}

TEST_CASE("energy decisions are invariant to the normalization",
          "[detectors]") {
  const ReceivedCovariances rc = uniform_rc(8, 4, 0.5);
  const double nu = rc.xi0(0, 0).real();
  const double tau_raw = 10.0;
  const DetectorSpec raw = make_detector(DetectorKind::Ed, rc, tau_raw, 1.0);
  const DetectorSpec scaled =
      make_detector(DetectorKind::Ed, rc, tau_raw / nu, nu);

  Rng rng(314159);
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXcd z(8);
    for (int k = 0; k < 8; ++k) z(k) = 2.0 * rng.standard_cn();
    REQUIRE(decide(raw, z) == decide(scaled, z));
  }
}

TEST_CASE("quadratic statistic evaluation", "[detectors]") {
  const Eigen::MatrixXcd eye = Eigen::MatrixXcd::Identity(3, 3);
  Eigen::VectorXcd e1 = Eigen::VectorXcd::Zero(3);
  e1(0) = 1.0;
  REQUIRE(evaluate_statistic(eye, e1) == Catch::Approx(1.0));

  Eigen::VectorXcd z(3);
  z << std::complex<double>(1, 2), std::complex<double>(-3, 0.5),
      std::complex<double>(0, -1);
  REQUIRE(evaluate_statistic(eye, z) ==
          Catch::Approx(z.squaredNorm()).epsilon(1e-14));
  REQUIRE(evaluate_statistic(eye, 2.0 * z) ==
          Catch::Approx(4.0 * z.squaredNorm()).epsilon(1e-14));

  // block-diagonal statistic equals the sum of per-block forms
  const ReceivedCovariances rc = uniform_rc(12, 4, 0.6);
  const Eigen::MatrixXcd p = lcs_matrix(rc);
  Rng rng(777);
  Eigen::VectorXcd w(12);
  for (int k = 0; k < 12; ++k) w(k) = rng.standard_cn();
  double parts = 0.0;
  int off = 0;
  for (int li : rc.block_sizes) {
    parts += evaluate_statistic(p.block(off, off, li, li),
                                w.segment(off, li).eval());
    off += li;
  }
  REQUIRE(evaluate_statistic(p, w) == Catch::Approx(parts).epsilon(1e-12));

  // a matrix with a large skew part is rejected
  Eigen::MatrixXcd skew = eye;
  skew(0, 1) = std::complex<double>(0, 1);  // adjoint entry not mirrored
  REQUIRE_THROWS_AS(evaluate_statistic(skew, z), Error);

  Eigen::VectorXcd wrong(2);
  wrong << 1.0, 1.0;
  REQUIRE_THROWS_AS(evaluate_statistic(eye, wrong), DimensionMismatchError);
}

TEST_CASE("threshold comparisons send ties to the null", "[detectors]") {
  ReceivedCovariances rc;
  rc.n_prime = 1;
  rc.block_sizes = {1};
  rc.xi0 = Eigen::MatrixXcd::Identity(1, 1);
  rc.xi1 = 2.0 * Eigen::MatrixXcd::Identity(1, 1);

  Eigen::VectorXcd z(1);
  z << std::complex<double>(2.0, 0.0);  // |z|^2 = 4

  const DetectorSpec at_tie = make_detector(DetectorKind::Ed, rc, 4.0);
  REQUIRE(decide(at_tie, z) == Hypothesis::H0);
  const DetectorSpec below = make_detector(DetectorKind::Ed, rc, 3.9);
  REQUIRE(decide(below, z) == Hypothesis::H1);
  const DetectorSpec above = make_detector(DetectorKind::Ed, rc, 4.1);
  REQUIRE(decide(above, z) == Hypothesis::H0);
}

TEST_CASE("uncorrelated clusters make the two covariance statistics agree",
          "[detectors]") {
  const ReceivedCovariances rc = uniform_rc(12, 4, 0.0);
  const Eigen::MatrixXcd pf = fcs_matrix(rc);
  const Eigen::MatrixXcd pl = lcs_matrix(rc);
  REQUIRE((pf - pl).cwiseAbs().maxCoeff() < 1e-12);
  // both are the diagonal inverse difference of the white covariances
  const double xi0 = rc.xi0(0, 0).real();
  const double xi1 = rc.xi1(0, 0).real();
  const Eigen::MatrixXcd want = (1.0 / xi0 - 1.0 / xi1) *
                                Eigen::MatrixXcd::Identity(12, 12);
  REQUIRE((pf - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("detector names round trip", "[detectors]") {
  for (DetectorKind k :
       {DetectorKind::Fcs, DetectorKind::Lcs, DetectorKind::Ed})
    REQUIRE(detector_from_string(to_string(k)) == k);
  REQUIRE_THROWS_AS(detector_from_string("cfar"), ConfigError);
}
