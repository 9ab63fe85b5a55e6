#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "errors.hpp"
#include "netgeom.hpp"

namespace clusterdet {

// Spatial autocorrelation families for the observed field.  The exponential
// family comes in two parameterizations: `ExpBase` reads rho as the per-unit-
// distance decay base (0 < rho < 1), `ExpScale` reads it as a correlation
// length (rho > 0, R(d) = sigma_s^2 * exp(-d/rho)).
enum class AcfFamily { Equicorrelated, ExpBase, ExpScale, Hyperbolic };

inline std::string to_string(AcfFamily f) {
  switch (f) {
    case AcfFamily::Equicorrelated: return "equicorrelated";
    case AcfFamily::ExpBase: return "exp-base";
    case AcfFamily::ExpScale: return "exp-scale";
    case AcfFamily::Hyperbolic: return "hyperbolic";
  }
  return "?";
}

inline AcfFamily acf_family_from_string(const std::string& s) {
  if (s == "equicorrelated") return AcfFamily::Equicorrelated;
  if (s == "exp-base") return AcfFamily::ExpBase;
  if (s == "exp-scale") return AcfFamily::ExpScale;
  if (s == "hyperbolic") return AcfFamily::Hyperbolic;
  throw ConfigError("unknown ACF family: " + s);
}

struct CorrelationModel {
  AcfFamily family = AcfFamily::Equicorrelated;
  double sigma_s2 = 1.0;  // signal power
  double rho = 0.0;       // correlation parameter (meaning depends on family)
  double sigma_v2 = 1.0;  // per-sensor measurement-noise power

  void validate() const {
    if (sigma_s2 <= 0 || sigma_v2 <= 0)
      throw ConfigError("sigma_s2 and sigma_v2 must be positive");
    switch (family) {
      case AcfFamily::Equicorrelated:
        if (rho < 0 || rho >= 1)
          throw ConfigError("equicorrelated rho must satisfy 0 <= rho < 1");
        break;
      case AcfFamily::ExpBase:
        if (rho <= 0 || rho >= 1)
          throw ConfigError("exp-base rho must satisfy 0 < rho < 1");
        break;
      case AcfFamily::ExpScale:
      case AcfFamily::Hyperbolic:
        if (rho <= 0) throw ConfigError("distance-scale rho must be positive");
        break;
    }
  }

  bool geometry_free() const { return family == AcfFamily::Equicorrelated; }

  // Autocorrelation at separation d (off-diagonal entries; the diagonal is
  // always sigma_s2).
  double acf(double d) const {
    switch (family) {
      case AcfFamily::Equicorrelated: return sigma_s2 * rho;
      case AcfFamily::ExpBase: return sigma_s2 * std::pow(rho, d);
      case AcfFamily::ExpScale: return sigma_s2 * std::exp(-d / rho);
      case AcfFamily::Hyperbolic: return sigma_s2 * rho / (rho + d);
    }
    return 0.0;
  }
};

// Node-index scope for covariance construction: the whole network or a single
// cluster's members.
struct CovScope {
  int cluster = -1;  // -1 = full network
  static CovScope full() { return {}; }
  static CovScope of_cluster(int i) { return {i}; }
};

namespace detail {

inline std::vector<int> scope_indices(const NetworkLayout& lay, CovScope scope) {
  if (scope.cluster < 0) {
    std::vector<int> all(lay.n);
    for (int k = 0; k < lay.n; ++k) all[k] = k;
    return all;
  }
  if (scope.cluster >= lay.m) throw DimensionMismatchError("scope cluster out of range");
  return lay.members[scope.cluster];
}

// Accepts eigenvalues down to -tol (floating-point noise on rank-deficient
// instances); anything lower signals an invalid parameter combination.
inline void check_psd(const Eigen::MatrixXcd& S, double tol,
                      const std::string& label) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(S, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw Error("eigenvalue computation failed for " + label);
  if (es.eigenvalues().minCoeff() < -tol)
    throw NotPositiveDefiniteError(label + " is not positive semidefinite");
}

}  // namespace detail

// Signal covariance over the scoped node set: entry (j,k) = R_s(d_jk), with
// d_jk the Euclidean node distance for the distance-based families and the
// geometry-free two-level form for the equicorrelated family.
inline Eigen::MatrixXcd signal_covariance(const CorrelationModel& model,
                                          const NetworkLayout& lay,
                                          CovScope scope = CovScope::full()) {
  model.validate();
  const std::vector<int> idx = detail::scope_indices(lay, scope);
  const int sz = static_cast<int>(idx.size());
  Eigen::MatrixXcd S(sz, sz);
  for (int a = 0; a < sz; ++a) {
    S(a, a) = model.sigma_s2;
    for (int b = a + 1; b < sz; ++b) {
      const double d = model.geometry_free()
                           ? 1.0
                           : (lay.positions[idx[a]] - lay.positions[idx[b]]).norm();
      const double v = model.geometry_free() ? model.sigma_s2 * model.rho
                                             : model.acf(d);
      S(a, b) = v;
      S(b, a) = v;
    }
  }
  detail::check_psd(S, 1e-10 * model.sigma_s2, "signal covariance");
  return S;
}

struct HypothesisCovariances {
  Eigen::MatrixXcd sigma_s;  // signal part
  Eigen::MatrixXcd sigma0;   // noise-only hypothesis
  Eigen::MatrixXcd sigma1;   // signal-plus-noise hypothesis
};

inline HypothesisCovariances hypothesis_covariances(
    const CorrelationModel& model, const NetworkLayout& lay,
    CovScope scope = CovScope::full()) {
  HypothesisCovariances cov;
  cov.sigma_s = signal_covariance(model, lay, scope);
  const int sz = static_cast<int>(cov.sigma_s.rows());
  cov.sigma0 = model.sigma_v2 * Eigen::MatrixXcd::Identity(sz, sz);
  cov.sigma1 = cov.sigma_s + cov.sigma0;
  return cov;
}

// Eigenvalues of the l x l equicorrelated signal covariance in DFT-bin order:
// the DC bin carries sigma_s2*(1+(l-1)rho), every other bin sigma_s2*(1-rho).
inline Eigen::VectorXd equicorrelated_psd(int l, double sigma_s2, double rho) {
  Eigen::VectorXd d = Eigen::VectorXd::Constant(l, sigma_s2 * (1.0 - rho));
  d(0) = sigma_s2 * (1.0 + (l - 1) * rho);
  return d;
}

// Bin ordering by decreasing PSD with ties broken by ascending bin index.
// For the equicorrelated family the DC bin dominates and every other bin
// ties, so the order is simply 0, 1, ..., l-1.
inline std::vector<int> equicorrelated_psd_order(int l) {
  if (l < 1) throw ConfigError("cluster size must be >= 1");
  std::vector<int> order(l);
  for (int b = 0; b < l; ++b) order[b] = b;
  return order;
}

// Column k' of the normalized l-point DFT matrix: entries
// (1/sqrt(l)) * exp(j*2*pi*(k-1)*(k'-1)/l) for k = 1..l.
inline Eigen::VectorXcd dft_column(int l, int bin) {
  Eigen::VectorXcd f(l);
  const double base = 2.0 * M_PI * bin / l;
  const double scale = 1.0 / std::sqrt(static_cast<double>(l));
  for (int k = 0; k < l; ++k)
    f(k) = std::polar(scale, base * k);
  return f;
}

// l x lp matrix whose columns are the DFT columns for the given bins.
inline Eigen::MatrixXcd dft_columns(int l, const std::vector<int>& bins) {
  Eigen::MatrixXcd F(l, static_cast<int>(bins.size()));
  for (int c = 0; c < static_cast<int>(bins.size()); ++c)
    F.col(c) = dft_column(l, bins[c]);
  return F;
}

}  // namespace clusterdet
