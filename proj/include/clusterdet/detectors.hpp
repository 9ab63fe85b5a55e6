#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "errors.hpp"
#include "precoding.hpp"

namespace clusterdet {

enum class DetectorKind { Fcs, Lcs, Ed };

inline std::string to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::Fcs: return "fcs";
    case DetectorKind::Lcs: return "lcs";
    case DetectorKind::Ed: return "ed";
  }
  return "?";
}

inline DetectorKind detector_from_string(const std::string& s) {
  if (s == "fcs") return DetectorKind::Fcs;
  if (s == "lcs") return DetectorKind::Lcs;
  if (s == "ed") return DetectorKind::Ed;
  throw ConfigError("unknown detector: " + s);
}

enum class Hypothesis { H0, H1 };

namespace detail {

inline Eigen::MatrixXcd pd_inverse(const Eigen::MatrixXcd& A,
                                   const std::string& label) {
  Eigen::LLT<Eigen::MatrixXcd> llt(A);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefiniteError(label + " is not positive definite");
  return llt.solve(Eigen::MatrixXcd::Identity(A.rows(), A.cols()));
}

}  // namespace detail

// Quadratic-form matrix of the exact log-likelihood-ratio test on the full
// received vector: P = Xi0^{-1} - Xi1^{-1}.  Degenerates to the zero matrix
// when the hypotheses coincide; downstream tail machinery rejects that case.
inline Eigen::MatrixXcd fcs_matrix(const ReceivedCovariances& rc) {
  Eigen::MatrixXcd P = detail::pd_inverse(rc.xi0, "Xi0") -
                       detail::pd_inverse(rc.xi1, "Xi1");
  return ((P + P.adjoint()) / 2.0).eval();
}

// Block-diagonal sum-of-local-LLRs matrix: each cluster contributes the
// inverse difference of its own covariance block, inter-cluster correlation
// is ignored by construction.
inline Eigen::MatrixXcd lcs_matrix(const ReceivedCovariances& rc) {
  Eigen::MatrixXcd P = Eigen::MatrixXcd::Zero(rc.n_prime, rc.n_prime);
  int off = 0;
  for (std::size_t i = 0; i < rc.block_sizes.size(); ++i) {
    const int sz = rc.block_sizes[i];
    const Eigen::MatrixXcd b0 = rc.xi0.block(off, off, sz, sz);
    const Eigen::MatrixXcd b1 = rc.xi1.block(off, off, sz, sz);
    P.block(off, off, sz, sz) = detail::pd_inverse(b0, "cluster Xi0 block") -
                                detail::pd_inverse(b1, "cluster Xi1 block");
    off += sz;
  }
  return ((P + P.adjoint()) / 2.0).eval();
}

// Energy detector: squared norm of the received vector, optionally divided by
// a reference power so the H0 statistic is unit-rate.
inline Eigen::MatrixXcd ed_matrix(int n_prime, double normalization = 1.0) {
  if (n_prime < 1) throw ConfigError("ed_matrix needs n_prime >= 1");
  if (normalization <= 0) throw ConfigError("normalization must be positive");
  return Eigen::MatrixXcd::Identity(n_prime, n_prime) / normalization;
}

// Builds the requested quadratic-form matrix from the received covariances.
inline Eigen::MatrixXcd detector_matrix(DetectorKind kind,
                                        const ReceivedCovariances& rc,
                                        double ed_normalization = 1.0) {
  switch (kind) {
    case DetectorKind::Fcs: return fcs_matrix(rc);
    case DetectorKind::Lcs: return lcs_matrix(rc);
    case DetectorKind::Ed: return ed_matrix(rc.n_prime, ed_normalization);
  }
  throw ConfigError("unknown detector kind");
}

// z^H P z for Hermitian P; the imaginary residue must be rounding-level only.
inline double evaluate_statistic(const Eigen::MatrixXcd& P,
                                 const Eigen::VectorXcd& z) {
  if (P.rows() != z.size() || P.cols() != z.size())
    throw DimensionMismatchError("statistic dimensions do not match");
  const std::complex<double> q = z.dot(P * z);  // dot conjugates the left side
  if (std::abs(q.imag()) > 1e-10 * std::max(1.0, std::abs(q.real())))
    throw Error("quadratic form has a non-negligible imaginary part");
  return q.real();
}

struct DetectorSpec {
  DetectorKind kind = DetectorKind::Ed;
  Eigen::MatrixXcd P;
  double tau = 0.0;
  double normalization = 1.0;  // only meaningful for ED
};

inline DetectorSpec make_detector(DetectorKind kind,
                                  const ReceivedCovariances& rc, double tau,
                                  double ed_normalization = 1.0) {
  DetectorSpec spec;
  spec.kind = kind;
  spec.P = detector_matrix(kind, rc, ed_normalization);
  spec.tau = tau;
  spec.normalization = ed_normalization;
  return spec;
}

// Threshold test; ties go to the noise-only hypothesis.
inline Hypothesis decide(const DetectorSpec& spec, const Eigen::VectorXcd& z) {
  return evaluate_statistic(spec.P, z) > spec.tau ? Hypothesis::H1
                                                  : Hypothesis::H0;
}

}  // namespace clusterdet
