#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "detectors.hpp"
#include "errors.hpp"
#include "precoding.hpp"

namespace clusterdet {

// A threshold or tilt parameter landed outside the open interval where the
// evaluation is defined.
struct DomainViolationError : Error {
  explicit DomainViolationError(const std::string& what) : Error(what) {}
};

// Log-moment-generating function of a Hermitian quadratic form z^H P z of a
// complex Gaussian z ~ CN(0, Xi), plus an optional affine term.  With
// lambda_k the eigenvalues of Xi^{1/2} P Xi^{1/2},
//   mu(s) = linear*s - sum_k log(1 - s*lambda_k),
// convex and finite for s below 1/max(lambda).  The affine term carries the
// constant of an exact log-likelihood ratio when one is studied; plain
// quadratic forms have linear = 0.
struct QfLmgf {
  Eigen::VectorXd lambdas;
  double linear = 0.0;

  double lambda_max() const { return lambdas.size() ? lambdas.maxCoeff() : 0.0; }

  // Open upper endpoint of the admissible domain.
  double s_upper() const {
    const double lmax = lambda_max();
    return lmax > 0 ? 1.0 / lmax : std::numeric_limits<double>::infinity();
  }

  bool admissible(double s) const { return s < s_upper(); }

  double mu(double s) const {
    if (!admissible(s)) return std::numeric_limits<double>::infinity();
    double acc = linear * s;
    for (int k = 0; k < lambdas.size(); ++k) acc -= std::log1p(-s * lambdas(k));
    return acc;
  }

  double mu_dot(double s) const {
    if (!admissible(s)) return std::numeric_limits<double>::infinity();
    double acc = linear;
    for (int k = 0; k < lambdas.size(); ++k)
      acc += lambdas(k) / (1.0 - s * lambdas(k));
    return acc;
  }

  double mu_ddot(double s) const {
    if (!admissible(s)) return std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (int k = 0; k < lambdas.size(); ++k) {
      const double r = lambdas(k) / (1.0 - s * lambdas(k));
      acc += r * r;
    }
    return acc;
  }

  double mu_dddot(double s) const {
    if (!admissible(s)) return std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (int k = 0; k < lambdas.size(); ++k) {
      const double r = lambdas(k) / (1.0 - s * lambdas(k));
      acc += 2.0 * r * r * r;
    }
    return acc;
  }

  // Mean of the statistic.
  double mean() const { return linear + lambdas.sum(); }
};

// Builds the LMGF of z^H P z under z ~ CN(0, Xi) via the congruent symmetric
// form Xi^{1/2} P Xi^{1/2}, whose spectrum is real by construction.  Both
// inputs must be positive definite (P may be semidefinite up to rounding;
// tiny negative eigenvalues are clipped, a genuinely indefinite or zero P is
// rejected).
inline QfLmgf qf_lmgf(const Eigen::MatrixXcd& Xi, const Eigen::MatrixXcd& P) {
  if (Xi.rows() != Xi.cols() || P.rows() != P.cols() || Xi.rows() != P.rows())
    throw DimensionMismatchError("qf_lmgf: Xi and P must be square and equal-size");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es_xi(Xi);
  if (es_xi.info() != Eigen::Success)
    throw Error("qf_lmgf: eigendecomposition of Xi failed");
  const double xi_min = es_xi.eigenvalues().minCoeff();
  if (xi_min <= 0)
    throw NotPositiveDefiniteError("qf_lmgf: Xi is not positive definite");
  const Eigen::MatrixXcd sqrt_xi =
      es_xi.eigenvectors() *
      es_xi.eigenvalues().cwiseSqrt().asDiagonal() *
      es_xi.eigenvectors().adjoint();
  Eigen::MatrixXcd S = sqrt_xi * P * sqrt_xi;
  S = ((S + S.adjoint()) / 2.0).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(S, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw Error("qf_lmgf: eigendecomposition of the tilted form failed");
  QfLmgf lmgf;
  lmgf.lambdas = es.eigenvalues();
  const double lmax = lmgf.lambdas.maxCoeff();
  if (lmax <= 0)
    throw NotPositiveDefiniteError(
        "qf_lmgf: quadratic form is degenerate (no positive eigenvalue)");
  for (int k = 0; k < lmgf.lambdas.size(); ++k) {
    if (lmgf.lambdas(k) < -1e-12 * lmax)
      throw NotPositiveDefiniteError(
          "qf_lmgf: quadratic form is indefinite under the given covariance");
    lmgf.lambdas(k) = std::max(lmgf.lambdas(k), 0.0);
  }
  return lmgf;
}

namespace detail {

inline double logdet_pd(const Eigen::MatrixXcd& A, const std::string& label) {
  Eigen::LLT<Eigen::MatrixXcd> llt(A);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefiniteError(label + " is not positive definite");
  double acc = 0.0;
  for (int k = 0; k < A.rows(); ++k)
    acc += 2.0 * std::log(llt.matrixL()(k, k).real());
  return acc;
}

}  // namespace detail

// LMGF pair (H0, H1) of the exact log-likelihood ratio
//   L(z) = z^H (Xi0^{-1} - Xi1^{-1}) z + log det(Xi0 Xi1^{-1}),
// i.e. the full-correlation statistic with its usually-discarded constant
// restored.  These are the objects satisfying the tilt identity
// mu0(s) = mu1(s-1) exactly.
inline std::pair<QfLmgf, QfLmgf> llr_lmgf_pair(const Eigen::MatrixXcd& Xi0,
                                               const Eigen::MatrixXcd& Xi1) {
  Eigen::MatrixXcd P = detail::pd_inverse(Xi0, "Xi0") -
                       detail::pd_inverse(Xi1, "Xi1");
  P = ((P + P.adjoint()) / 2.0).eval();
  const double c =
      detail::logdet_pd(Xi0, "Xi0") - detail::logdet_pd(Xi1, "Xi1");
  QfLmgf l0 = qf_lmgf(Xi0, P);
  QfLmgf l1 = qf_lmgf(Xi1, P);
  l0.linear = c;
  l1.linear = c;
  return {std::move(l0), std::move(l1)};
}

inline std::pair<QfLmgf, QfLmgf> llr_lmgf_pair(const ReceivedCovariances& rc) {
  return llr_lmgf_pair(rc.xi0, rc.xi1);
}

enum class TailSide { Upper, Lower };

struct TiltSolution {
  double s = 0.0;
  double mu = 0.0;
  double mu_dot = 0.0;
  double mu_ddot = 0.0;
  double exponent = 0.0;   // s*mu_dot(s) - mu(s) = s*tau - mu(s) at the root
  double prefactor = 0.0;  // 1/sqrt(2*pi*s^2*mu_ddot(s)); infinite at s = 0
  bool at_mean = false;    // tau coincided with the mean; s = 0 boundary
};

namespace detail {

constexpr int kMaxIter = 200;

inline TiltSolution tilt_at(const QfLmgf& lmgf, double s, double tau) {
  TiltSolution t;
  t.s = s;
  t.mu = lmgf.mu(s);
  t.mu_dot = lmgf.mu_dot(s);
  t.mu_ddot = lmgf.mu_ddot(s);
  t.exponent = std::max(0.0, s * tau - t.mu);
  t.prefactor =
      s == 0.0 ? std::numeric_limits<double>::infinity()
               : 1.0 / std::sqrt(2.0 * M_PI * s * s * t.mu_ddot);
  return t;
}

}  // namespace detail

// Solves mu_dot(s) = tau for the exponential-tilt parameter.  mu_dot is
// strictly increasing on the admissible domain, so a bracketed bisection with
// a few Newton polish steps is globally convergent.  A threshold equal to the
// mean (within rounding) returns the flagged s = 0 boundary solution.
inline TiltSolution solve_tilt(const QfLmgf& lmgf, double tau, TailSide side) {
  const double mean = lmgf.mean();
  const double scale = std::max({1.0, std::abs(mean), std::abs(tau)});
  if (std::abs(tau - mean) <= 1e-12 * scale) {
    TiltSolution t = detail::tilt_at(lmgf, 0.0, tau);
    t.at_mean = true;
    return t;
  }
  if (side == TailSide::Upper && tau < mean)
    throw ThresholdOnWrongSideError(
        "upper-tail tilt needs a threshold above the mean");
  if (side == TailSide::Lower && tau > mean)
    throw ThresholdOnWrongSideError(
        "lower-tail tilt needs a threshold below the mean");

  // Bracket [lo, hi] with mu_dot(lo) < tau < mu_dot(hi).
  double lo, hi;
  if (side == TailSide::Upper) {
    lo = 0.0;
    const double su = lmgf.s_upper();
    hi = su / 2.0;
    int it = 0;
    while (lmgf.mu_dot(hi) < tau) {
      hi = (hi + su) / 2.0;  // geometric approach to the domain endpoint
      if (++it > detail::kMaxIter)
        throw NoConvergenceError("tilt bracket expansion failed (upper)");
    }
  } else {
    hi = 0.0;
    lo = -std::max(1.0, 1.0 / std::max(lmgf.lambda_max(), 1e-300));
    int it = 0;
    while (lmgf.mu_dot(lo) > tau) {
      lo *= 2.0;
      if (++it > detail::kMaxIter)
        throw NoConvergenceError(
            "tilt bracket expansion failed (lower); threshold may be below the "
            "infimum of the statistic");
    }
  }

  // Bisection to a tight parameter interval.
  for (int it = 0;
       it < detail::kMaxIter &&
       hi - lo > 1e-12 * std::max({1.0, std::abs(lo), std::abs(hi)});
       ++it) {
    const double mid = (lo + hi) / 2.0;
    if (lmgf.mu_dot(mid) < tau)
      lo = mid;
    else
      hi = mid;
  }
  // Newton polish, kept inside the bracket.
  double s = (lo + hi) / 2.0;
  for (int it = 0; it < 8; ++it) {
    const double g = lmgf.mu_dot(s) - tau;
    const double gp = lmgf.mu_ddot(s);
    if (!(gp > 0)) break;
    double next = s - g / gp;
    if (next <= lo || next >= hi) break;
    s = next;
  }
  const double resid = std::abs(lmgf.mu_dot(s) - tau);
  if (!(resid <= 1e-10 * std::max(1.0, std::abs(tau))))
    throw NoConvergenceError("tilt solve did not meet tolerance");
  return detail::tilt_at(lmgf, s, tau);
}

// One tail probability in leading saddle-point order.  `prob` is
// exp(log_prob); only the leading term is computed, with no O(1/sqrt(n))
// correction, and a threshold at the mean yields the flagged CLT value 1/2.
struct TailReport {
  double log_prob = 0.0;
  double prob = 0.0;
  TiltSolution tilt;
  bool at_mean = false;
};

inline TailReport tail_probability(const QfLmgf& lmgf, double tau,
                                   TailSide side) {
  TailReport rep;
  rep.tilt = solve_tilt(lmgf, tau, side);
  if (rep.tilt.at_mean) {
    rep.at_mean = true;
    rep.log_prob = std::log(0.5);
    rep.prob = 0.5;
    return rep;
  }
  rep.log_prob = -0.5 * std::log(2.0 * M_PI * rep.tilt.s * rep.tilt.s *
                                 rep.tilt.mu_ddot) -
                 rep.tilt.exponent;
  rep.prob = std::exp(rep.log_prob);
  return rep;
}

// Uniformly refined tail value (Lugannani-Rice form) built from the same
// tilt.  The production reports stay leading-order; this refinement exists to
// quantify the truncation error of the leading term when comparing against
// simulation, and as a diagnostic column.
inline double refined_tail_probability(const QfLmgf& lmgf, double tau,
                                       TailSide side) {
  const TiltSolution t = solve_tilt(lmgf, tau, side);
  if (t.at_mean) return 0.5;
  const double r = std::copysign(std::sqrt(2.0 * t.exponent), t.s);
  const double u = t.s * std::sqrt(t.mu_ddot);
  const double phi = std::exp(-0.5 * r * r) / std::sqrt(2.0 * M_PI);
  const double base = side == TailSide::Upper
                          ? 0.5 * std::erfc(r / std::sqrt(2.0))
                          : 0.5 * std::erfc(-r / std::sqrt(2.0));
  const double corr = side == TailSide::Upper ? phi * (1.0 / u - 1.0 / r)
                                              : phi * (1.0 / r - 1.0 / u);
  return std::max(0.0, std::min(1.0, base + corr));
}

// Error probabilities of the threshold test on a Gaussian quadratic form:
// false alarm from the H0 upper tail, miss from the H1 lower tail.  Values
// are leading-order only (the caveat string travels with serialized reports).
struct ErrorProbReport {
  double tau = 0.0;
  double pfa = 0.0, pm = 0.0;
  double log_pfa = 0.0, log_pm = 0.0;
  TiltSolution tilt0, tilt1;
  bool pfa_at_mean = false, pm_at_mean = false;
};

inline constexpr const char* kLeadingOrderCaveat =
    "leading-order saddle-point value; O(1/sqrt(n')) relative correction not included";

inline ErrorProbReport error_probabilities(const QfLmgf& lmgf0,
                                           const QfLmgf& lmgf1, double tau) {
  const double m0 = lmgf0.mean(), m1 = lmgf1.mean();
  const double scale = std::max({1.0, std::abs(m0), std::abs(m1), std::abs(tau)});
  if (m1 - m0 <= 1e-12 * scale)
    throw ThresholdOutOfRangeError(
        "hypotheses are not separated (mean under H1 does not exceed mean "
        "under H0)");
  if (tau < m0 - 1e-12 * scale || tau > m1 + 1e-12 * scale)
    throw ThresholdOutOfRangeError(
        "threshold outside the open interval between the hypothesis means");
  ErrorProbReport rep;
  rep.tau = tau;
  const TailReport fa = tail_probability(lmgf0, tau, TailSide::Upper);
  rep.pfa = fa.prob;
  rep.log_pfa = fa.log_prob;
  rep.tilt0 = fa.tilt;
  rep.pfa_at_mean = fa.at_mean;
  const TailReport miss = tail_probability(lmgf1, tau, TailSide::Lower);
  rep.pm = miss.prob;
  rep.log_pm = miss.log_prob;
  rep.tilt1 = miss.tilt;
  rep.pm_at_mean = miss.at_mean;
  return rep;
}

inline ErrorProbReport error_probabilities(const ReceivedCovariances& rc,
                                           const Eigen::MatrixXcd& P,
                                           double tau) {
  return error_probabilities(qf_lmgf(rc.xi0, P), qf_lmgf(rc.xi1, P), tau);
}

// Inverts the H0 upper-tail map tau -> leading-order Pfa.  Parametrized by
// the tilt s0: both the exponent and the prefactor shrink the tail strictly
// monotonically as s0 grows, so log Pfa(s0) is strictly decreasing and a
// bracketed solve in s0 is exact; tau = mu_dot(s0) recovers the threshold.
inline double threshold_for_pfa(const QfLmgf& lmgf0, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("alpha must lie in (0,1)");
  const double target = std::log(alpha);
  const double su = lmgf0.s_upper();
  const auto log_pfa_at = [&](double s) {
    const double mu = lmgf0.mu(s);
    const double md = lmgf0.mu_dot(s);
    const double mdd = lmgf0.mu_ddot(s);
    return -0.5 * std::log(2.0 * M_PI * s * s * mdd) - (s * md - mu);
  };
  // Bracket in s: log Pfa -> +inf as s -> 0+, -inf as s -> s_upper-.
  double lo = su / 4.0;
  int it = 0;
  while (log_pfa_at(lo) <= target) {
    lo /= 2.0;
    if (++it > detail::kMaxIter)
      throw AlphaUnreachableError("no threshold reaches the requested alpha");
  }
  double hi = std::max(lo * 2.0, su / 2.0);
  it = 0;
  while (log_pfa_at(hi) >= target) {
    hi = (hi + su) / 2.0;
    if (++it > detail::kMaxIter)
      throw AlphaUnreachableError("no threshold reaches the requested alpha");
  }
  for (int i = 0; i < detail::kMaxIter && hi - lo > 1e-14 * su; ++i) {
    const double mid = (lo + hi) / 2.0;
    if (log_pfa_at(mid) > target)
      lo = mid;
    else
      hi = mid;
  }
  // Newton polish on f(s) = log Pfa(s) - target; f'(s) = -1/s
  // - mu_dddot/(2*mu_ddot) - s*mu_ddot.
  double s = (lo + hi) / 2.0;
  for (int i = 0; i < 8; ++i) {
    const double f = log_pfa_at(s) - target;
    const double fp = -1.0 / s - lmgf0.mu_dddot(s) / (2.0 * lmgf0.mu_ddot(s)) -
                      s * lmgf0.mu_ddot(s);
    const double next = s - f / fp;
    if (!(next > lo && next < hi)) break;
    s = next;
  }
  if (!(std::abs(log_pfa_at(s) - target) <=
        1e-11 * std::max(1.0, std::abs(target))))
    throw NoConvergenceError("threshold inversion did not meet tolerance");
  return lmgf0.mu_dot(s);
}

inline double threshold_for_pfa(const ReceivedCovariances& rc,
                                const Eigen::MatrixXcd& P, double alpha) {
  return threshold_for_pfa(qf_lmgf(rc.xi0, P), alpha);
}

// ---- closed forms for the equicorrelated uniform-cluster model -------------
//
// All take the effective per-sample SNR Gamma at the cluster heads plus the
// shape parameters (n, l, beta, rho) and describe the statistics of the three
// detectors when every cluster is identical.  `beta` must be the realized
// fraction l'/l.

namespace detail {

inline void check_lemma_args(double n, double l, double beta, double rho,
                             double Gamma) {
  if (!(n >= 1.0) || !(l >= 1.0) || l > n)
    throw ConfigError("closed forms need 1 <= l <= n");
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in (0,1]");
  if (!(rho >= 0.0 && rho < 1.0))
    throw ConfigError("closed forms need 0 <= rho < 1");
  if (!(Gamma > 0.0)) throw ConfigError("Gamma must be positive");
}

// Log false-alarm probability of the summed-local-LLR statistic at the
// zero-miss-exponent threshold; the full-correlation version is this with a
// single cluster of size n.
inline double lcs_log_pfa(double n, double l, double beta, double rho,
                          double Gamma) {
  const double gp = Gamma * (1.0 + (l - 1.0) * rho);   // dominant-bin SNR
  const double gpp = Gamma * (1.0 - rho);              // residual-bin SNR
  const double exponent =
      n * (Gamma * (rho + beta * (1.0 - rho)) - std::log1p(gp) / l -
           (beta - 1.0 / l) * std::log1p(gpp));
  const double curvature =
      (l + beta - 2.0) * rho * rho + 2.0 * (1.0 - beta) * rho + beta;
  const double log_prefactor =
      -std::log(Gamma) - 0.5 * std::log(2.0 * M_PI * n * curvature);
  return log_prefactor - exponent;
}

}  // namespace detail

// Leading-order false-alarm probability at the threshold that makes the miss
// exponent zero (threshold = mean of the statistic under H1), per detector.
// The energy-detector branch generalizes the printed special case (which
// assumes beta = 1 or rho = 0) so that it stays consistent with the generic
// engine for partial bandwidth on correlated fields.
inline double lemma1_log_pfa(DetectorKind kind, double n, double l, double beta,
                             double rho, double Gamma) {
  detail::check_lemma_args(n, l, beta, rho, Gamma);
  switch (kind) {
    case DetectorKind::Lcs:
      return detail::lcs_log_pfa(n, l, beta, rho, Gamma);
    case DetectorKind::Fcs:
      // Full correlation is the single-cluster case of the local form.
      return detail::lcs_log_pfa(n, n, beta, rho, Gamma);
    case DetectorKind::Ed: {
      const double g = Gamma * (rho + beta * (1.0 - rho)) / beta;
      const double exponent = n * beta * (g - std::log1p(g));
      const double log_prefactor =
          -std::log(g) - 0.5 * std::log(2.0 * M_PI * n * beta);
      return log_prefactor - exponent;
    }
  }
  throw ConfigError("unknown detector kind");
}

inline double lemma1_pfa(DetectorKind kind, double n, double l, double beta,
                         double rho, double Gamma) {
  return std::exp(lemma1_log_pfa(kind, n, l, beta, rho, Gamma));
}

// Mean of the detector statistic under H1 in the same closed-form model (the
// energy detector in its H0-standardized form).
inline double mean_under_h1(DetectorKind kind, double n, double l, double beta,
                            double rho, double Gamma) {
  detail::check_lemma_args(n, l, beta, rho, Gamma);
  const double m1 = n * Gamma * (rho + beta * (1.0 - rho));
  return kind == DetectorKind::Ed ? n * beta + m1 : m1;
}

struct LmgfTriple {
  double mu = 0.0, mu_dot = 0.0, mu_ddot = 0.0;
};

namespace detail {

// Accumulates closed-form LMGF contributions of `count` eigenvalues lambda.
inline void lmgf_accumulate(LmgfTriple& t, double s, double lambda,
                            double count) {
  if (count <= 0.0 || lambda == 0.0) return;
  const double u = 1.0 - s * lambda;
  if (u <= 0.0)
    throw DomainViolationError("closed-form LMGF evaluated outside its domain");
  t.mu -= count * std::log(u);
  const double r = lambda / u;
  t.mu_dot += count * r;
  t.mu_ddot += count * r * r;
}

}  // namespace detail

// Closed-form LMGF triple (mu, mu_dot, mu_ddot) for the uniform
// equicorrelated model; serves as an independent oracle for the matrix-based
// qf_lmgf route.  The full-correlation branch describes the exact LLR
// (constant included), which is the form whose H0/H1 LMGFs satisfy
// mu0(s) = mu1(s-1).
inline LmgfTriple appendix_lmgf(DetectorKind kind, double s, double n, double l,
                                double beta, double rho, double Gamma,
                                Hypothesis hyp) {
  detail::check_lemma_args(n, l, beta, rho, Gamma);
  LmgfTriple t;
  const double gpp = Gamma * (1.0 - rho);
  switch (kind) {
    case DetectorKind::Lcs: {
      const double gp = Gamma * (1.0 + (l - 1.0) * rho);
      const double big = hyp == Hypothesis::H1 ? gp : gp / (1.0 + gp);
      const double small = hyp == Hypothesis::H1 ? gpp : gpp / (1.0 + gpp);
      detail::lmgf_accumulate(t, s, big, n / l);
      detail::lmgf_accumulate(t, s, small, n * (beta - 1.0 / l));
      return t;
    }
    case DetectorKind::Fcs: {
      const double gn = Gamma * (1.0 + (n - 1.0) * rho);
      const double big = hyp == Hypothesis::H1 ? gn : gn / (1.0 + gn);
      const double small = hyp == Hypothesis::H1 ? gpp : gpp / (1.0 + gpp);
      detail::lmgf_accumulate(t, s, big, 1.0);
      detail::lmgf_accumulate(t, s, small, n * beta - 1.0);
      // Affine part: the log-det constant of the exact LLR.
      const double K =
          std::log1p(gn) + (n * beta - 1.0) * std::log1p(gpp);
      t.mu -= s * K;
      t.mu_dot -= K;
      return t;
    }
    case DetectorKind::Ed: {
      if (hyp == Hypothesis::H0) {
        detail::lmgf_accumulate(t, s, 1.0, n * beta);
      } else {
        const double gp = Gamma * (1.0 + (l - 1.0) * rho);
        detail::lmgf_accumulate(t, s, 1.0 + gp, n / l);
        detail::lmgf_accumulate(t, s, 1.0 + gpp, n * beta - n / l);
      }
      return t;
    }
  }
  throw ConfigError("unknown detector kind");
}

}  // namespace clusterdet
