#pragma once

#include <stdexcept>
#include <string>

namespace clusterdet {

// Base class for everything this library throws on a contract violation or a
// numerical failure.  Catching `Error` is enough to map any library problem to
// a process exit code.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Configuration / argument problems (bad sizes, bad ranges, unparsable input).
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(what) {}
};

// Cluster size does not divide the node count in grid mode.
struct NonDivisibleError : ConfigError {
  explicit NonDivisibleError(const std::string& what) : ConfigError(what) {}
};

// A sampled network ended up with zero nodes.
struct EmptyNetworkError : Error {
  explicit EmptyNetworkError(const std::string& what) : Error(what) {}
};

// An operation that requires a distance-free (equicorrelated) model was asked
// to run with a distance-dependent one.
struct NonStationaryModelError : ConfigError {
  explicit NonStationaryModelError(const std::string& what) : ConfigError(what) {}
};

// A matrix that must be positive (semi)definite is not, beyond tolerance.
struct NotPositiveDefiniteError : Error {
  explicit NotPositiveDefiniteError(const std::string& what) : Error(what) {}
};

// Mismatched dimensions between covariances, precoders, or vectors.
struct DimensionMismatchError : Error {
  explicit DimensionMismatchError(const std::string& what) : Error(what) {}
};

// A threshold lies on the wrong side of the relevant distribution mean for the
// requested tail.
struct ThresholdOnWrongSideError : Error {
  explicit ThresholdOnWrongSideError(const std::string& what) : Error(what) {}
};

// A threshold lies outside the open interval between the two hypothesis means,
// so one of the two error probabilities has no exponentially tilted
// representation.
struct ThresholdOutOfRangeError : Error {
  explicit ThresholdOutOfRangeError(const std::string& what) : Error(what) {}
};

// A requested false-alarm level cannot be met by any admissible threshold.
struct AlphaUnreachableError : Error {
  explicit AlphaUnreachableError(const std::string& what) : Error(what) {}
};

// An iterative solver hit its iteration cap before meeting its tolerance.
struct NoConvergenceError : Error {
  explicit NoConvergenceError(const std::string& what) : Error(what) {}
};

}  // namespace clusterdet
