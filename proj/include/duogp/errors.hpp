#pragma once

#include <atomic>
#include <stdexcept>
#include <string>

namespace duogp {

// A covariance matrix stayed indefinite after the jitter escalation ladder.
struct NotPositiveDefinite : std::runtime_error {
  explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};

// Inputs whose shapes do not line up (points vs. values, lengthscales vs. dim, ...).
struct DimensionError : std::invalid_argument {
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// The sampler could not find a starting point with finite log density.
struct InitializationFailure : std::runtime_error {
  explicit InitializationFailure(const std::string& what) : std::runtime_error(what) {}
};

// A propose was requested after the sequential budget was exhausted.
struct OutOfBudget : std::runtime_error {
  explicit OutOfBudget(const std::string& what) : std::runtime_error(what) {}
};

// propose/observe called out of order against a session.
struct ProtocolViolation : std::runtime_error {
  explicit ProtocolViolation(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or out-of-contract configuration input.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Session file failed checksum or schema-version validation.
struct SessionError : std::runtime_error {
  explicit SessionError(const std::string& what) : std::runtime_error(what) {}
};

// Process-wide counters for recoverable numerical events.  These are
// diagnostics, not control flow: callers that clamp a negative variance or
// hit a jitter escalation bump the counter and carry on.
struct NumericsLog {
  static std::atomic<long>& jitter_escalations() {
    static std::atomic<long> n{0};
    return n;
  }
  static std::atomic<long>& indefinite_rejections() {
    static std::atomic<long> n{0};
    return n;
  }
};

}  // namespace duogp
