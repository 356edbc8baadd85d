#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dattr {

// Flat vector of all model parameters; the common currency of every
// derivative operation in the library.
using ParamVec = Eigen::VectorXd;

// Raised when a caller violates a documented precondition.
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raised when a computation produced a non-finite value.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when an input file cannot be parsed.
struct IngestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a problem exceeds a configured size limit.
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a spectrum has no usable eigenvalues left after thresholding.
struct DegenerateSpectrumError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when scale calibration cannot produce a positive factor.
struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a training run or response iterate becomes non-finite.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when an experiment cannot produce a valid result.
struct ExperimentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const ParamVec& v) { return v.allFinite(); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// FNV-1a, used for config/spec fingerprints in checkpoints and manifests.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a_u64(std::uint64_t x, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (int i = 0; i < 8; ++i) {
    h ^= (x >> (8 * i)) & 0xff;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace dattr
