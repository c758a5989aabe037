#pragma once

#include <stdexcept>
#include <string>

namespace metadiv {

// A CPPN rendered an all-zero kernel; the caller resamples the genome.
struct DegenerateKernel : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Kernel box exceeds the grid along some axis.
struct KernelTooLarge : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Growth function called with sigma <= 0.
struct InvalidSigma : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structural disagreement between two inputs (channel arity, run configs).
struct ConfigMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnknownNode : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnknownRecord : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VersionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorruptFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace metadiv
