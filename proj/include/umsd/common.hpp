#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace umsd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Vector3 = Eigen::Vector3d;
using Index = Eigen::Index;

// Error hierarchy. Every failure the library reports derives from Error so
// the CLI can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or joint counts that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Quaternions too close to zero to normalize, variance-free channels, etc.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// A value outside its documented domain (timestep, fps ratio, config field).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported input files.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint missing, corrupt or incompatible with the requested model.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Loss or parameter went non-finite during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// FNV-1a, used for config and manifest hashes.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

}  // namespace umsd
