#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sgembed {

/// Coarse classification of failures. The CLI maps each class to an exit code.
enum class ErrorKind {
  kInvalidArgument,
  kDimension,
  kParse,
  kUnknownLabel,
  kIo,
  kCheckpointCorrupt,
  kCheckpointMismatch,
  kSamplerExhausted,
  kDegenerateDistribution,
  kUndefinedMetric,
  kNonFiniteLoss,
  kAutodiff,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message)
      : Error(ErrorKind::kDimension, message) {}
};

/// Malformed input record. `location` names the file and record (line or row).
class ParseError : public Error {
 public:
  ParseError(const std::string& location, const std::string& message)
      : Error(ErrorKind::kParse, location + ": " + message), location_(location) {}

  const std::string& location() const noexcept { return location_; }

 private:
  std::string location_;
};

class UnknownLabelError : public Error {
 public:
  UnknownLabelError(const std::string& location, const std::string& label)
      : Error(ErrorKind::kUnknownLabel, location + ": unknown label \"" + label + "\""),
        label_(label) {}

  const std::string& label() const noexcept { return label_; }

 private:
  std::string label_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorKind::kIo, message) {}
};

class CheckpointError : public Error {
 public:
  CheckpointError(ErrorKind kind, const std::string& message) : Error(kind, message) {}
};

class SamplerExhaustedError : public Error {
 public:
  SamplerExhaustedError(std::size_t anchor, const std::string& message)
      : Error(ErrorKind::kSamplerExhausted,
              "anchor " + std::to_string(anchor) + ": " + message),
        anchor_(anchor) {}

  std::size_t anchor() const noexcept { return anchor_; }

 private:
  std::size_t anchor_;
};

class DegenerateDistributionError : public Error {
 public:
  explicit DegenerateDistributionError(const std::string& message)
      : Error(ErrorKind::kDegenerateDistribution, message) {}
};

class UndefinedMetricError : public Error {
 public:
  explicit UndefinedMetricError(const std::string& message)
      : Error(ErrorKind::kUndefinedMetric, message) {}
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(ErrorKind::kInvalidArgument, message);
}

}  // namespace sgembed
