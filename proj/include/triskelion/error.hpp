#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace triskelion {

// Every failure the library reports carries one of these kinds so callers
// (tests, the CLI) can branch on the cause rather than on message text.
enum class ErrorKind {
  WrongMagic,
  DimensionMismatch,
  Truncated,
  LabelOutOfRange,
  EmptyDataset,
  ShapeMismatch,
  InvalidProbability,
  NonScalarRoot,
  NonFiniteValue,
  NegativeWeight,
  NameMismatch,
  NonFiniteGradient,
  NonFiniteLoss,
  TooFewPoints,
  LengthMismatch,
  DegenerateCovariance,
  ZeroGradient,
  IoError,
  BadMagic,
  UnsupportedVersion,
  CorruptRecord,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace triskelion
