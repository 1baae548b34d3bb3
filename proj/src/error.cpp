#include "triskelion/error.hpp"

namespace triskelion {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::WrongMagic: return "WrongMagic";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::Truncated: return "Truncated";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidProbability: return "InvalidProbability";
    case ErrorKind::NonScalarRoot: return "NonScalarRoot";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::NegativeWeight: return "NegativeWeight";
    case ErrorKind::NameMismatch: return "NameMismatch";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::TooFewPoints: return "TooFewPoints";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::DegenerateCovariance: return "DegenerateCovariance";
    case ErrorKind::ZeroGradient: return "ZeroGradient";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::CorruptRecord: return "CorruptRecord";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace triskelion
