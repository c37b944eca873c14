#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace whatif {

enum class ErrorCode {
  MalformedFile,
  EmptyInput,
  InsufficientData,
  ConfigError,
  InsufficientMinority,
  ShapeError,
  DegenerateLabels,
  UnsupportedVersion,
  MalformedModel,
  DegenerateFold,
  EmptyIndex,
  InsufficientDistractors,
  EmptyClassIndex,
  NoCounterfactualFound,
  NotFound,
  RangeError,
  Conflict,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a code so callers (CLI exit
// codes, HTTP status mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InsufficientMinority: return "InsufficientMinority";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::MalformedModel: return "MalformedModel";
    case ErrorCode::DegenerateFold: return "DegenerateFold";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::InsufficientDistractors: return "InsufficientDistractors";
    case ErrorCode::EmptyClassIndex: return "EmptyClassIndex";
    case ErrorCode::NoCounterfactualFound: return "NoCounterfactualFound";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::RangeError: return "RangeError";
    case ErrorCode::Conflict: return "Conflict";
  }
  return "Unknown";
}

}  // namespace whatif
