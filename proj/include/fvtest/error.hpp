#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fvtest {

enum class ErrorCode {
  MissingColumn,
  ParseError,
  EmptyData,
  RoleMismatch,
  InvalidValue,
  LengthMismatch,
  SingularSystem,
  Nonconvergence,
  PositivityViolation,
  DomainError,
  DegenerateConditioning,
  SingularPenalty,
  InsufficientBootstrap,
  EmptyInput,
  InvalidConfig,
  IoError,
};

inline constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::RoleMismatch: return "RoleMismatch";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::Nonconvergence: return "Nonconvergence";
    case ErrorCode::PositivityViolation: return "PositivityViolation";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::DegenerateConditioning: return "DegenerateConditioning";
    case ErrorCode::SingularPenalty: return "SingularPenalty";
    case ErrorCode::InsufficientBootstrap: return "InsufficientBootstrap";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Data errors are the caller's input; everything else is a numeric failure.
inline constexpr bool is_data_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn:
    case ErrorCode::ParseError:
    case ErrorCode::EmptyData:
    case ErrorCode::RoleMismatch:
    case ErrorCode::InvalidValue:
    case ErrorCode::LengthMismatch:
    case ErrorCode::InvalidConfig:
    case ErrorCode::IoError:
      return true;
    default:
      return false;
  }
}

/// Exception carrying a machine-readable code and the module it came from.
/// what() reads "<module>: <Code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string_view module, const std::string& detail)
      : std::runtime_error(std::string(module) + ": " +
                           std::string(to_string(code)) + ": " + detail),
        code_(code),
        module_(module) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorCode code_;
  std::string module_;
};

}  // namespace fvtest
