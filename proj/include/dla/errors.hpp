#pragma once

#include <stdexcept>
#include <string>

namespace dla {

// Error categories surfaced by the CLI as distinct exit codes.
enum class ErrorKind { Configuration, Ingestion, Numeric, IO, Contract, Evaluation };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Configuration, w) {}
};
struct IngestionError : Error {
  explicit IngestionError(const std::string& w) : Error(ErrorKind::Ingestion, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::Numeric, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::IO, w) {}
};
struct ContractViolation : Error {
  explicit ContractViolation(const std::string& w) : Error(ErrorKind::Contract, w) {}
};
struct EvaluationError : Error {
  explicit EvaluationError(const std::string& w) : Error(ErrorKind::Evaluation, w) {}
};

const char* to_string(ErrorKind kind) noexcept;

}  // namespace dla
