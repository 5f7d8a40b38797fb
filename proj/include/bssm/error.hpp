#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bssm {

/// Base of every error raised by the library. `kind()` is a short stable tag
/// used by the CLI's machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& m) : Error("numeric_domain", m) {}
};
struct LookupError : Error {
  explicit LookupError(const std::string& m) : Error("lookup", m) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error("contract", m) {}
};
struct LabelError : Error {
  explicit LabelError(const std::string& m) : Error("label", m) {}
};
struct TaxonomyConflict : Error {
  explicit TaxonomyConflict(const std::string& m) : Error("taxonomy_conflict", m) {}
};
struct EmptyDatasetError : Error {
  explicit EmptyDatasetError(const std::string& m) : Error("empty_dataset", m) {}
};
struct CompatibilityError : Error {
  explicit CompatibilityError(const std::string& m) : Error("compatibility", m) {}
};
struct DegenerateVarianceError : Error {
  explicit DegenerateVarianceError(const std::string& m) : Error("degenerate_variance", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

}  // namespace bssm
