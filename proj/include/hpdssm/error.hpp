#pragma once

#include <stdexcept>
#include <string>

namespace hpdssm {

/// Base of every error thrown by the library. `category()` drives the CLI
/// exit-code mapping.
class Error : public std::runtime_error {
public:
  enum class Category { usage, io, numeric };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

private:
  Category category_;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& what) : Error(Category::numeric, what) {}
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
  explicit DomainError(const std::string& what) : Error(Category::numeric, what) {}
};

/// Iteration failed to converge or produced a non-finite value.
class NumericError : public Error {
public:
  NumericError(const std::string& what, double residual = 0.0)
      : Error(Category::numeric, what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

private:
  double residual_;
};

/// Invalid configuration (noise model, window sizes, CLI values).
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error(Category::usage, what) {}
};

/// A target selector that matches nothing.
class SelectionError : public Error {
public:
  explicit SelectionError(const std::string& what) : Error(Category::usage, what) {}
};

/// HPD placement on a tensor that cannot host it.
class PlacementError : public Error {
public:
  explicit PlacementError(const std::string& what) : Error(Category::usage, what) {}
};

/// Degenerate input to a ratio (zero denominator).
class DegenerateInputError : public Error {
public:
  explicit DegenerateInputError(const std::string& what) : Error(Category::numeric, what) {}
};

enum class FormatErrc {
  io,
  bad_magic,
  version_mismatch,
  truncated,
  schema,
  non_finite,
  unsupported_dtype,
  validation,
};

inline const char* to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::io: return "io";
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::version_mismatch: return "version mismatch";
    case FormatErrc::truncated: return "truncated";
    case FormatErrc::schema: return "schema violation";
    case FormatErrc::non_finite: return "non-finite value";
    case FormatErrc::unsupported_dtype: return "unsupported dtype";
    case FormatErrc::validation: return "validation";
  }
  return "unknown";
}

/// Failure reading or writing a checkpoint or corpus file. `subject()` names
/// the offending tensor (or is empty when the failure is file-level).
class FormatError : public Error {
public:
  FormatError(FormatErrc code, const std::string& subject, const std::string& detail)
      : Error(Category::io, compose(code, subject, detail)), code_(code), subject_(subject) {}

  FormatErrc code() const noexcept { return code_; }
  const std::string& subject() const noexcept { return subject_; }

private:
  static std::string compose(FormatErrc code, const std::string& subject,
                             const std::string& detail) {
    std::string msg = to_string(code);
    if (!subject.empty()) msg += " [" + subject + "]";
    if (!detail.empty()) msg += ": " + detail;
    return msg;
  }

  FormatErrc code_;
  std::string subject_;
};

}  // namespace hpdssm
