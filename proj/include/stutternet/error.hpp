#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stutternet {

/// Broad failure classes. The CLI maps these onto its exit codes.
enum class ErrorCategory { usage, data, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

// data errors

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class UnsupportedFormat : public Error {
 public:
  explicit UnsupportedFormat(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class UnsupportedRate : public Error {
 public:
  explicit UnsupportedRate(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class LabelError : public Error {
 public:
  LabelError(std::size_t row, const std::string& what)
      : Error(ErrorCategory::data, "row " + std::to_string(row) + ": " + what), row_(row) {}

  /// 1-based data row, header excluded.
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class CorruptModel : public Error {
 public:
  explicit CorruptModel(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class VersionError : public Error {
 public:
  explicit VersionError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

// usage errors

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::usage, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorCategory::usage, what) {}
};

// numeric errors

class NumericsError : public Error {
 public:
  explicit NumericsError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

}  // namespace stutternet
