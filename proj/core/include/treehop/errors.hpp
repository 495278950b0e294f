#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace treehop {

// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kUsage,
  kConfig,
  kData,
  kFormat,
  kNumeric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class DimensionError : public DataError {
 public:
  DimensionError(std::size_t expected, std::size_t actual);
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

class InvalidDimensionError : public ConfigError {
 public:
  InvalidDimensionError() : ConfigError("dimension must be at least 1") {}
};

class DuplicateIdError : public DataError {
 public:
  explicit DuplicateIdError(const std::string& id) : DataError("duplicate chunk id: " + id), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class UnknownIdError : public DataError {
 public:
  explicit UnknownIdError(const std::string& id) : DataError("unknown chunk id: " + id), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class EmptyStoreError : public DataError {
 public:
  EmptyStoreError() : DataError("store is empty") {}
};

class ZeroNormError : public DataError {
 public:
  ZeroNormError() : DataError("zero-norm vector has no direction") {}
};

// Malformed binary or text input. `offset` is a byte offset for binary
// files and a 1-based line number for JSONL.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

}  // namespace treehop
