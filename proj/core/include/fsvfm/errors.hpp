#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fsvfm {

// Every error raised by the library derives from Error and carries a short
// machine-readable kind, which the CLI prints on its error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};

struct TaxonomyError : Error {
  explicit TaxonomyError(const std::string& m) : Error("taxonomy", m) {}
};

struct MaskingError : Error {
  explicit MaskingError(const std::string& m) : Error("masking", m) {}
};

struct PreconditionError : Error {
  explicit PreconditionError(const std::string& m) : Error("precondition", m) {}
};

struct StateError : Error {
  explicit StateError(const std::string& m) : Error("state", m) {}
};

struct TrainingError : Error {
  explicit TrainingError(const std::string& m) : Error("training", m) {}
};

class CodecError : public Error {
 public:
  CodecError(std::size_t offset, const std::string& m)
      : Error("codec", m + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IngestionError : public Error {
 public:
  IngestionError(std::string path, const std::string& m)
      : Error("ingestion", m + ": " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace fsvfm
