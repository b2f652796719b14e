#pragma once

#include <stdexcept>
#include <string>

namespace nirsfs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not agree with what an operator requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient became NaN/Inf during optimization.
class DivergedTraining : public Error {
 public:
  explicit DivergedTraining(const std::string& what, long iteration = -1)
      : Error(what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

/// File could not be read, written, or parsed. Carries the offending path.
class IoError : public Error {
 public:
  IoError(const std::string& what, std::string path)
      : Error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Invalid configuration values, unknown keys, or an unusable dataset.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint does not match the architecture it is loaded into.
class ArchMismatch : public Error {
 public:
  using Error::Error;
};

/// Numerically degenerate input (rank-deficient lights, all-grazing normals, ...).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// Dataset generation stopped part way; `last_completed` is -1 if nothing was written.
class PartialOutput : public Error {
 public:
  PartialOutput(const std::string& what, long last_completed)
      : Error(what), last_completed_(last_completed) {}
  long last_completed() const noexcept { return last_completed_; }

 private:
  long last_completed_;
};

/// An input that must carry records (a loss log, a split) has none usable.
class EmptyInput : public Error {
 public:
  using Error::Error;
};

}  // namespace nirsfs
