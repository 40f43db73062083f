#ifndef ADVPROBE_ERROR_HPP
#define ADVPROBE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace advprobe {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit together. The message names the axes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value outside the admissible domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Non-finite numbers where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Weights, architecture and data that disagree with each other.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// Dataset ingestion failure. `row()` is the 1-based CSV data row, 0 if not row-specific.
class IngestionError : public Error {
 public:
  IngestionError(const std::string& what, std::size_t row)
      : Error(row == 0 ? what : "row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t epoch)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace advprobe

#endif  // ADVPROBE_ERROR_HPP
