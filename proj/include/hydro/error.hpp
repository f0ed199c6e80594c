#pragma once

#include <stdexcept>
#include <string>

namespace hydro {

/// Base class for every error raised by the pipeline.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a declared bound or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration: unknown backbone id, malformed config document, bad flag value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public IoError {
 public:
  using IoError::IoError;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

class LabelingError : public IngestError {
 public:
  using IngestError::IngestError;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class PlanningError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Loss became NaN or infinite during training.
class NumericError : public TrainingError {
 public:
  NumericError(const std::string& what, int epoch) : TrainingError(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// The model does not provide what the caller needs (e.g. no convolutional feature map).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace hydro
