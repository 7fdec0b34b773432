#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fisherscope {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or input shape does not match what a layer expects.
class ShapeError : public Error {
 public:
  ShapeError(std::string layer, const std::string& what)
      : Error("shape mismatch in layer '" + layer + "': " + what), layer_(std::move(layer)) {}
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

/// A NaN or Inf showed up where finite values are required.
class NonFiniteError : public Error {
 public:
  NonFiniteError(std::string layer, std::ptrdiff_t batch_index)
      : Error("non-finite value in layer '" + layer + "' at batch index " +
              std::to_string(batch_index)),
        layer_(std::move(layer)),
        batch_index_(batch_index) {}
  const std::string& layer() const noexcept { return layer_; }
  std::ptrdiff_t batch_index() const noexcept { return batch_index_; }

 private:
  std::string layer_;
  std::ptrdiff_t batch_index_;
};

/// Activation record used after the parameters it was built from changed.
class StaleRecordError : public Error {
 public:
  using Error::Error;
};

/// Configuration or argument violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Two artifacts were produced from different models.
class FingerprintMismatch : public Error {
 public:
  FingerprintMismatch(const std::string& expected, const std::string& actual)
      : Error("fingerprint mismatch: expected " + expected + ", got " + actual) {}
};

class IoError : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class CorruptFile : public Error {
 public:
  using Error::Error;
};

/// Stored array shape disagrees with the shape implied by the embedded config.
class ShapeDisagreement : public Error {
 public:
  using Error::Error;
};

}  // namespace fisherscope
