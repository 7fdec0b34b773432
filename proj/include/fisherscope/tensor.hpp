#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fisherscope {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor. Every extent must be positive.
  explicit Tensor(Shape shape);

  /// Takes ownership of `values`; rejects size mismatch and non-finite entries.
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }

  /// Leading extent; 1 for scalars.
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_.front(); }
  /// Product of all extents after the first.
  std::size_t cols() const noexcept { return rows() == 0 ? 0 : size() / rows(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return std::span(values_).subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const {
    return std::span(values_).subspan(r * cols(), cols());
  }

  bool all_finite() const noexcept;
  /// First row containing a non-finite value, or -1.
  std::ptrdiff_t first_nonfinite_row() const noexcept;

  void fill(double v);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// Bitwise equality, distinguishing -0.0 from 0.0 and comparing NaN payloads.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace fisherscope
