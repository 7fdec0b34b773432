#include "fisherscope/tensor.hpp"

#include <bit>
#include <cmath>
#include <functional>
#include <numeric>

#include "fisherscope/error.hpp"

namespace fisherscope {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw InvalidArgument("tensor shape must have at least one extent");
  for (std::size_t e : shape)
    if (e == 0) throw InvalidArgument("tensor extents must be positive: " + shape_string(shape));
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_extents(shape_);
  values_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  if (shape_size(shape_) != values_.size())
    throw InvalidArgument("tensor of shape " + shape_string(shape_) + " given " +
                          std::to_string(values_.size()) + " values");
  if (!all_finite()) throw NonFiniteError("input", first_nonfinite_row());
}

bool Tensor::all_finite() const noexcept {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::ptrdiff_t Tensor::first_nonfinite_row() const noexcept {
  const std::size_t c = cols();
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (!std::isfinite(values_[i])) return static_cast<std::ptrdiff_t>(c ? i / c : i);
  return -1;
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

}  // namespace fisherscope
