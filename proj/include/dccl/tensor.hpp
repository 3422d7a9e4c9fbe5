#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dccl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor of 64-bit reals.
///
/// Plain value type: copies are deep, mutation is in place. Anything recorded
/// on an autodiff tape is copied into the tape node and frozen there.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::size_t rank() const { return shape_.size(); }
  bool is_scalar() const { return values_.size() == 1; }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Rank-2 accessors.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Value of a single-element tensor.
  double item() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  /// Same values, new shape; element count must match.
  Tensor reshaped(Shape new_shape) const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// Throws std::runtime_error naming `what` if any entry is NaN or infinite.
void check_finite(const Tensor& t, const std::string& what);

}  // namespace dccl
