#include "dccl/tensor.hpp"

#include <cmath>
#include <stdexcept>

#include "dccl/util.hpp"

namespace dccl {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw std::invalid_argument("Tensor: zero dimension in shape " + shape_to_string(shape_));
  }
  values_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_numel(shape_) != values_.size()) {
    throw std::invalid_argument(cat("Tensor: shape ", shape_to_string(shape_), " does not match ",
                                    values_.size(), " values"));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.values_) x = v;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  std::size_t c = rows.begin()->size();
  std::vector<double> vals;
  vals.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("Tensor::matrix: ragged rows");
    vals.insert(vals.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(vals));
}

Tensor Tensor::row(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::logic_error("Tensor::rows: rank-2 tensor required, got " + shape_to_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::logic_error("Tensor::cols: rank-2 tensor required, got " + shape_to_string(shape_));
  return shape_[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

double Tensor::at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

double Tensor::item() const {
  if (values_.size() != 1) {
    throw std::logic_error("Tensor::item: tensor has " + std::to_string(values_.size()) + " elements");
  }
  return values_[0];
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != values_.size()) {
    throw std::invalid_argument(cat("Tensor::reshaped: cannot view ", shape_to_string(shape_), " as ",
                                    shape_to_string(new_shape)));
  }
  return Tensor(std::move(new_shape), values_);
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) {
    throw std::runtime_error("non-finite values in " + what);
  }
}

}  // namespace dccl
