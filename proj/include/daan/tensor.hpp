#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "daan/errors.hpp"

namespace daan {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major array of doubles.
///
/// Every dimension is positive; a scalar is represented with shape {1}.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != element_count(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + to_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 view helpers. Rank-1 tensors are treated as a single row.
  std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

  double item() const {
    if (data_.size() != 1) {
      throw ContractError("item() on non-scalar tensor of shape " + to_string(shape_));
    }
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " +
                           to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& other) const = default;

 private:
  void check_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("zero-sized dimension in shape " + to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// Bitwise equality, distinguishing -0.0 from 0.0 and comparing NaN payloads.
inline bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace daan
