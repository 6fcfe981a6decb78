#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deground {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major float64 tensor. Immutable once constructed; construction
/// rejects a data length that disagrees with the shape and any NaN/Inf.
class Tensor {
 public:
  Tensor() : shape_{0} {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty()) throw Error("tensor: rank-0 shapes are not supported");
    if (shape_size(shape_) != data_.size()) {
      throw Error("tensor: shape " + shape_string(shape_) + " needs " +
                  std::to_string(shape_size(shape_)) + " values, got " +
                  std::to_string(data_.size()));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw Error("tensor: non-finite value at flat index " +
                    std::to_string(i) + " of " + shape_string(shape_));
      }
    }
  }

  static Tensor zeros(Shape shape) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor filled(Shape shape, double value) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }
  static Tensor row(std::vector<double> data) {
    auto n = data.size();
    return Tensor({1, n}, std::move(data));
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::size_t rows() const {
    require_matrix();
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return shape_[1];
  }

  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t r, std::size_t c) const {
    require_matrix();
    return data_[r * shape_[1] + c];
  }
  double item() const {
    if (data_.size() != 1) throw Error("tensor: item() on " + shape_string(shape_));
    return data_[0];
  }

  std::span<const double> data() const { return data_; }
  std::vector<double> to_vector() const { return data_; }
  std::vector<double> row_vector(std::size_t r) const {
    require_matrix();
    auto begin = data_.begin() + static_cast<std::ptrdiff_t>(r * shape_[1]);
    return {begin, begin + static_cast<std::ptrdiff_t>(shape_[1])};
  }

  bool operator==(const Tensor& other) const = default;

 private:
  void require_matrix() const {
    if (shape_.size() != 2) {
      throw Error("tensor: expected a matrix, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace deground
