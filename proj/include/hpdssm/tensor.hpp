#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hpdssm/error.hpp"

namespace hpdssm {

using Dims = std::vector<std::size_t>;

inline std::size_t element_count(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. Every dimension is positive except that
/// a 1-D tensor may be empty.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Dims dims) : dims_(std::move(dims)), data_(element_count(dims_), 0.0) {
    check_dims();
  }

  Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims();
    if (element_count(dims_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + dims_to_string(dims_));
    }
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor eye({n, n});
    for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
    return eye;
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_matrix();
    return dims_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return dims_[1];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * dims_[1], dims_[1]}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * dims_[1], dims_[1]};
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

private:
  void check_dims() const {
    if (dims_.empty()) throw ShapeError("tensor needs at least one dimension");
    if (dims_.size() > 1) {
      for (std::size_t d : dims_)
        if (d == 0) throw ShapeError("zero-sized dimension in " + dims_to_string(dims_));
    }
  }

  void require_matrix() const {
    if (dims_.size() != 2) throw ShapeError("expected a matrix, got " + dims_to_string(dims_));
  }

  Dims dims_{0};
  std::vector<double> data_;
};

}  // namespace hpdssm
