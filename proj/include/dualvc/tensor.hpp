// SPDX-License-Identifier: Apache-2.0
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

#include "dualvc/error.hpp"

namespace dualvc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Sequences are stored as [frames x channels].
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_dims();
  }

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (shape_numel(shape_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  static BasicTensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
    return BasicTensor({rows, cols}, std::move(data));
  }

  static BasicTensor vector(std::vector<T> data) {
    const std::size_t n = data.size();
    return BasicTensor({n}, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading dimension for [T x C] sequences.
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  /// Product of all trailing dimensions.
  std::size_t cols() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) {
    const std::size_t c = cols();
    return std::span<T>(data_).subspan(r * c, c);
  }
  std::span<const T> row(std::size_t r) const {
    const std::size_t c = cols();
    return std::span<const T>(data_).subspan(r * c, c);
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  /// Rows [begin, end) of a sequence tensor.
  BasicTensor slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows()) throw ShapeError("slice_rows out of range");
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t c = cols();
    return BasicTensor(std::move(s), std::vector<T>(data_.begin() + begin * c,
                                                    data_.begin() + end * c));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_)
      if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Stacks rows of equal width; the result has shape [sum(rows) x cols].
template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  std::vector<T> data;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows width mismatch");
    r += p.rows();
    data.insert(data.end(), p.storage().begin(), p.storage().end());
  }
  return BasicTensor<T>({r, c}, std::move(data));
}

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace dualvc
