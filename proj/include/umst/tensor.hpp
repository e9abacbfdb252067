#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "umst/errors.hpp"

namespace umst {

using Shape = std::vector<long>;

// Dense row-major array of doubles. Values are treated as immutable once an
// operation has produced them; mutation is limited to construction and to
// optimizer state updates.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(numel_of(shape_)), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<long>(data_.size()) != numel_of(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str());
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor identity(long n) {
    Tensor t({n, n});
    for (long i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    long m = static_cast<long>(rows.size());
    long n = m > 0 ? static_cast<long>(rows.begin()->size()) : 0;
    Tensor t({m, n});
    long i = 0;
    for (const auto& r : rows) {
      if (static_cast<long>(r.size()) != n)
        throw ShapeError("ragged row list in tensor literal");
      long j = 0;
      for (double v : r) t.at(i, j++) = v;
      ++i;
    }
    return t;
  }

  static Tensor vec(std::vector<double> v) {
    long n = static_cast<long>(v.size());
    return Tensor({n}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  long dim(std::size_t i) const { return shape_[i]; }
  long numel() const { return static_cast<long>(data_.size()); }
  bool defined() const { return !shape_.empty(); }

  long rows() const { assert(rank() == 2); return shape_[0]; }
  long cols() const { assert(rank() == 2); return shape_[1]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& at(long i) { return data_[static_cast<std::size_t>(i)]; }
  double at(long i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(long r, long c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
  double at(long r, long c) const { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs_diff(const Tensor& o) const {
    assert(numel() == o.numel());
    double m = 0.0;
    for (long i = 0; i < numel(); ++i) m = std::max(m, std::fabs(at(i) - o.at(i)));
    return m;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  static long numel_of(const Shape& shape) {
    long n = 1;
    for (long d : shape) {
      if (d <= 0) throw ShapeError("non-positive extent in shape");
      n *= d;
    }
    return n;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace umst
