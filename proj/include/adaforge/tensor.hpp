#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaforge {

/// Dense shape, rank 1..4 (batch, channel, height, width at most).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int64_t> d) : dims_(d) { validate(); }
  explicit Shape(std::vector<int64_t> d) : dims_(std::move(d)) { validate(); }

  int rank() const { return static_cast<int>(dims_.size()); }
  int64_t dim(int i) const { return dims_.at(static_cast<size_t>(i)); }
  const std::vector<int64_t>& dims() const { return dims_; }

  int64_t numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), int64_t{1},
                           std::multiplies<int64_t>());
  }

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "(";
    for (size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

 private:
  void validate() const {
    if (dims_.empty() || dims_.size() > 4)
      throw std::invalid_argument("shape rank must be in [1, 4], got " + str());
    int64_t n = 1;
    for (int64_t d : dims_) {
      if (d < 1) throw std::invalid_argument("shape dims must be >= 1, got " + str());
      if (n > (int64_t{1} << 40) / d)
        throw std::invalid_argument("shape too large: " + str());
      n *= d;
    }
  }

  std::vector<int64_t> dims_;
};

/// Row-major dense array of doubles.
struct Tensor {
  Shape shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(const Shape& s, double fill = 0.0)
      : shape(s), v(static_cast<size_t>(s.numel()), fill) {}
  Tensor(const Shape& s, std::vector<double> data) : shape(s), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != s.numel())
      throw std::invalid_argument("tensor data size does not match shape " + s.str());
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }
  double& operator[](size_t i) { return v[i]; }
  double operator[](size_t i) const { return v[i]; }

  void zero() { std::fill(v.begin(), v.end(), 0.0); }
  void release() {
    v.clear();
    v.shrink_to_fit();
  }
  bool empty() const { return v.empty(); }

  static Tensor zeros(const Shape& s) { return Tensor(s, 0.0); }
  static Tensor full(const Shape& s, double x) { return Tensor(s, x); }
  static Tensor scalar(double x) { return Tensor(Shape{1}, x); }
};

}  // namespace adaforge
