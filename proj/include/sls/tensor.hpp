#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sls {

/// Dense row-major matrix of 64-bit floats. Row vectors are 1xN, column
/// vectors Nx1, scalars 1x1.
class Tensor {
 public:
  Tensor() = default;

  Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows <= 0 || cols <= 0)
      throw std::invalid_argument("Tensor: dimensions must be positive");
    v_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  }

  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v_[0] = x;
    return t;
  }

  static Tensor full(int rows, int cols, double x) {
    Tensor t(rows, cols);
    t.v_.assign(t.v_.size(), x);
    return t;
  }

  static Tensor from(std::vector<double> values, int rows, int cols) {
    Tensor t(rows, cols);
    if (values.size() != t.v_.size())
      throw std::invalid_argument("Tensor::from: buffer size does not match shape");
    t.v_ = std::move(values);
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  double& operator()(int i, int j) { return v_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return v_[static_cast<std::size_t>(i) * cols_ + j]; }
  double& operator[](std::size_t k) { return v_[k]; }
  double operator[](std::size_t k) const { return v_[k]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double item() const {
    if (size() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
    return v_[0];
  }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill(double x) { v_.assign(v_.size(), x); }

  std::string shape_str() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> v_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

}  // namespace sls
