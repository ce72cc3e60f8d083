#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "leaprec/errors.hpp"

namespace leaprec {

// Dense row-major tensor of 64-bit reals. Rank 0 is a scalar, rank 1 a
// vector, rank 2 a matrix. Shapes are fixed at construction.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}  // scalar zero
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor from_vector(std::vector<double> v);
  static Tensor matrix(int rows, int cols);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  bool is_scalar() const { return shape_.empty(); }
  int rows() const;  // rank-2 only
  int cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int r, int c);
  double at(int r, int c) const;
  double scalar_value() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  void fill(double v);
  bool all_finite() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_to_string(const std::vector<int>& shape);

// y += a * x, shapes must match.
void tensor_axpy(Tensor& y, double a, const Tensor& x);
void tensor_scale(Tensor& y, double a);
double tensor_sq_norm(const Tensor& t);
double tensor_max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace leaprec
