#include "leaprec/tensor.hpp"

#include <cmath>
#include <sstream>

namespace leaprec {

namespace {
std::int64_t shape_product(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_to_string(shape));
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_product(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_product(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data_[0] = v;
  return t;
}

Tensor Tensor::from_vector(std::vector<double> v) {
  Tensor t;
  t.shape_ = {static_cast<int>(v.size())};
  t.data_ = std::move(v);
  return t;
}

Tensor Tensor::matrix(int rows, int cols) { return Tensor({rows, cols}); }

int Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() on non-matrix of shape " + shape_to_string(shape_));
  return shape_[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() on non-matrix of shape " + shape_to_string(shape_));
  return shape_[1];
}

double& Tensor::at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
double Tensor::at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

double Tensor::scalar_value() const {
  if (size() != 1) throw ShapeError("scalar_value() on tensor of shape " + shape_to_string(shape_));
  return data_[0];
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

void tensor_axpy(Tensor& y, double a, const Tensor& x) {
  if (!y.same_shape(x)) {
    throw ShapeError("axpy shape mismatch " + shape_to_string(y.shape()) + " vs " + shape_to_string(x.shape()));
  }
  double* yd = y.data();
  const double* xd = x.data();
  const std::int64_t n = y.size();
  for (std::int64_t i = 0; i < n; ++i) yd[i] += a * xd[i];
}

void tensor_scale(Tensor& y, double a) {
  double* yd = y.data();
  const std::int64_t n = y.size();
  for (std::int64_t i = 0; i < n; ++i) yd[i] *= a;
}

double tensor_sq_norm(const Tensor& t) {
  double s = 0.0;
  const double* d = t.data();
  for (std::int64_t i = 0; i < t.size(); ++i) s += d[i] * d[i];
  return s;
}

double tensor_max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("diff shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace leaprec
