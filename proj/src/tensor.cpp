#include "tensor.hpp"

#include <cmath>

namespace cfasl {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    CFASL_CHECK_ARG(d >= 0, "negative tensor dimension");
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)),
      data_(static_cast<size_t>(shape_numel(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  CFASL_CHECK_ARG(shape_numel(shape_) == static_cast<int64_t>(data_.size()),
                  "tensor shape/data size mismatch");
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

double Tensor::item() const {
  CFASL_CHECK_ARG(numel() == 1, "item() on tensor with numel != 1");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
  CFASL_CHECK_ARG(shape_numel(shape) == numel(),
                  "reshape to incompatible element count");
  return Tensor(std::move(shape), data_);
}

MatMap Tensor::mat() {
  CFASL_CHECK_ARG(rank() == 2, "mat() on tensor of rank " + std::to_string(rank()));
  return MatMap(data(), shape_[0], shape_[1]);
}

ConstMatMap Tensor::mat() const {
  CFASL_CHECK_ARG(rank() == 2, "mat() on tensor of rank " + std::to_string(rank()));
  return ConstMatMap(data(), shape_[0], shape_[1]);
}

MatMap Tensor::mat(int64_t rows, int64_t cols) {
  CFASL_CHECK_ARG(rows * cols == numel(), "mat(rows,cols) size mismatch");
  return MatMap(data(), rows, cols);
}

ConstMatMap Tensor::mat(int64_t rows, int64_t cols) const {
  CFASL_CHECK_ARG(rows * cols == numel(), "mat(rows,cols) size mismatch");
  return ConstMatMap(data(), rows, cols);
}

VecMap Tensor::vec() { return VecMap(data(), numel()); }
ConstVecMap Tensor::vec() const { return ConstVecMap(data(), numel()); }

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

}  // namespace cfasl
