#include "aapt/tensor.hpp"

#include <algorithm>

namespace aapt {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w) + "x" +
         std::to_string(c);
}

void check_shape(const Shape& s) {
  if (s.n == 0 || s.h == 0 || s.w == 0 || s.c == 0) {
    throw ShapeError("tensor dimensions must be >= 1, got " + s.str());
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape " + a.str() + " does not match " + b.str());
  }
}

Tensor::Tensor(Shape shape, Scalar fill) : shape_(shape) {
  check_shape(shape_);
  data_.assign(shape_.size(), fill);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values) : shape_(shape), data_(std::move(values)) {
  check_shape(shape_);
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor " + shape_.str() + " needs " + std::to_string(shape_.size()) +
                     " values, got " + std::to_string(data_.size()));
  }
}

void Tensor::fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(shape_, other.shape_, "tensor add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

}  // namespace aapt
