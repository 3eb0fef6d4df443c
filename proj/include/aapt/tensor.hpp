#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "aapt/errors.hpp"

namespace aapt {

#ifdef AAPT_SINGLE_PRECISION
using Scalar = float;
#else
using Scalar = double;
#endif

inline constexpr bool kDoublePrecision = sizeof(Scalar) == 8;

/// Tensor extents in batch, height, width, channel order.
struct Shape {
  std::size_t n = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t c = 1;

  std::size_t size() const { return n * h * w * c; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NHWC array. Channel is the fastest-varying index.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape, Scalar fill = 0);
  Tensor(Shape shape, std::vector<Scalar> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return ((n * shape_.h + h) * shape_.w + w) * shape_.c + c;
  }
  Scalar& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_[index(n, h, w, c)];
  }
  const Scalar& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return data_[index(n, h, w, c)];
  }
  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  void fill(Scalar v);
  Tensor& operator+=(const Tensor& other);

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<Scalar> data_;
};

void check_shape(const Shape& s);
void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace aapt
