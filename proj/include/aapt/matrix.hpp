#pragma once

#include <cstddef>
#include <vector>

#include "aapt/tensor.hpp"

namespace aapt {

/// Row-major dense matrix used for the flattened-spatial attention math.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Scalar> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, Scalar fill = 0) : rows(r), cols(c), data(r * c, fill) {}

  Scalar& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  Scalar at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  Scalar* row(std::size_t r) { return data.data() + r * cols; }
  const Scalar* row(std::size_t r) const { return data.data() + r * cols; }

  bool operator==(const Matrix&) const = default;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// Columns [begin, begin + count).
Matrix column_block(const Matrix& m, std::size_t begin, std::size_t count);
void add_column_block(Matrix& dst, const Matrix& src, std::size_t begin);
Matrix transpose(const Matrix& m);

}  // namespace aapt
