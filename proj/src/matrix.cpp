#include "aapt/matrix.hpp"

#include <string>

namespace aapt {

namespace {

void require(bool ok, const char* what, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw ShapeError(std::string(what) + ": incompatible " + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " and " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols));
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows, "matmul", a, b);
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    Scalar* o = out.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const Scalar av = a.at(i, k);
      const Scalar* br = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows == b.rows, "matmul_tn", a, b);
  Matrix out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const Scalar* ar = a.row(k);
    const Scalar* br = b.row(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const Scalar av = ar[i];
      Scalar* o = out.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols == b.cols, "matmul_nt", a, b);
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const Scalar* ar = a.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const Scalar* br = b.row(j);
      Scalar s = 0;
      for (std::size_t k = 0; k < a.cols; ++k) s += ar[k] * br[k];
      out.at(i, j) = s;
    }
  }
  return out;
}

Matrix column_block(const Matrix& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.cols) throw ShapeError("column_block: range exceeds matrix width");
  Matrix out(m.rows, count);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < count; ++c) out.at(r, c) = m.at(r, begin + c);
  }
  return out;
}

void add_column_block(Matrix& dst, const Matrix& src, std::size_t begin) {
  if (src.rows != dst.rows || begin + src.cols > dst.cols) {
    throw ShapeError("add_column_block: block does not fit");
  }
  for (std::size_t r = 0; r < src.rows; ++r) {
    for (std::size_t c = 0; c < src.cols; ++c) dst.at(r, begin + c) += src.at(r, c);
  }
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) out.at(c, r) = m.at(r, c);
  }
  return out;
}

}  // namespace aapt
