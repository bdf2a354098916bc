#include "survgrad/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace survgrad {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows_) + "x" +
                     std::to_string(cols_));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged initializer for Matrix");
    std::copy(row.begin(), row.end(), m.row(i++).begin());
  }
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw ShapeError("row index out of range");
    auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

namespace {

constexpr std::size_t kBlockRows = 4;
constexpr std::size_t kBlockCols = 8;

typedef double Vec4 __attribute__((vector_size(32)));

inline Vec4 load4(const double* p) {
  Vec4 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store4(double* p, Vec4 v) { std::memcpy(p, &v, sizeof v); }

constexpr std::size_t kDepthBlock = 256;

// C (M x N) += A (M x K) * B (K x N); B and C row-major, A row-major with
// leading dimension lda, or stored as its K x M transpose when kTransA.
// 4 x 8 register blocks over depth slices that stay cache resident.
template <bool kTransA>
void gemm_accumulate(const double* A, std::size_t lda, const double* B, std::size_t ldb, double* C,
                     std::size_t ldc, std::size_t M, std::size_t N, std::size_t K) {
  auto a_at = [&](std::size_t r, std::size_t l) { return kTransA ? A[l * lda + r] : A[r * lda + l]; };
  const std::size_t M4 = M - M % kBlockRows, N8 = N - N % kBlockCols;
  for (std::size_t l0 = 0; l0 < K; l0 += kDepthBlock) {
    const std::size_t l1 = std::min(K, l0 + kDepthBlock);
    for (std::size_t i = 0; i < M4; i += kBlockRows) {
      for (std::size_t j = 0; j < N8; j += kBlockCols) {
        Vec4 acc[kBlockRows][2];
        for (std::size_t r = 0; r < kBlockRows; ++r) {
          acc[r][0] = load4(C + (i + r) * ldc + j);
          acc[r][1] = load4(C + (i + r) * ldc + j + 4);
        }
        for (std::size_t l = l0; l < l1; ++l) {
          const Vec4 b0 = load4(B + l * ldb + j);
          const Vec4 b1 = load4(B + l * ldb + j + 4);
          for (std::size_t r = 0; r < kBlockRows; ++r) {
            const double a = a_at(i + r, l);
            const Vec4 av = {a, a, a, a};
            acc[r][0] += av * b0;
            acc[r][1] += av * b1;
          }
        }
        for (std::size_t r = 0; r < kBlockRows; ++r) {
          store4(C + (i + r) * ldc + j, acc[r][0]);
          store4(C + (i + r) * ldc + j + 4, acc[r][1]);
        }
      }
      for (std::size_t r = i; r < i + kBlockRows; ++r) {
        for (std::size_t l = l0; l < l1; ++l) {
          const double a = a_at(r, l);
          for (std::size_t j = N8; j < N; ++j) C[r * ldc + j] += a * B[l * ldb + j];
        }
      }
    }
    for (std::size_t r = M4; r < M; ++r) {
      for (std::size_t l = l0; l < l1; ++l) {
        const double a = a_at(r, l);
        for (std::size_t j = 0; j < N; ++j) C[r * ldc + j] += a * B[l * ldb + j];
      }
    }
  }
}

std::vector<double> transposed(const Matrix& m) {
  std::vector<double> t(m.rows() * m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t[c * m.rows() + r] = m(r, c);
  }
  return t;
}

void reset(Matrix& out, std::size_t rows, std::size_t cols) {
  if (out.rows() != rows || out.cols() != cols) {
    out = Matrix(rows, cols);
  } else {
    out.fill(0.0);
  }
}

}  // namespace

void matmul_transposed(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: " + shape_string(a) + " * (" + shape_string(b) + ")^T");
  }
  reset(out, a.rows(), b.rows());
  const std::vector<double> bt = transposed(b);
  gemm_accumulate<false>(a.values().data(), a.cols(), bt.data(), b.rows(), out.values().data(), out.cols(),
                  a.rows(), b.rows(), a.cols());
}

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a) + " * " + shape_string(b));
  }
  reset(out, a.rows(), b.cols());
  gemm_accumulate<false>(a.values().data(), a.cols(), b.values().data(), b.cols(), out.values().data(),
                  out.cols(), a.rows(), b.cols(), a.cols());
}

void accumulate_transposed_product(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    throw ShapeError("accumulate_transposed_product: (" + shape_string(a) + ")^T * " +
                     shape_string(b) + " into " + shape_string(out));
  }
  gemm_accumulate<true>(a.values().data(), a.cols(), b.values().data(), b.cols(), out.values().data(),
                  out.cols(), a.cols(), b.cols(), a.rows());
}

Matrix Tensor3::slab_matrix(std::size_t i) const {
  auto s = slab(i);
  return Matrix(d1_, d2_, std::vector<double>(s.begin(), s.end()));
}

void Tensor3::set_slab(std::size_t i, const Matrix& m) {
  if (m.rows() != d1_ || m.cols() != d2_) throw ShapeError("Tensor3::set_slab shape mismatch");
  std::copy(m.values().begin(), m.values().end(), slab(i).begin());
}

bool Tensor3::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace survgrad
