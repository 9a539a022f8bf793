#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace sae {

// Dense row-major matrix of 64-bit floats. All free operations below are
// pure functions on immutable inputs and safe to call concurrently.
// Products run in a fixed accumulation order for a given build, so results
// are reproducible run to run.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  Matrix transposed() const;
  bool all_finite() const;

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

// C = A * B. Throws ShapeError when inner dimensions disagree.
Matrix matmul(const Matrix& A, const Matrix& B);

// C = A * B^T with B stored untransposed (rows of B are the contraction
// vectors). Avoids materializing transposes on hot paths.
Matrix matmul_nt(const Matrix& A, const Matrix& B);

// C = A^T * B with A stored untransposed.
Matrix matmul_tn(const Matrix& A, const Matrix& B);

// Euclidean norm of every column.
std::vector<double> column_l2_norms(const Matrix& M);

struct NormalizeResult {
  Matrix matrix;
  std::vector<std::size_t> zero_columns;  // norm <= eps, left unchanged
};

// Rescales every column with norm > eps to unit norm. Columns at or below
// eps are left as-is and reported; they are dead directions, not errors.
NormalizeResult normalize_columns(const Matrix& M, double eps = 1e-12);

// Signed cosine of every row of A against every row of B; entry (i, j) is
// <A_i, B_j> / (|A_i| |B_j|), clamped to [-1, 1]. Rows with norm <= 1e-12
// produce 0 by convention. Throws ShapeError when column counts differ.
Matrix pairwise_cosine(const Matrix& A, const Matrix& B);

}  // namespace sae
