#include "sae/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <string>

#include "sae/errors.hpp"

#ifdef SAE_WITH_OPENBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

namespace sae {

namespace {

[[noreturn]] void shape_fail(const char* op, const Matrix& A, const Matrix& B) {
  throw ShapeError(std::string(op) + ": incompatible shapes " +
                   std::to_string(A.rows()) + "x" + std::to_string(A.cols()) +
                   " and " + std::to_string(B.rows()) + "x" +
                   std::to_string(B.cols()));
}

#ifdef SAE_WITH_OPENBLAS

// BLAS is pinned to one thread: run-level parallelism happens above this
// layer, and a fixed accumulation order keeps results reproducible.
void pin_blas_threads() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double* c, std::size_t ldc) {
  pin_blas_threads();
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), 0.0, c,
              static_cast<int>(ldc));
}

#else

// Fallback kernels: k-blocked, inner loop vectorizable over the output row.
constexpr std::size_t kBlock = 64;

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t k0 = 0; k0 < k; k0 += kBlock) {
    const std::size_t k1 = std::min(k, k0 + kBlock);
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      for (std::size_t kk = k0; kk < k1; ++kk) {
        const double aik = a[i * k + kk];
        const double* bk = b + kk * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
      }
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      c[i * n + j] = acc;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* ak = a + kk * m;
    const double* bk = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double aki = ak[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
}

#endif  // SAE_WITH_OPENBLAS

}  // namespace

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix out(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw ShapeError("from_rows: ragged initializer");
    }
    std::size_t j = 0;
    for (double x : row) out(i, j++) = x;
    ++i;
  }
  return out;
}

Matrix Matrix::transposed() const {
  Matrix out(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
  }
  return out;
}

bool Matrix::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Matrix matmul(const Matrix& A, const Matrix& B) {
  if (A.cols() != B.rows()) shape_fail("matmul", A, B);
  Matrix C(A.rows(), B.cols());
  if (C.size() == 0 || A.cols() == 0) return C;
#ifdef SAE_WITH_OPENBLAS
  gemm(false, false, A.rows(), B.cols(), A.cols(), A.data(), A.cols(),
       B.data(), B.cols(), C.data(), C.cols());
#else
  gemm_nn(A.rows(), B.cols(), A.cols(), A.data(), B.data(), C.data());
#endif
  return C;
}

Matrix matmul_nt(const Matrix& A, const Matrix& B) {
  if (A.cols() != B.cols()) shape_fail("matmul_nt", A, B);
  Matrix C(A.rows(), B.rows());
  if (C.size() == 0 || A.cols() == 0) return C;
#ifdef SAE_WITH_OPENBLAS
  gemm(false, true, A.rows(), B.rows(), A.cols(), A.data(), A.cols(), B.data(),
       B.cols(), C.data(), C.cols());
#else
  gemm_nt(A.rows(), B.rows(), A.cols(), A.data(), B.data(), C.data());
#endif
  return C;
}

Matrix matmul_tn(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows()) shape_fail("matmul_tn", A, B);
  Matrix C(A.cols(), B.cols());
  if (C.size() == 0 || A.rows() == 0) return C;
#ifdef SAE_WITH_OPENBLAS
  gemm(true, false, A.cols(), B.cols(), A.rows(), A.data(), A.cols(), B.data(),
       B.cols(), C.data(), C.cols());
#else
  gemm_tn(A.cols(), B.cols(), A.rows(), A.data(), B.data(), C.data());
#endif
  return C;
}

std::vector<double> column_l2_norms(const Matrix& M) {
  std::vector<double> acc(M.cols(), 0.0);
  for (std::size_t i = 0; i < M.rows(); ++i) {
    const auto row = M.row(i);
    for (std::size_t j = 0; j < M.cols(); ++j) acc[j] += row[j] * row[j];
  }
  for (double& x : acc) x = std::sqrt(x);
  return acc;
}

NormalizeResult normalize_columns(const Matrix& M, double eps) {
  NormalizeResult out{M, {}};
  const auto norms = column_l2_norms(M);
  for (std::size_t j = 0; j < M.cols(); ++j) {
    if (norms[j] <= eps) {
      out.zero_columns.push_back(j);
      continue;
    }
    const double inv = 1.0 / norms[j];
    for (std::size_t i = 0; i < M.rows(); ++i) out.matrix(i, j) *= inv;
  }
  return out;
}

Matrix pairwise_cosine(const Matrix& A, const Matrix& B) {
  if (A.cols() != B.cols()) shape_fail("pairwise_cosine", A, B);
  constexpr double kNormFloor = 1e-12;

  auto row_sqnorms = [](const Matrix& M) {
    std::vector<double> out(M.rows());
    for (std::size_t i = 0; i < M.rows(); ++i) {
      double acc = 0.0;
      for (double x : M.row(i)) acc += x * x;
      out[i] = acc;
    }
    return out;
  };
  const auto na2 = row_sqnorms(A);
  const auto nb2 = row_sqnorms(B);

  Matrix C = matmul_nt(A, B);
  // The denominator sqrt(|a|^2 |b|^2) makes the cosine of a row with an
  // exact copy of itself come out as exactly 1.
  for (std::size_t i = 0; i < C.rows(); ++i) {
    for (std::size_t j = 0; j < C.cols(); ++j) {
      if (na2[i] <= kNormFloor * kNormFloor || nb2[j] <= kNormFloor * kNormFloor) {
        C(i, j) = 0.0;
        continue;
      }
      double c = C(i, j) / std::sqrt(na2[i] * nb2[j]);
      C(i, j) = std::clamp(c, -1.0, 1.0);
    }
  }
  return C;
}

}  // namespace sae
