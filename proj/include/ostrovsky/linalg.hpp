#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace ostrovsky {

/// Row-major dense real matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  void set_zero();
  DenseMatrix& operator+=(const DenseMatrix& other);
  DenseMatrix& operator-=(const DenseMatrix& other);

  double max_abs() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b);
std::vector<double> operator*(const DenseMatrix& a, std::span<const double> x);

/// PA = LU with partial pivoting. Immutable once constructed.
class LuFactorization {
 public:
  LuFactorization() = default;
  /// Throws SingularMatrixError carrying the offending pivot index.
  explicit LuFactorization(DenseMatrix a);

  std::size_t size() const { return lu_.rows(); }
  std::vector<double> solve(std::span<const double> b) const;
  void solve_in_place(std::span<double> b) const;
  /// Solve for every column of b.
  DenseMatrix solve(const DenseMatrix& b) const;

  const DenseMatrix& packed() const { return lu_; }
  const std::vector<std::size_t>& permutation() const { return perm_; }

 private:
  DenseMatrix lu_;
  std::vector<std::size_t> perm_;
};

LuFactorization lu_factor(DenseMatrix a);
std::vector<double> lu_solve(const LuFactorization& lu, std::span<const double> b);

/// Block-tridiagonal system with b x b blocks, optionally closed cyclically.
///
/// lower[i] couples block row i+1 to column i, upper[i] couples row i to
/// column i+1. In the periodic case corner_top_right is block (0, m-1) and
/// corner_bottom_left is block (m-1, 0); for m == 2 they add onto upper/lower.
struct BlockTridiagonalSystem {
  std::size_t block_size = 0;
  std::size_t n_blocks = 0;
  std::vector<DenseMatrix> diag;
  std::vector<DenseMatrix> lower;
  std::vector<DenseMatrix> upper;
  std::vector<double> rhs;
  bool periodic = false;
  DenseMatrix corner_top_right;
  DenseMatrix corner_bottom_left;

  /// Zero blocks and rhs of the given shape.
  static BlockTridiagonalSystem zeros(std::size_t block_size, std::size_t n_blocks, bool periodic);

  void validate() const;
  DenseMatrix to_dense() const;
  std::vector<double> apply(std::span<const double> x) const;
};

/// Block Thomas recursion; periodic systems are closed by bordering with the
/// last block row/column. Throws SingularBlockError naming the pivot block.
std::vector<double> block_tridiag_solve(const BlockTridiagonalSystem& sys);

/// Dense LU on the scattered full matrix.
std::vector<double> block_tridiag_solve_dense(const BlockTridiagonalSystem& sys);

using Complex = std::complex<double>;
using ComplexVector = std::vector<Complex>;

bool is_power_of_two(std::size_t n);

/// Iterative radix-2 transform with precomputed twiddles and bit-reversal table.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);
  std::size_t size() const { return n_; }
  /// Unnormalized forward DFT, sum_j v_j exp(-2 pi i j m / K).
  void forward(std::span<Complex> v) const;
  /// Inverse DFT including the 1/K factor.
  void inverse(std::span<Complex> v) const;

 private:
  void transform(std::span<Complex> v, bool inverse) const;

  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<Complex> twiddles_;
};

ComplexVector fft_forward(ComplexVector v);
ComplexVector fft_inverse(ComplexVector v);

}  // namespace ostrovsky
