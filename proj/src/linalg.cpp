#include "ostrovsky/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ostrovsky/error.hpp"

namespace ostrovsky {

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void DenseMatrix::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

DenseMatrix& DenseMatrix::operator+=(const DenseMatrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_) {
    throw UsageError("DenseMatrix::operator+=: dimension mismatch");
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

DenseMatrix& DenseMatrix::operator-=(const DenseMatrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_) {
    throw UsageError("DenseMatrix::operator-=: dimension mismatch");
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

double DenseMatrix::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::abs(x));
  return m;
}

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw UsageError("matrix product: dimension mismatch");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

std::vector<double> operator*(const DenseMatrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw UsageError("matrix-vector product: dimension mismatch");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

LuFactorization::LuFactorization(DenseMatrix a) : lu_(std::move(a)) {
  const std::size_t n = lu_.rows();
  if (n == 0 || lu_.cols() != n) throw UsageError("lu_factor: matrix must be square and non-empty");
  perm_.resize(n);
  for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
  const double scale = std::max(lu_.max_abs(), 1e-300);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = std::abs(lu_(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::abs(lu_(i, k));
      if (v > best) {
        best = v;
        piv = i;
      }
    }
    if (best <= 1e-14 * scale || !std::isfinite(best)) {
      throw SingularMatrixError("lu_factor: zero pivot at index " + std::to_string(k), k);
    }
    if (piv != k) {
      auto rk = lu_.row(k);
      auto rp = lu_.row(piv);
      std::swap_ranges(rk.begin(), rk.end(), rp.begin());
      std::swap(perm_[k], perm_[piv]);
    }
    const double inv = 1.0 / lu_(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double l = lu_(i, k) * inv;
      lu_(i, k) = l;
      if (l == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= l * lu_(k, j);
    }
  }
}

void LuFactorization::solve_in_place(std::span<double> b) const {
  const std::size_t n = lu_.rows();
  if (b.size() != n) throw UsageError("lu_solve: rhs length mismatch");
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = b[perm_[i]];
  for (std::size_t i = 0; i < n; ++i) {
    double s = y[i];
    for (std::size_t j = 0; j < i; ++j) s -= lu_(i, j) * y[j];
    y[i] = s;
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = y[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= lu_(i, j) * y[j];
    y[i] = s / lu_(i, i);
  }
  std::copy(y.begin(), y.end(), b.begin());
}

std::vector<double> LuFactorization::solve(std::span<const double> b) const {
  std::vector<double> x(b.begin(), b.end());
  solve_in_place(x);
  return x;
}

DenseMatrix LuFactorization::solve(const DenseMatrix& b) const {
  if (b.rows() != size()) throw UsageError("lu_solve: rhs rows mismatch");
  DenseMatrix x(b.rows(), b.cols());
  std::vector<double> col(b.rows());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    for (std::size_t i = 0; i < b.rows(); ++i) col[i] = b(i, j);
    solve_in_place(col);
    for (std::size_t i = 0; i < b.rows(); ++i) x(i, j) = col[i];
  }
  return x;
}

LuFactorization lu_factor(DenseMatrix a) { return LuFactorization(std::move(a)); }

std::vector<double> lu_solve(const LuFactorization& lu, std::span<const double> b) {
  return lu.solve(b);
}

BlockTridiagonalSystem BlockTridiagonalSystem::zeros(std::size_t block_size, std::size_t n_blocks,
                                                     bool periodic) {
  BlockTridiagonalSystem s;
  s.block_size = block_size;
  s.n_blocks = n_blocks;
  s.diag.assign(n_blocks, DenseMatrix(block_size, block_size));
  const std::size_t off = n_blocks > 0 ? n_blocks - 1 : 0;
  s.lower.assign(off, DenseMatrix(block_size, block_size));
  s.upper.assign(off, DenseMatrix(block_size, block_size));
  s.rhs.assign(block_size * n_blocks, 0.0);
  s.periodic = periodic;
  if (periodic) {
    s.corner_top_right = DenseMatrix(block_size, block_size);
    s.corner_bottom_left = DenseMatrix(block_size, block_size);
  }
  return s;
}

void BlockTridiagonalSystem::validate() const {
  const std::size_t b = block_size;
  const std::size_t m = n_blocks;
  auto square = [b](const DenseMatrix& a) { return a.rows() == b && a.cols() == b; };
  if (b == 0 || m == 0) throw UsageError("block system: empty");
  if (diag.size() != m || lower.size() != m - 1 || upper.size() != m - 1) {
    throw UsageError("block system: block count mismatch");
  }
  if (rhs.size() != m * b) throw UsageError("block system: rhs length must be n_blocks*block_size");
  for (const auto& d : diag)
    if (!square(d)) throw UsageError("block system: diagonal block shape");
  for (std::size_t i = 0; i + 1 < m; ++i) {
    if (!square(lower[i]) || !square(upper[i])) throw UsageError("block system: off-diagonal shape");
  }
  const bool has_corners = !corner_top_right.empty() || !corner_bottom_left.empty();
  if (periodic != has_corners) throw UsageError("block system: corner blocks present iff periodic");
  if (periodic && (!square(corner_top_right) || !square(corner_bottom_left))) {
    throw UsageError("block system: corner block shape");
  }
}

namespace {

void add_block(DenseMatrix& full, const DenseMatrix& blk, std::size_t bi, std::size_t bj) {
  const std::size_t b = blk.rows();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) full(bi * b + i, bj * b + j) += blk(i, j);
}

}  // namespace

DenseMatrix BlockTridiagonalSystem::to_dense() const {
  validate();
  const std::size_t b = block_size;
  DenseMatrix full(n_blocks * b, n_blocks * b);
  for (std::size_t i = 0; i < n_blocks; ++i) add_block(full, diag[i], i, i);
  for (std::size_t i = 0; i + 1 < n_blocks; ++i) {
    add_block(full, lower[i], i + 1, i);
    add_block(full, upper[i], i, i + 1);
  }
  if (periodic) {
    add_block(full, corner_top_right, 0, n_blocks - 1);
    add_block(full, corner_bottom_left, n_blocks - 1, 0);
  }
  return full;
}

std::vector<double> BlockTridiagonalSystem::apply(std::span<const double> x) const {
  return to_dense() * x;
}

std::vector<double> block_tridiag_solve_dense(const BlockTridiagonalSystem& sys) {
  return LuFactorization(sys.to_dense()).solve(sys.rhs);
}

namespace {

/// Block Thomas on rows [0, m) of a non-cyclic system with a multi-column rhs.
/// rhs is (m*b) x ncols and is overwritten by the solution.
void thomas_solve(const std::vector<DenseMatrix>& diag, const std::vector<DenseMatrix>& lower,
                  const std::vector<DenseMatrix>& upper, std::size_t m, DenseMatrix& rhs) {
  const std::size_t b = diag.front().rows();
  const std::size_t nc = rhs.cols();
  std::vector<LuFactorization> pivots;
  pivots.reserve(m);
  std::vector<DenseMatrix> g(m);  // D'_i^{-1} U_i
  auto rhs_block = [&](std::size_t i) {
    DenseMatrix r(b, nc);
    for (std::size_t a = 0; a < b; ++a)
      for (std::size_t c = 0; c < nc; ++c) r(a, c) = rhs(i * b + a, c);
    return r;
  };
  auto store_block = [&](std::size_t i, const DenseMatrix& r) {
    for (std::size_t a = 0; a < b; ++a)
      for (std::size_t c = 0; c < nc; ++c) rhs(i * b + a, c) = r(a, c);
  };

  std::vector<DenseMatrix> y(m);
  for (std::size_t i = 0; i < m; ++i) {
    DenseMatrix d = diag[i];
    DenseMatrix r = rhs_block(i);
    if (i > 0) {
      d -= lower[i - 1] * g[i - 1];
      r -= lower[i - 1] * y[i - 1];
    }
    try {
      pivots.emplace_back(std::move(d));
    } catch (const SingularMatrixError&) {
      throw SingularBlockError("block_tridiag_solve: singular pivot block " + std::to_string(i), i);
    }
    if (i + 1 < m) g[i] = pivots.back().solve(upper[i]);
    y[i] = pivots.back().solve(r);
  }
  store_block(m - 1, y[m - 1]);
  for (std::size_t i = m - 1; i-- > 0;) {
    DenseMatrix x_next = rhs_block(i + 1);
    y[i] -= g[i] * x_next;
    store_block(i, y[i]);
  }
}

}  // namespace

std::vector<double> block_tridiag_solve(const BlockTridiagonalSystem& sys) {
  sys.validate();
  const std::size_t b = sys.block_size;
  const std::size_t m = sys.n_blocks;

  if (!sys.periodic || m == 1) {
    DenseMatrix rhs(m * b, 1);
    for (std::size_t i = 0; i < m * b; ++i) rhs(i, 0) = sys.rhs[i];
    if (sys.periodic) {
      // m == 1: both corners fold onto the single diagonal block.
      DenseMatrix d = sys.diag[0];
      d += sys.corner_top_right;
      d += sys.corner_bottom_left;
      std::vector<DenseMatrix> diag{d};
      thomas_solve(diag, sys.lower, sys.upper, 1, rhs);
    } else {
      thomas_solve(sys.diag, sys.lower, sys.upper, m, rhs);
    }
    return std::vector<double>(rhs.data().begin(), rhs.data().end());
  }

  if (m == 2) {
    // Corners coincide with the off-diagonal blocks.
    BlockTridiagonalSystem folded = BlockTridiagonalSystem::zeros(b, 2, false);
    folded.diag = sys.diag;
    folded.upper[0] = sys.upper[0];
    folded.upper[0] += sys.corner_top_right;
    folded.lower[0] = sys.lower[0];
    folded.lower[0] += sys.corner_bottom_left;
    folded.rhs = sys.rhs;
    return block_tridiag_solve(folded);
  }

  // Border with the last block row/column:
  //   A' y + C z = r1,   R y + D z = r2,
  // where A' is the leading (m-1)-block tridiagonal part.
  const std::size_t mi = m - 1;
  std::vector<DenseMatrix> diag(sys.diag.begin(), sys.diag.begin() + mi);
  std::vector<DenseMatrix> lower(sys.lower.begin(), sys.lower.begin() + (mi - 1));
  std::vector<DenseMatrix> upper(sys.upper.begin(), sys.upper.begin() + (mi - 1));

  DenseMatrix rhs(mi * b, 1 + b);
  for (std::size_t i = 0; i < mi * b; ++i) rhs(i, 0) = sys.rhs[i];
  for (std::size_t a = 0; a < b; ++a) {
    for (std::size_t c = 0; c < b; ++c) {
      rhs(a, 1 + c) += sys.corner_top_right(a, c);
      rhs((mi - 1) * b + a, 1 + c) += sys.upper[mi - 1](a, c);
    }
  }
  thomas_solve(diag, lower, upper, mi, rhs);

  // Schur complement on the last block: S = D - R Y,  s = r2 - R y0.
  DenseMatrix schur = sys.diag[mi];
  std::vector<double> s(b);
  for (std::size_t a = 0; a < b; ++a) s[a] = sys.rhs[mi * b + a];
  auto apply_r = [&](std::size_t row_block, const DenseMatrix& coupling) {
    for (std::size_t a = 0; a < b; ++a) {
      for (std::size_t c = 0; c < b; ++c) {
        const double rac = coupling(a, c);
        if (rac == 0.0) continue;
        const std::size_t yi = row_block * b + c;
        s[a] -= rac * rhs(yi, 0);
        for (std::size_t d = 0; d < b; ++d) schur(a, d) -= rac * rhs(yi, 1 + d);
      }
    }
  };
  apply_r(0, sys.corner_bottom_left);
  apply_r(mi - 1, sys.lower[mi - 1]);

  std::vector<double> z;
  try {
    z = LuFactorization(schur).solve(s);
  } catch (const SingularMatrixError&) {
    throw SingularBlockError("block_tridiag_solve: singular periodic closure block", mi);
  }
  std::vector<double> x(m * b);
  for (std::size_t i = 0; i < mi * b; ++i) {
    double v = rhs(i, 0);
    for (std::size_t d = 0; d < b; ++d) v -= rhs(i, 1 + d) * z[d];
    x[i] = v;
  }
  for (std::size_t a = 0; a < b; ++a) x[mi * b + a] = z[a];
  return x;
}

bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

FftPlan::FftPlan(std::size_t n) : n_(n) {
  if (!is_power_of_two(n)) {
    throw ConfigError("FFT length " + std::to_string(n) + " is not a power of two");
  }
  bitrev_.resize(n);
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t k = 0; k < bits; ++k)
      if (i & (std::size_t{1} << k)) r |= std::size_t{1} << (bits - 1 - k);
    bitrev_[i] = r;
  }
  twiddles_.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddles_[k] = Complex(std::cos(ang), std::sin(ang));
  }
}

void FftPlan::transform(std::span<Complex> v, bool inverse) const {
  if (v.size() != n_) throw UsageError("FFT: vector length does not match plan");
  for (std::size_t i = 0; i < n_; ++i)
    if (i < bitrev_[i]) std::swap(v[i], v[bitrev_[i]]);
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n_ / len;
    for (std::size_t start = 0; start < n_; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        Complex w = twiddles_[k * stride];
        if (inverse) w = std::conj(w);
        const Complex a = v[start + k];
        const Complex t = w * v[start + k + half];
        v[start + k] = a + t;
        v[start + k + half] = a - t;
      }
    }
  }
  if (inverse) {
    const double inv_n = 1.0 / static_cast<double>(n_);
    for (auto& x : v) x *= inv_n;
  }
}

void FftPlan::forward(std::span<Complex> v) const { transform(v, false); }
void FftPlan::inverse(std::span<Complex> v) const { transform(v, true); }

ComplexVector fft_forward(ComplexVector v) {
  FftPlan(v.size()).forward(v);
  return v;
}

ComplexVector fft_inverse(ComplexVector v) {
  FftPlan(v.size()).inverse(v);
  return v;
}

}  // namespace ostrovsky
