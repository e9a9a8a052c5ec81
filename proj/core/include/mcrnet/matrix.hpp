#ifndef MCRNET_MATRIX_HPP
#define MCRNET_MATRIX_HPP

#include <cstddef>
#include <vector>

namespace mcrnet {

// Dense row-major matrix of 64-bit reals. Feature matrices follow the
// column-per-sample convention: rows = feature dim d, cols = sample count m.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {}

  static Matrix identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  double* row_ptr(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const double* row_ptr(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  double frobenius_norm() const;
  double column_norm(int c) const;
  void scale_column(int c, double s);

  // new matrix holding the listed columns, in order
  Matrix select_columns(const std::vector<int>& idx) const;

  bool all_finite() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// Symmetric dim x dim matrix, full row-major storage. Construction paths
// either symmetrize exactly or check the 1e-12 symmetry tolerance.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(int dim) : dim_(dim), data_(static_cast<size_t>(dim) * dim, 0.0) {}

  static SymMatrix identity(int n);
  // validates symmetry within tol and finiteness, then symmetrizes exactly
  static SymMatrix from_matrix(const Matrix& m, double tol = 1e-12);

  int dim() const { return dim_; }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * dim_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * dim_ + c]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  SymMatrix& operator+=(const SymMatrix& o);
  SymMatrix& operator-=(const SymMatrix& o);
  SymMatrix& operator*=(double s);

  // this += s * o
  void axpy(double s, const SymMatrix& o);

  double trace() const;
  double frobenius_norm() const;
  double max_abs_diff(const SymMatrix& o) const;

 private:
  int dim_ = 0;
  std::vector<double> data_;
};

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// y = (shift*I + S) applied to columns of X, as a full matrix product
Matrix sym_apply(const SymMatrix& s, const Matrix& x);

// Z * Z^T / scale, symmetric by construction
SymMatrix gram(const Matrix& z, double scale);

SymMatrix operator-(const SymMatrix& a, const SymMatrix& b);
SymMatrix operator+(const SymMatrix& a, const SymMatrix& b);

double dot(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace mcrnet

#endif
