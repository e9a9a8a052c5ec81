#include "mcrnet/matrix.hpp"

#include <cmath>
#include <cstdlib>

#include "mcrnet/errors.hpp"

namespace mcrnet {

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix& Matrix::operator+=(const Matrix& o) {
  if (rows_ != o.rows_ || cols_ != o.cols_) throw ShapeMismatch("matrix add");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
  if (rows_ != o.rows_ || cols_ != o.cols_) throw ShapeMismatch("matrix sub");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

double Matrix::frobenius_norm() const {
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return std::sqrt(acc);
}

double Matrix::column_norm(int c) const {
  double acc = 0.0;
  for (int r = 0; r < rows_; ++r) {
    const double v = (*this)(r, c);
    acc += v * v;
  }
  return std::sqrt(acc);
}

void Matrix::scale_column(int c, double s) {
  for (int r = 0; r < rows_; ++r) (*this)(r, c) *= s;
}

Matrix Matrix::select_columns(const std::vector<int>& idx) const {
  Matrix out(rows_, static_cast<int>(idx.size()));
  for (int r = 0; r < rows_; ++r) {
    const double* src = row_ptr(r);
    double* dst = out.row_ptr(r);
    for (size_t j = 0; j < idx.size(); ++j) dst[j] = src[idx[j]];
  }
  return out;
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

SymMatrix SymMatrix::identity(int n) {
  SymMatrix m(n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

SymMatrix SymMatrix::from_matrix(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) throw ShapeMismatch("symmetric matrix must be square");
  SymMatrix out(m.rows());
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = r; c < m.cols(); ++c) {
      const double a = m(r, c);
      const double b = m(c, r);
      if (!std::isfinite(a) || !std::isfinite(b)) throw ShapeMismatch("non-finite entry in symmetric matrix");
      if (std::abs(a - b) > tol) throw ShapeMismatch("matrix not symmetric within tolerance");
      const double v = 0.5 * (a + b);
      out(r, c) = v;
      out(c, r) = v;
    }
  }
  return out;
}

SymMatrix& SymMatrix::operator+=(const SymMatrix& o) {
  if (dim_ != o.dim_) throw ShapeMismatch("sym add");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

SymMatrix& SymMatrix::operator-=(const SymMatrix& o) {
  if (dim_ != o.dim_) throw ShapeMismatch("sym sub");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

SymMatrix& SymMatrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void SymMatrix::axpy(double s, const SymMatrix& o) {
  if (dim_ != o.dim_) throw ShapeMismatch("sym axpy");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
}

double SymMatrix::trace() const {
  double acc = 0.0;
  for (int i = 0; i < dim_; ++i) acc += (*this)(i, i);
  return acc;
}

double SymMatrix::frobenius_norm() const {
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return std::sqrt(acc);
}

double SymMatrix::max_abs_diff(const SymMatrix& o) const {
  if (dim_ != o.dim_) throw ShapeMismatch("sym diff");
  double m = 0.0;
  for (size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::abs(data_[i] - o.data_[i]));
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul inner dims");
  Matrix c(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    double* crow = c.row_ptr(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (int j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeMismatch("matmul_tn inner dims");
  Matrix c(a.cols(), b.cols());
  for (int k = 0; k < a.rows(); ++k) {
    const double* arow = a.row_ptr(k);
    const double* brow = b.row_ptr(k);
    for (int i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = c.row_ptr(i);
      for (int j = 0; j < b.cols(); ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

Matrix sym_apply(const SymMatrix& s, const Matrix& x) {
  if (s.dim() != x.rows()) throw ShapeMismatch("sym_apply dims");
  Matrix y(x.rows(), x.cols());
  for (int i = 0; i < s.dim(); ++i) {
    double* yrow = y.row_ptr(i);
    for (int k = 0; k < s.dim(); ++k) {
      const double sik = s(i, k);
      if (sik == 0.0) continue;
      const double* xrow = x.row_ptr(k);
      for (int j = 0; j < x.cols(); ++j) yrow[j] += sik * xrow[j];
    }
  }
  return y;
}

SymMatrix gram(const Matrix& z, double scale) {
  if (z.empty()) throw ShapeMismatch("gram of empty matrix");
  const int d = z.rows();
  const double inv = 1.0 / scale;
  SymMatrix g(d);
  for (int i = 0; i < d; ++i) {
    const double* zi = z.row_ptr(i);
    for (int j = i; j < d; ++j) {
      const double* zj = z.row_ptr(j);
      double acc = 0.0;
      for (int c = 0; c < z.cols(); ++c) acc += zi[c] * zj[c];
      const double v = acc * inv;
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

SymMatrix operator-(const SymMatrix& a, const SymMatrix& b) {
  SymMatrix c = a;
  c -= b;
  return c;
}

SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) {
  SymMatrix c = a;
  c += b;
  return c;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace mcrnet
