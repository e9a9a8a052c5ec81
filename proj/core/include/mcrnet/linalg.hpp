#ifndef MCRNET_LINALG_HPP
#define MCRNET_LINALG_HPP

#include <optional>
#include <vector>

#include "mcrnet/matrix.hpp"

namespace mcrnet {

// Lower-triangular Cholesky factor of (shift*I + M). Pivots at or below
// 1e-14 signal a degenerate Gram / bad eps and raise NotPositiveDefinite.
class CholeskyFactor {
 public:
  static constexpr double kPivotFloor = 1e-14;

  static CholeskyFactor factor(const SymMatrix& m, double shift);

  int dim() const { return dim_; }
  double logdet() const;

  // solves (shift*I + M) X = B in place, column by column
  void solve_in_place(Matrix& b) const;

 private:
  int dim_ = 0;
  std::vector<double> l_;  // row-major lower triangle, full storage
};

// natural-log determinant of (shift*I + M) via Cholesky
double logdet_psd(const SymMatrix& m, double shift);

struct Spectrum {
  std::vector<double> values;     // non-increasing
  std::optional<Matrix> vectors;  // columns are eigenvectors, same order
};

// Cyclic Jacobi eigensolver for symmetric matrices. Terminates when the
// off-diagonal Frobenius norm drops below tol; NoConvergence if max_sweeps
// is exhausted first.
Spectrum sym_eig(const SymMatrix& m, double tol = 1e-10, int max_sweeps = 100, bool want_vectors = true);

// singular values of Z, i.e. sqrt of the eigenvalues of Z*Z^T (clamped at 0)
std::vector<double> singular_values(const Matrix& z);

}  // namespace mcrnet

#endif
