#include "mcrnet/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mcrnet/errors.hpp"

namespace mcrnet {

CholeskyFactor CholeskyFactor::factor(const SymMatrix& m, double shift) {
  const int n = m.dim();
  CholeskyFactor f;
  f.dim_ = n;
  f.l_.assign(static_cast<size_t>(n) * n, 0.0);
  auto l = [&f, n](int r, int c) -> double& { return f.l_[static_cast<size_t>(r) * n + c]; };

  for (int j = 0; j < n; ++j) {
    double pivot = m(j, j) + shift;
    for (int k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > kPivotFloor)) {
      throw NotPositiveDefinite("pivot " + std::to_string(pivot) + " at index " + std::to_string(j));
    }
    const double ljj = std::sqrt(pivot);
    l(j, j) = ljj;
    for (int i = j + 1; i < n; ++i) {
      double acc = m(i, j) + (i == j ? shift : 0.0);
      for (int k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      l(i, j) = acc / ljj;
    }
  }
  return f;
}

double CholeskyFactor::logdet() const {
  double acc = 0.0;
  for (int i = 0; i < dim_; ++i) acc += std::log(l_[static_cast<size_t>(i) * dim_ + i]);
  return 2.0 * acc;
}

void CholeskyFactor::solve_in_place(Matrix& b) const {
  if (b.rows() != dim_) throw ShapeMismatch("cholesky solve dims");
  const int n = dim_;
  const int m = b.cols();
  auto l = [this, n](int r, int c) { return l_[static_cast<size_t>(r) * n + c]; };
  // forward: L Y = B
  for (int i = 0; i < n; ++i) {
    double* bi = b.row_ptr(i);
    for (int k = 0; k < i; ++k) {
      const double lik = l(i, k);
      const double* bk = b.row_ptr(k);
      for (int c = 0; c < m; ++c) bi[c] -= lik * bk[c];
    }
    const double inv = 1.0 / l(i, i);
    for (int c = 0; c < m; ++c) bi[c] *= inv;
  }
  // backward: L^T X = Y
  for (int i = n - 1; i >= 0; --i) {
    double* bi = b.row_ptr(i);
    for (int k = i + 1; k < n; ++k) {
      const double lki = l(k, i);
      const double* bk = b.row_ptr(k);
      for (int c = 0; c < m; ++c) bi[c] -= lki * bk[c];
    }
    const double inv = 1.0 / l(i, i);
    for (int c = 0; c < m; ++c) bi[c] *= inv;
  }
}

double logdet_psd(const SymMatrix& m, double shift) {
  return CholeskyFactor::factor(m, shift).logdet();
}

namespace {

double offdiag_frobenius(const SymMatrix& a) {
  double acc = 0.0;
  for (int i = 0; i < a.dim(); ++i) {
    for (int j = 0; j < a.dim(); ++j) {
      if (i != j) acc += a(i, j) * a(i, j);
    }
  }
  return std::sqrt(acc);
}

}  // namespace

Spectrum sym_eig(const SymMatrix& m, double tol, int max_sweeps, bool want_vectors) {
  if (tol <= 0.0) throw ShapeMismatch("sym_eig tol must be positive");
  const int n = m.dim();
  SymMatrix a = m;
  Matrix v = Matrix::identity(n);

  bool converged = offdiag_frobenius(a) < tol;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    converged = offdiag_frobenius(a) < tol;
  }
  if (!converged) throw NoConvergence("jacobi sweeps exhausted");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&a](int x, int y) { return a(x, x) > a(y, y); });

  Spectrum out;
  out.values.resize(n);
  for (int i = 0; i < n; ++i) out.values[i] = a(order[i], order[i]);
  if (want_vectors) {
    Matrix vec(n, n);
    for (int c = 0; c < n; ++c) {
      for (int r = 0; r < n; ++r) vec(r, c) = v(r, order[c]);
    }
    out.vectors = std::move(vec);
  }
  return out;
}

std::vector<double> singular_values(const Matrix& z) {
  const Spectrum s = sym_eig(gram(z, 1.0), 1e-12, 100, false);
  std::vector<double> sv(s.values.size());
  for (size_t i = 0; i < sv.size(); ++i) sv[i] = std::sqrt(std::max(0.0, s.values[i]));
  return sv;
}

}  // namespace mcrnet
