#pragma once

#include <cmath>
#include <vector>

namespace mmpred {

// Solves A x = b for symmetric positive-definite A (in-place Cholesky on a
// copy). Returns false when the factorization breaks down.
inline bool spd_solve(std::vector<double> A, std::vector<double> b, int n,
                      std::vector<double>& x) {
  // A = L L^T
  for (int j = 0; j < n; ++j) {
    double diag = A[static_cast<size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      const double l = A[static_cast<size_t>(j) * n + k];
      diag -= l * l;
    }
    if (diag <= 0.0 || !std::isfinite(diag)) return false;
    const double ljj = std::sqrt(diag);
    A[static_cast<size_t>(j) * n + j] = ljj;
    for (int i = j + 1; i < n; ++i) {
      double v = A[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k) {
        v -= A[static_cast<size_t>(i) * n + k] * A[static_cast<size_t>(j) * n + k];
      }
      A[static_cast<size_t>(i) * n + j] = v / ljj;
    }
  }
  // Forward then backward substitution.
  for (int i = 0; i < n; ++i) {
    double v = b[i];
    for (int k = 0; k < i; ++k) v -= A[static_cast<size_t>(i) * n + k] * b[k];
    b[i] = v / A[static_cast<size_t>(i) * n + i];
  }
  x.assign(n, 0.0);
  for (int i = n - 1; i >= 0; --i) {
    double v = b[i];
    for (int k = i + 1; k < n; ++k) v -= A[static_cast<size_t>(k) * n + i] * x[k];
    x[i] = v / A[static_cast<size_t>(i) * n + i];
  }
  return true;
}

}  // namespace mmpred
