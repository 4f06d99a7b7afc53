#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "certmpc/errors.hpp"

namespace certmpc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using IndexSet = std::vector<Index>;

/// Eigenvalues of a symmetric matrix in ascending order.
inline Vector sym_eigenvalues(const Matrix& S) {
  if (S.rows() != S.cols()) throw InputError("sym_eigenvalues: matrix not square");
  if (S.rows() == 0) return Vector();
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("symmetric eigensolver failed");
  return es.eigenvalues();
}

inline double lambda_max(const Matrix& S) {
  if (S.rows() == 0) return 0.0;
  return sym_eigenvalues(S).maxCoeff();
}

inline double lambda_min(const Matrix& S) {
  if (S.rows() == 0) return 0.0;
  return sym_eigenvalues(S).minCoeff();
}

/// Singular values in descending order.
inline Vector singular_values(const Matrix& A) {
  if (A.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(A);
  return svd.singularValues();
}

/// Spectral (operator 2-) norm.
inline double spectral_norm(const Matrix& A) {
  if (A.size() == 0) return 0.0;
  return singular_values(A)(0);
}

/// Smallest singular value above rel_tol * sigma_max; 0 for the zero matrix.
inline double min_nonzero_singular_value(const Matrix& A, double rel_tol = 1e-12) {
  const Vector s = singular_values(A);
  if (s.size() == 0 || s(0) == 0.0) return 0.0;
  double out = s(0);
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) out = s(i);
  return out;
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InputError(msg);
}

/// Orthonormal basis of the null space of A (columns), via full SVD.
inline Matrix null_space(const Matrix& A, double rel_tol = 1e-10) {
  const Index n = A.cols();
  if (A.rows() == 0) return Matrix::Identity(n, n);
  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeFullV);
  const Vector s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  Index rank = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * std::max(smax, 1e-300)) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

inline Index numerical_rank(const Matrix& A, double rel_tol = 1e-10) {
  const Vector s = singular_values(A);
  if (s.size() == 0 || s(0) == 0.0) return 0;
  Index rank = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++rank;
  return rank;
}

/// Moore-Penrose pseudo-inverse.
inline Matrix pseudo_inverse(const Matrix& A, double rel_tol = 1e-10) {
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
  cod.setThreshold(rel_tol);
  return cod.pseudoInverse();
}

}  // namespace certmpc
