#pragma once

#include <unsupported/Eigen/MatrixFunctions>

#include "certmpc/linalg.hpp"

namespace certmpc {

inline Matrix expm(const Matrix& A) {
  if (A.rows() != A.cols()) throw InputError("expm: matrix not square");
  return A.exp();
}

/// Zero-order-hold discretisation x+ = Ad x + Bd u over a step h.
struct Discretized {
  Matrix Ad;
  Matrix Bd;
};

inline Discretized zoh(const Matrix& A, const Matrix& B, double h) {
  require(A.rows() == A.cols() && B.rows() == A.rows(), "zoh: dimension mismatch");
  const Index n = A.rows();
  const Index k = B.cols();
  Matrix M = Matrix::Zero(n + k, n + k);
  M.topLeftCorner(n, n) = A * h;
  M.topRightCorner(n, k) = B * h;
  const Matrix E = expm(M);
  return {E.topLeftCorner(n, n), E.topRightCorner(n, k)};
}

/// int_0^h exp(Ahat' s) Qhat exp(Ahat s) ds for Ahat = [[A, B], [0, 0]] and
/// Qhat = blkdiag(Qx, Ru), i.e. the exact cost of a constant input over one step.
inline Matrix step_cost_gramian(const Matrix& A, const Matrix& B, const Matrix& Qx,
                                const Matrix& Ru, double h) {
  const Index n = A.rows();
  const Index k = B.cols();
  const Index N = n + k;
  Matrix Ah = Matrix::Zero(N, N);
  Ah.topLeftCorner(n, n) = A;
  Ah.topRightCorner(n, k) = B;
  Matrix Qh = Matrix::Zero(N, N);
  Qh.topLeftCorner(n, n) = Qx;
  Qh.bottomRightCorner(k, k) = Ru;
  Matrix V = Matrix::Zero(2 * N, 2 * N);
  V.topLeftCorner(N, N) = -Ah.transpose() * h;
  V.topRightCorner(N, N) = Qh * h;
  V.bottomRightCorner(N, N) = Ah * h;
  const Matrix E = expm(V);
  const Matrix G = E.bottomRightCorner(N, N).transpose() * E.topRightCorner(N, N);
  return 0.5 * (G + G.transpose());
}

}  // namespace certmpc
