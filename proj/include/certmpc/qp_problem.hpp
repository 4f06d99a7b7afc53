#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "certmpc/linalg.hpp"

namespace certmpc {

/// Target precision (eps0, eps_psi) of an approximate solution.
struct SuboptimalityPair {
  double eps0 = 0.0;
  double eps_psi = 0.0;

  SuboptimalityPair() = default;
  SuboptimalityPair(double e0, double epsi) : eps0(e0), eps_psi(epsi) {
    if (!(e0 > 0.0) || !std::isfinite(e0)) throw ParameterError("eps0 must be > 0");
    if (!(epsi > 0.0) || !std::isfinite(epsi)) throw ParameterError("eps_psi must be > 0");
  }
};

/// min 1/2 p'Hp + F'p + s0  s.t.  A p <= B, rows split into hard and soft.
/// Hard rows are tightened by eps_psi inside the penalty.
class QpProblem {
 public:
  QpProblem() = default;

  QpProblem(Matrix H, Vector F, double s0, Matrix A, Vector B, IndexSet hard_idx,
            IndexSet soft_idx, double eps_psi)
      : H_(std::move(H)),
        F_(std::move(F)),
        s0_(s0),
        A_(std::move(A)),
        B_(std::move(B)),
        hard_(std::move(hard_idx)),
        soft_(std::move(soft_idx)),
        eps_psi_(eps_psi) {
    validate();
  }

  /// All rows soft.
  static QpProblem all_soft(Matrix H, Vector F, double s0, Matrix A, Vector B, double eps_psi) {
    IndexSet soft(static_cast<std::size_t>(A.rows()));
    for (Index i = 0; i < A.rows(); ++i) soft[static_cast<std::size_t>(i)] = i;
    return QpProblem(std::move(H), std::move(F), s0, std::move(A), std::move(B), {},
                     std::move(soft), eps_psi);
  }

  const Matrix& H() const { return H_; }
  const Vector& F() const { return F_; }
  double s0() const { return s0_; }
  const Matrix& A() const { return A_; }
  const Vector& B() const { return B_; }
  const IndexSet& hard_idx() const { return hard_; }
  const IndexSet& soft_idx() const { return soft_; }
  double eps_psi() const { return eps_psi_; }
  Index n_p() const { return H_.rows(); }
  Index n_c() const { return A_.rows(); }

  /// Per-row shift added inside the penalty: eps_psi on hard rows, 0 on soft.
  const Vector& shift() const { return shift_; }
  bool is_hard(Index i) const { return shift_(i) > 0.0; }

  /// Unconstrained minimizer -H^{-1}F.
  Vector unconstrained_minimizer() const { return -H_.llt().solve(F_); }

  /// Same problem with a different tightening eps_psi.
  QpProblem with_eps_psi(double eps_psi) const {
    return QpProblem(H_, F_, s0_, A_, B_, hard_, soft_, eps_psi);
  }

  /// Same problem with different data vectors (used by MPC instantiation).
  QpProblem with_linear_terms(Vector F, double s0, Vector B) const {
    QpProblem out = *this;
    require(F.size() == n_p() && B.size() == n_c(), "with_linear_terms: dimension mismatch");
    out.F_ = std::move(F);
    out.s0_ = s0;
    out.B_ = std::move(B);
    out.check_lower_bound();
    return out;
  }

 private:
  void validate() {
    const Index n = H_.rows();
    require(H_.cols() == n, "QpProblem: H must be square");
    require(n > 0, "QpProblem: n_p must be positive");
    require(F_.size() == n, "QpProblem: F has wrong size");
    require(A_.cols() == n || A_.rows() == 0, "QpProblem: A has wrong column count");
    if (A_.rows() == 0) A_.resize(0, n);
    require(B_.size() == A_.rows(), "QpProblem: B has wrong size");
    require(H_.allFinite() && F_.allFinite() && A_.allFinite() && B_.allFinite() &&
                std::isfinite(s0_),
            "QpProblem: non-finite data");
    if (!(eps_psi_ > 0.0) || !std::isfinite(eps_psi_))
      throw ParameterError("QpProblem: eps_psi must be > 0");

    const Index m = A_.rows();
    std::vector<int> seen(static_cast<std::size_t>(m), 0);
    for (Index i : hard_) {
      require(i >= 0 && i < m, "QpProblem: hard index out of range");
      ++seen[static_cast<std::size_t>(i)];
    }
    for (Index i : soft_) {
      require(i >= 0 && i < m, "QpProblem: soft index out of range");
      ++seen[static_cast<std::size_t>(i)];
    }
    for (int s : seen)
      if (s != 1) throw InvariantError("QpProblem: hard/soft sets must partition the rows");

    const double sym = (H_ - H_.transpose()).cwiseAbs().maxCoeff();
    if (sym > 1e-12 * std::max(1.0, H_.cwiseAbs().maxCoeff()))
      throw InvariantError("QpProblem: H is not symmetric");
    H_ = 0.5 * (H_ + H_.transpose());
    if (!(lambda_min(H_) > 0.0)) throw InvariantError("QpProblem: H is not positive definite");

    shift_ = Vector::Zero(m);
    for (Index i : hard_) shift_(i) = eps_psi_;
    check_lower_bound();
  }

  // f0(p_u) >= 0 up to rounding.
  void check_lower_bound() const {
    const double fmin = s0_ - 0.5 * F_.dot(H_.llt().solve(F_));
    if (fmin < -1e-9 * std::max(1.0, std::abs(s0_)))
      throw InvariantError("QpProblem: f0 is negative at its unconstrained minimum");
  }

  Matrix H_;
  Vector F_;
  double s0_ = 0.0;
  Matrix A_;
  Vector B_;
  IndexSet hard_;
  IndexSet soft_;
  double eps_psi_ = 1.0;
  Vector shift_;
};

inline void check_dim(const QpProblem& prob, const Vector& p) {
  if (p.size() != prob.n_p())
    throw InputError("vector has size " + std::to_string(p.size()) + ", expected " +
                     std::to_string(prob.n_p()));
}

inline double cost_value(const QpProblem& prob, const Vector& p) {
  check_dim(prob, p);
  return 0.5 * p.dot(prob.H() * p) + prob.F().dot(p) + prob.s0();
}

/// max{0, A p - B + shift} per row.
inline Vector penalty_residual(const QpProblem& prob, const Vector& p) {
  check_dim(prob, p);
  return (prob.A() * p - prob.B() + prob.shift()).cwiseMax(0.0);
}

inline double penalty_value(const QpProblem& prob, const Vector& p) {
  return penalty_residual(prob, p).squaredNorm();
}

inline void check_rho(double rho) {
  if (!(rho > 0.0) || !std::isfinite(rho)) throw ParameterError("rho must be > 0");
}

inline double augmented_cost(const QpProblem& prob, double rho, const Vector& p) {
  check_rho(rho);
  return cost_value(prob, p) + rho * penalty_value(prob, p);
}

inline Vector augmented_gradient(const QpProblem& prob, double rho, const Vector& p) {
  check_rho(rho);
  const Vector r = penalty_residual(prob, p);
  return prob.H() * p + prob.F() + (2.0 * rho) * (prob.A().transpose() * r);
}

/// Largest A_i p - B_i over hard rows (untightened); -inf if none.
inline double max_hard_violation(const QpProblem& prob, const Vector& p) {
  check_dim(prob, p);
  double v = -std::numeric_limits<double>::infinity();
  for (Index i : prob.hard_idx()) v = std::max(v, prob.A().row(i).dot(p) - prob.B()(i));
  return v;
}

/// Largest A_i p - B_i over soft rows; -inf if none.
inline double max_soft_violation(const QpProblem& prob, const Vector& p) {
  check_dim(prob, p);
  double v = -std::numeric_limits<double>::infinity();
  for (Index i : prob.soft_idx()) v = std::max(v, prob.A().row(i).dot(p) - prob.B()(i));
  return v;
}

inline bool is_suboptimal(const QpProblem& prob, const Vector& p, double f_opt,
                          const SuboptimalityPair& pair) {
  const double f0 = cost_value(prob, p);
  const double psi = penalty_value(prob, p);
  return std::abs(f0 - f_opt) <= pair.eps0 && psi <= pair.eps_psi * pair.eps_psi;
}

}  // namespace certmpc
