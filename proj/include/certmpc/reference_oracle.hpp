#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "certmpc/qp_problem.hpp"

namespace certmpc {

struct OracleSolution {
  Vector p_ref;
  double f_ref = 0.0;
  double kkt_residual = 0.0;
  IndexSet active_set;
  Vector multipliers;  // one per row, zero off the active set
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
  double dual = 0.0;
  double max() const { return std::max({stationarity, primal, complementarity, dual}); }
};

/// KKT residuals of (p, lambda) for min f0 s.t. A p <= B (untightened rows).
inline KktResiduals kkt_residuals(const QpProblem& prob, const Vector& p, const Vector& lambda) {
  KktResiduals k;
  const Vector slack = prob.A() * p - prob.B();
  k.stationarity =
      (prob.H() * p + prob.F() + prob.A().transpose() * lambda).lpNorm<Eigen::Infinity>();
  k.primal = prob.n_c() ? std::max(0.0, slack.maxCoeff()) : 0.0;
  k.complementarity = prob.n_c() ? lambda.cwiseProduct(slack).cwiseAbs().maxCoeff() : 0.0;
  k.dual = prob.n_c() ? std::max(0.0, -lambda.minCoeff()) : 0.0;
  return k;
}

namespace detail {

/// Dual active-set method of Goldfarb and Idnani on min 1/2 x'Gx + a'x s.t. A x <= B.
/// Returns the active set and multipliers; the primal point is recomputed by the caller.
class DualActiveSet {
 public:
  explicit DualActiveSet(const QpProblem& prob) : prob_(prob), llt_(prob.H()) {}

  void run(double feas_tol) {
    const Index n = prob_.n_p();
    const Index m = prob_.n_c();
    x_ = -llt_.solve(prob_.F());
    active_.clear();
    u_.resize(0);
    const Index max_outer = 20 * (n + m) + 100;
    for (Index outer = 0; outer < max_outer; ++outer) {
      // Most violated row (normalised by row norm).
      Index pick = -1;
      double worst = 0.0;
      for (Index i = 0; i < m; ++i) {
        if (in_active(i)) continue;
        const double nrm = std::max(prob_.A().row(i).norm(), 1e-300);
        const double viol = (prob_.A().row(i).dot(x_) - prob_.B()(i)) / nrm;
        if (viol > feas_tol && viol > worst) {
          worst = viol;
          pick = i;
        }
      }
      if (pick < 0) return;
      add_constraint(pick);
    }
    throw ConvergenceError("reference oracle: active-set iteration limit reached");
  }

  const IndexSet& active() const { return active_; }
  const Vector& x() const { return x_; }
  const Vector& u() const { return u_; }

 private:
  bool in_active(Index i) const {
    return std::find(active_.begin(), active_.end(), i) != active_.end();
  }

  Matrix active_normals() const {
    Matrix N(prob_.n_p(), static_cast<Index>(active_.size()));
    for (std::size_t k = 0; k < active_.size(); ++k)
      N.col(static_cast<Index>(k)) = prob_.A().row(active_[k]).transpose();
    return N;
  }

  // Primal direction z = H* a and dual direction r = N* a for the normal a.
  void directions(const Vector& a, Vector& z, Vector& r) const {
    const Matrix N = active_normals();
    const Vector ga = llt_.solve(a);
    if (N.cols() == 0) {
      z = ga;
      r.resize(0);
      return;
    }
    const Matrix Y = llt_.solve(N);
    const Matrix S = N.transpose() * Y;
    r = S.ldlt().solve(Y.transpose() * a);
    z = ga - Y * r;
  }

  void drop(Index k, Vector& u_plus) {
    active_.erase(active_.begin() + k);
    const Index len = u_plus.size();
    Vector nu(len - 1);
    nu << u_plus.head(k), u_plus.tail(len - k - 1);
    u_plus = nu;
  }

  // Minimising in direction -a (the row is A_p x <= B_p, i.e. normal -a_p in >= form).
  void add_constraint(Index pick) {
    const Vector a = prob_.A().row(pick).transpose();
    Vector u_plus(u_.size() + 1);
    u_plus << u_, 0.0;
    const double scale = 1.0 + a.norm();
    for (int inner = 0; inner < 10000; ++inner) {
      Vector z, r;
      // Direction that decreases A_p x while keeping active rows fixed.
      directions(-a, z, r);
      r = -r;  // multipliers of the >= form use normals -A_k
      // Dual partial step: active multipliers driven to zero.
      double t1 = std::numeric_limits<double>::infinity();
      Index drop_k = -1;
      for (Index k = 0; k < r.size(); ++k) {
        if (r(k) > 0.0) {
          const double t = u_plus(k) / r(k);
          if (t < t1) {
            t1 = t;
            drop_k = k;
          }
        }
      }
      const double zz = z.dot(-a);
      const bool z_zero = z.norm() <= 1e-13 * scale;
      const double viol = a.dot(x_) - prob_.B()(pick);
      const double t2 = z_zero ? std::numeric_limits<double>::infinity() : viol / zz;
      if (z_zero && !std::isfinite(t1))
        throw InfeasibleProblem("reference oracle: constraints are infeasible (row " +
                                std::to_string(pick) + ")");
      const double t = std::min(t1, t2);
      if (!z_zero) x_ += t * z;
      if (r.size()) u_plus.head(r.size()) -= t * r;
      u_plus(u_plus.size() - 1) += t;
      if (t2 <= t1) {
        active_.push_back(pick);
        u_ = u_plus;
        return;
      }
      drop(drop_k, u_plus);
    }
    throw ConvergenceError("reference oracle: inner loop did not terminate");
  }

  const QpProblem& prob_;
  Eigen::LLT<Matrix> llt_;
  Vector x_;
  IndexSet active_;
  Vector u_;
};

/// Equality-constrained solve on the rows in S; returns (p, lambda_S).
inline bool kkt_polish(const QpProblem& prob, const IndexSet& S, Vector& p, Vector& lam_S) {
  const Index n = prob.n_p();
  const Index k = static_cast<Index>(S.size());
  Matrix K = Matrix::Zero(n + k, n + k);
  Vector rhs(n + k);
  K.topLeftCorner(n, n) = prob.H();
  rhs.head(n) = -prob.F();
  for (Index j = 0; j < k; ++j) {
    const auto row = prob.A().row(S[static_cast<std::size_t>(j)]);
    K.block(n + j, 0, 1, n) = row;
    K.block(0, n + j, n, 1) = row.transpose();
    rhs(n + j) = prob.B()(S[static_cast<std::size_t>(j)]);
  }
  Eigen::FullPivLU<Matrix> lu(K);
  if (!lu.isInvertible()) return false;
  Vector sol = lu.solve(rhs);
  // One step of iterative refinement.
  sol += lu.solve(rhs - K * sol);
  p = sol.head(n);
  lam_S = sol.tail(k);
  return sol.allFinite();
}

}  // namespace detail

/// Trusted optimum of min f0 s.t. A p <= B (hard and soft rows alike, untightened).
inline OracleSolution solve_reference(const QpProblem& prob, double tol = 1e-9) {
  detail::DualActiveSet das(prob);
  das.run(0.1 * tol);
  OracleSolution sol;
  sol.active_set = das.active();
  sol.p_ref = das.x();
  sol.multipliers = Vector::Zero(prob.n_c());
  for (std::size_t j = 0; j < sol.active_set.size(); ++j)
    sol.multipliers(sol.active_set[j]) = das.u()(static_cast<Index>(j));

  Vector p;
  Vector lam_S;
  if (detail::kkt_polish(prob, sol.active_set, p, lam_S)) {
    Vector lam = Vector::Zero(prob.n_c());
    for (std::size_t j = 0; j < sol.active_set.size(); ++j)
      lam(sol.active_set[j]) = lam_S(static_cast<Index>(j));
    sol.p_ref = p;
    sol.multipliers = lam;
  }
  // Drop rows whose multiplier vanished so active_set lists binding rows only.
  IndexSet binding;
  for (Index i : sol.active_set)
    if (sol.multipliers(i) > 0.0) binding.push_back(i);
  std::sort(binding.begin(), binding.end());
  sol.active_set = binding;
  sol.f_ref = cost_value(prob, sol.p_ref);
  sol.kkt_residual = kkt_residuals(prob, sol.p_ref, sol.multipliers).max();
  if (!(sol.kkt_residual <= tol))
    throw ConvergenceError("reference oracle: KKT residual " + std::to_string(sol.kkt_residual) +
                           " above tolerance");
  return sol;
}

/// Independent recheck of an oracle solution at tol.
inline bool verify_reference(const QpProblem& prob, const OracleSolution& sol, double tol = 1e-9) {
  const KktResiduals k = kkt_residuals(prob, sol.p_ref, sol.multipliers);
  if (k.max() > tol) return false;
  for (Index i : sol.active_set)
    if (std::abs(prob.A().row(i).dot(sol.p_ref) - prob.B()(i)) > tol) return false;
  return std::abs(cost_value(prob, sol.p_ref) - sol.f_ref) <=
         tol * std::max(1.0, std::abs(sol.f_ref));
}

struct StationaryPoint {
  Vector p;
  IndexSet active_set;   // rows with A_i p - B_i + shift_i > 0
  double residual = 0.0; // ||H p + F + A_S' w|| with w the solved penalty forces
  int newton_steps = 0;
};

namespace detail {

// Directional derivative of f = f0 + rho psi along d at p + t d.
inline double line_slope(const QpProblem& prob, double rho, const Vector& p, const Vector& d,
                         const Vector& a, const Vector& c, double t) {
  double s = d.dot(prob.H() * (p + t * d) + prob.F());
  for (Index i = 0; i < a.size(); ++i) {
    const double v = a(i) + t * c(i);
    if (v > 0.0) s += 2.0 * rho * v * c(i);
  }
  return s;
}

// Exact minimiser over t in [0, 1] of the convex piecewise quadratic f(p + t d).
inline double exact_line_search(const QpProblem& prob, double rho, const Vector& p,
                                const Vector& d) {
  const Vector a = prob.A() * p - prob.B() + prob.shift();
  const Vector c = prob.A() * d;
  if (line_slope(prob, rho, p, d, a, c, 1.0) <= 0.0) return 1.0;
  std::vector<double> knots{0.0};
  for (Index i = 0; i < a.size(); ++i) {
    if (c(i) != 0.0) {
      const double t = -a(i) / c(i);
      if (t > 0.0 && t < 1.0) knots.push_back(t);
    }
  }
  knots.push_back(1.0);
  std::sort(knots.begin(), knots.end());
  double lo = 0.0;
  double slo = line_slope(prob, rho, p, d, a, c, 0.0);
  if (slo >= 0.0) return 0.0;
  for (std::size_t k = 1; k < knots.size(); ++k) {
    const double hi = knots[k];
    const double shi = line_slope(prob, rho, p, d, a, c, hi);
    if (shi >= 0.0) {
      // Slope is affine on [lo, hi].
      const double slope_of_slope = (shi - slo) / (hi - lo);
      return slope_of_slope > 0.0 ? std::clamp(lo - slo / slope_of_slope, lo, hi) : hi;
    }
    lo = hi;
    slo = shi;
  }
  return 1.0;
}

}  // namespace detail

/// Minimiser p* of f0 + rho psi by semismooth Newton with exact line search. Each Newton
/// system is solved in the regularised saddle form so it stays well conditioned for huge rho.
inline StationaryPoint stationary_point(const QpProblem& prob, double rho, double tol = 1e-9) {
  check_rho(rho);
  const Index n = prob.n_p();
  const Vector rhs_b = prob.B() - prob.shift();
  StationaryPoint out;
  Vector p = prob.unconstrained_minimizer();

  auto active_of = [&](const Vector& x) {
    IndexSet S;
    const Vector v = prob.A() * x - rhs_b;
    for (Index i = 0; i < v.size(); ++i)
      if (v(i) > 0.0) S.push_back(i);
    return S;
  };

  auto newton_target = [&](const IndexSet& S, Vector& w) {
    const Index k = static_cast<Index>(S.size());
    Matrix K = Matrix::Zero(n + k, n + k);
    Vector rhs(n + k);
    K.topLeftCorner(n, n) = prob.H();
    rhs.head(n) = -prob.F();
    for (Index j = 0; j < k; ++j) {
      const Index i = S[static_cast<std::size_t>(j)];
      K.block(n + j, 0, 1, n) = prob.A().row(i);
      K.block(0, n + j, n, 1) = prob.A().row(i).transpose();
      K(n + j, n + j) = -1.0 / (2.0 * rho);
      rhs(n + j) = rhs_b(i);
    }
    Eigen::PartialPivLU<Matrix> lu(K);
    Vector sol = lu.solve(rhs);
    sol += lu.solve(rhs - K * sol);
    w = sol.tail(k);
    return Vector(sol.head(n));
  };

  for (int it = 0; it < 500; ++it) {
    const IndexSet S = active_of(p);
    Vector w;
    const Vector target = newton_target(S, w);
    const IndexSet S_new = active_of(target);
    out.newton_steps = it + 1;
    if (S_new == S) {
      out.p = target;
      out.active_set = S;
      Vector g = prob.H() * target + prob.F();
      for (std::size_t j = 0; j < S.size(); ++j)
        g += w(static_cast<Index>(j)) * prob.A().row(S[j]).transpose();
      out.residual = g.norm();
      if (!(out.residual <= tol * std::max(1.0, prob.F().norm())))
        throw ConvergenceError("stationary_point: residual " + std::to_string(out.residual));
      return out;
    }
    const Vector d = target - p;
    const double t = detail::exact_line_search(prob, rho, p, d);
    if (t <= 0.0) {
      // Degenerate kink: take the full step; the active set still changes.
      p = target;
    } else {
      p += t * d;
    }
  }
  throw ConvergenceError("stationary_point: active set did not settle");
}

}  // namespace certmpc
