#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "certmpc/fast_gradient.hpp"
#include "certmpc/qp_problem.hpp"

namespace certmpc {

/// PaperLiteral: L_psi = sigma_max(A), beta = sigma_min+(A).
/// Conservative: L_psi = 2 sigma_max(A)^2, beta = sigma_min+(A)^2.
enum class ScalingMode { PaperLiteral, Conservative };

inline const char* to_string(ScalingMode m) {
  return m == ScalingMode::PaperLiteral ? "paper" : "conservative";
}

inline ScalingMode scaling_mode_from_string(const std::string& s) {
  if (s == "paper" || s == "PaperLiteral") return ScalingMode::PaperLiteral;
  if (s == "conservative" || s == "Conservative") return ScalingMode::Conservative;
  throw ParameterError("unknown scaling mode '" + s + "'");
}

struct QpScaling {
  double L0 = 0.0;
  double Lpsi = 0.0;
  double mu0 = 0.0;
  double beta = 0.0;
};

/// Scaling constants from the spectra of H and A.
inline QpScaling qp_scaling(const Matrix& H, const Matrix& A, ScalingMode mode) {
  const Vector ev = sym_eigenvalues(H);
  if (ev.size() == 0 || !(ev(0) > 0.0)) throw InvariantError("H is not positive definite");
  QpScaling s;
  s.mu0 = ev(0);
  s.L0 = ev(ev.size() - 1);
  const double smax = spectral_norm(A);
  const double smin = min_nonzero_singular_value(A);
  if (smax == 0.0) {
    // No active constraint geometry: psi is constant, any beta keeps rho = L0/beta finite.
    s.Lpsi = 0.0;
    s.beta = 1.0;
    return s;
  }
  if (mode == ScalingMode::PaperLiteral) {
    s.Lpsi = smax;
    s.beta = smin;
  } else {
    s.Lpsi = 2.0 * smax * smax;
    s.beta = smin * smin;
  }
  return s;
}

inline QpScaling qp_constants(const QpProblem& prob, ScalingMode mode) {
  return qp_scaling(prob.H(), prob.A(), mode);
}

/// Gradient bound at the augmented minimizer from the spectrum of H, ||F|| and a
/// norm bound on an admissible point.
inline double d0_upper_bound(double lmax, double lmin, double normF, double p_radius) {
  if (!(p_radius > 0.0)) throw ParameterError("d0_upper_bound: p_radius must be > 0");
  if (!(lmin > 0.0)) throw InvariantError("d0_upper_bound: lambda_min must be > 0");
  const double fbar = 0.5 * lmax * p_radius * p_radius + normF * p_radius;
  const double pbar = (normF + std::sqrt(normF * normF + 2.0 * lmin * fbar)) / lmin;
  return lmax * pbar + normF;
}

inline double d0_upper_bound(const QpProblem& prob, double p_radius) {
  const Vector ev = sym_eigenvalues(prob.H());
  return d0_upper_bound(ev(ev.size() - 1), ev(0), prob.F().norm(), p_radius);
}

/// Z1(eps) = (D0/L0)(sqrt(1 + 2 L0 eps/D0^2) - 1), evaluated without cancellation.
inline double z1(double eps, double D0, double L0) {
  if (!(eps >= 0.0)) throw ParameterError("z1: eps must be >= 0");
  if (!(D0 > 0.0)) {
    // D0 = 0 limit: L0 Z^2/2 = eps.
    return std::sqrt(2.0 * eps / L0);
  }
  return 2.0 * eps / (D0 * (std::sqrt(1.0 + 2.0 * L0 * eps / (D0 * D0)) + 1.0));
}

inline double kappa0(double L0, double beta, double mu0, double psi_pu) {
  return (2.0 * L0 / beta) * std::sqrt(2.0 * psi_pu / mu0);
}

inline double L_of_rho(double L0, double Lpsi, double rho) { return L0 + rho * Lpsi; }

struct PenaltyChoice {
  double rho = 0.0;
  double eta = 0.0;
  double rho1 = 0.0;
  double rho2 = 0.0;
  double rho3 = 0.0;
  double eta1 = 0.0;
  double eta2 = 0.0;
};

inline PenaltyChoice select_rho_eta(const QpScaling& s, double D0, double kappa0_value,
                                    const SuboptimalityPair& pair) {
  PenaltyChoice c;
  const double z = z1(0.5 * pair.eps0, D0, s.L0);
  c.rho3 = s.L0 / s.beta;
  if (kappa0_value > 0.0 && s.Lpsi > 0.0) {
    const double k2 = kappa0_value * kappa0_value;
    c.rho1 = 2.0 * s.Lpsi * k2 / (pair.eps_psi * pair.eps_psi);
    c.rho2 = s.Lpsi * k2 / (2.0 * s.beta * z * z);
  }
  c.rho = std::max({c.rho1, c.rho2, c.rho3});
  c.eta1 = 0.5 * s.mu0 * z * z;
  c.eta2 = s.Lpsi > 0.0 ? s.mu0 * pair.eps_psi * pair.eps_psi / (4.0 * s.Lpsi)
                        : std::numeric_limits<double>::infinity();
  c.eta = std::min(c.eta1, c.eta2);
  if (!(c.eta > 0.0)) throw NumericError("select_rho_eta: eta underflowed to 0");
  return c;
}

struct CertificationConstants {
  ScalingMode mode = ScalingMode::Conservative;
  double L0 = 0.0;
  double Lpsi = 0.0;
  double mu0 = 0.0;
  double beta = 0.0;
  double D0 = 0.0;
  double psi_pu = 0.0;
  double kappa0 = 0.0;
  double rho = 0.0;
  double eta = 0.0;
  double L_of_rho = 0.0;
  PenaltyChoice choice;

  SmoothnessPair smoothness() const { return SmoothnessPair(mu0, L_of_rho); }
};

/// All constants needed before iterating. p_radius bounds the norm of an admissible point.
inline CertificationConstants certification_constants(const QpProblem& prob,
                                                      const SuboptimalityPair& pair,
                                                      double p_radius, ScalingMode mode) {
  if (pair.eps_psi != prob.eps_psi())
    throw ParameterError("eps_psi of the pair differs from the problem's tightening");
  const QpScaling s = qp_constants(prob, mode);
  CertificationConstants c;
  c.mode = mode;
  c.L0 = s.L0;
  c.Lpsi = s.Lpsi;
  c.mu0 = s.mu0;
  c.beta = s.beta;
  c.D0 = d0_upper_bound(prob, p_radius);
  c.psi_pu = penalty_value(prob, prob.unconstrained_minimizer());
  c.kappa0 = kappa0(s.L0, s.beta, s.mu0, c.psi_pu);
  c.choice = select_rho_eta(s, c.D0, c.kappa0, pair);
  c.rho = c.choice.rho;
  c.eta = c.choice.eta;
  c.L_of_rho = L_of_rho(s.L0, s.Lpsi, c.rho);
  return c;
}

enum class ExitReason { GradientThreshold, IterationCap };

inline const char* to_string(ExitReason e) {
  return e == ExitReason::GradientThreshold ? "GradientThreshold" : "IterationCap";
}

struct CertifiedSolveReport {
  Vector p_hat;
  IterCount iters_used = 0;
  IterCount n_max = 0;
  ExitReason exit = ExitReason::GradientThreshold;
  double rho_used = 0.0;
  double eta_used = 0.0;
  double gamma0_log = 0.0;  // log(gamma0); gamma0 itself may underflow
  double g_min = 0.0;
  double f_start = 0.0;     // cost value entering gamma0
  double grad_norm = 0.0;   // ||f'(p_hat)||
};

/// Values at a checked iterate p_i, handed to solve observers.
struct IterateInfo {
  double f0 = 0.0;
  double psi = 0.0;
  double grad_norm = 0.0;
};

struct NoObserver {
  void operator()(IterCount, const Vector&, const IterateInfo&) const {}
};

/// Iteration cap N_max, gradient threshold g_min and log(gamma0) for a start point.
struct SolveBudget {
  IterCount n_max = 0;
  double g_min = 0.0;
  double log_gamma0 = 0.0;
  double f_start = 0.0;
};

inline SolveBudget solve_budget(const QpProblem& prob, const Vector& p0,
                                const CertificationConstants& consts) {
  SolveBudget b;
  const double f0 = cost_value(prob, p0);
  const double f = f0 + consts.rho * penalty_value(prob, p0);
  b.f_start = consts.mode == ScalingMode::PaperLiteral && f0 > 0.0 ? f0 : f;
  const double L = consts.L_of_rho;
  b.g_min = consts.mu0 * std::sqrt(2.0 * consts.eta / L);
  if (b.f_start <= 0.0) return b;
  b.log_gamma0 = std::log(consts.eta) + std::log(consts.mu0) - std::log(L + consts.mu0) -
                 std::log(b.f_start);
  b.n_max = nbar_log(consts.smoothness().c(), b.log_gamma0);
  return b;
}

/// Penalty fast-gradient solve with the a priori cap N_max and the gradient exit.
/// `cap` is an external budget (real-time slot); the loop stops at min(N_max, cap).
template <class Observer>
CertifiedSolveReport certified_solve(const QpProblem& prob, const Vector& p0,
                                     const SuboptimalityPair& pair,
                                     const CertificationConstants& consts, Observer&& observe,
                                     IterCount cap = kIterSaturated) {
  check_dim(prob, p0);
  if (pair.eps_psi != prob.eps_psi())
    throw ParameterError("eps_psi of the pair differs from the problem's tightening");
  const SolveBudget budget = solve_budget(prob, p0, consts);

  CertifiedSolveReport rep;
  rep.rho_used = consts.rho;
  rep.eta_used = consts.eta;
  rep.g_min = budget.g_min;
  rep.n_max = budget.n_max;
  rep.gamma0_log = budget.log_gamma0;
  rep.f_start = budget.f_start;

  const SmoothnessPair smooth = consts.smoothness();
  const Matrix& H = prob.H();
  const Matrix& A = prob.A();
  const Vector& F = prob.F();
  const Vector rhs = prob.B() - prob.shift();
  const double two_rho = 2.0 * consts.rho;
  const double inv_L = 1.0 / smooth.L;
  const Index n = prob.n_p();
  const Index m = prob.n_c();

  // Products with A and H are propagated through the affine extrapolation
  // q = p + beta (p - p_prev), so each step needs one A p, one H p and the A' r terms
  // of the rows with positive residual.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Arm = A;
  Vector p = p0, p_prev(n), q = p0, gq(n), gp(n);
  Vector Ap = Arm * p, Ap_prev(m), Aq = Ap;
  Vector Hp = H * p, Hp_prev(n), Hq = Hp;
  double psi_p = 0.0;
  double alpha = smooth.c();

  auto values = [&](IterateInfo& info) {
    info.f0 = 0.5 * p.dot(Hp) + F.dot(p) + prob.s0();
    info.psi = psi_p;
    info.grad_norm = gp.norm();
  };
  auto gradients = [&]() {
    gp = Hp + F;
    gq = Hq + F;
    psi_p = 0.0;
    for (Index i = 0; i < m; ++i) {
      const double rp = Ap(i) - rhs(i);
      const double rq = Aq(i) - rhs(i);
      if (rp > 0.0) {
        psi_p += rp * rp;
        gp.noalias() += (two_rho * rp) * Arm.row(i).transpose();
      }
      if (rq > 0.0) gq.noalias() += (two_rho * rq) * Arm.row(i).transpose();
    }
  };

  IterateInfo info;
  gradients();
  values(info);
  observe(IterCount{0}, static_cast<const Vector&>(p), static_cast<const IterateInfo&>(info));
  if (budget.f_start <= 0.0) {
    rep.p_hat = p;
    rep.grad_norm = info.grad_norm;
    return rep;
  }
  IterCount it = 0;
  const IterCount limit = std::min(budget.n_max, cap);
  while (it < limit && info.grad_norm > budget.g_min) {
    p_prev.swap(p);
    Ap_prev.swap(Ap);
    Hp_prev.swap(Hp);
    p = q - inv_L * gq;
    Ap.noalias() = Arm * p;
    Hp.noalias() = H * p;
    const double a_next = alpha_next(alpha, smooth);
    const double beta = momentum(alpha, a_next);
    alpha = a_next;
    q = p + beta * (p - p_prev);
    Aq = Ap + beta * (Ap - Ap_prev);
    Hq = Hp + beta * (Hp - Hp_prev);
    ++it;
    gradients();
    values(info);
    if (!std::isfinite(info.grad_norm) || !std::isfinite(info.f0))
      throw NumericError("non-finite iterate", it);
    observe(it, static_cast<const Vector&>(p), static_cast<const IterateInfo&>(info));
  }
  rep.p_hat = p;
  rep.iters_used = it;
  rep.grad_norm = info.grad_norm;
  rep.exit = info.grad_norm <= budget.g_min ? ExitReason::GradientThreshold
                                            : ExitReason::IterationCap;
  return rep;
}

inline CertifiedSolveReport certified_solve(const QpProblem& prob, const Vector& p0,
                                            const SuboptimalityPair& pair,
                                            const CertificationConstants& consts) {
  return certified_solve(prob, p0, pair, consts, NoObserver{});
}

}  // namespace certmpc
