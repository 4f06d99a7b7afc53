#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "certmpc/certified_solver.hpp"
#include "certmpc/mpc_design.hpp"
#include "certmpc/reference_oracle.hpp"

namespace certmpc {

/// Step sequence of set points, optionally rate limited (rate_max = 0: jumps).
struct SetpointProfile {
  Vector initial;
  std::vector<std::pair<double, Vector>> switches;  // (time, new target), increasing times
  double rate_max = 0.0;

  static SetpointProfile constant(Vector zd) {
    SetpointProfile s;
    s.initial = std::move(zd);
    return s;
  }

  Vector at(double t) const {
    Vector pos = initial;
    Vector target = initial;
    double now = 0.0;
    auto move = [&](double until) {
      if (until <= now) return;
      if (rate_max <= 0.0) {
        pos = target;
      } else {
        const Vector d = target - pos;
        const double dist = d.norm();
        const double step = rate_max * (until - now);
        pos = step >= dist ? target : Vector(pos + (step / dist) * d);
      }
      now = until;
    };
    for (const auto& [ts, zt] : switches) {
      if (ts > t) break;
      move(ts);
      target = zt;
      if (rate_max <= 0.0) pos = target;
    }
    move(t);
    return pos;
  }
};

/// State after `duration` from x under block values pu (zero input past the horizon).
inline Vector apply_profile(const MpcDesign& d, const Vector& x, const Vector& pu,
                            double duration) {
  Vector s = x;
  const Index nu = d.basis.n_u;
  double t = 0.0;
  for (Index b = 0; b < d.basis.blocks() && t < duration; ++b) {
    const double end = std::min(d.basis.edges[static_cast<std::size_t>(b) + 1], duration);
    if (end > t) {
      const Discretized z = zoh(d.sys.As, d.sys.Bs, end - t);
      s = z.Ad * s + z.Bd * pu.segment(b * nu, nu);
      t = end;
    }
  }
  if (duration > t) s = expm(d.sys.As * (duration - t)) * s;
  return s;
}

/// 1/2 int_0^tau (q(x(s)) + |u(s)|_R^2) ds along the prediction from x under pu.
inline double stage_cost_integral(const MpcDesign& d, const Vector& x, const Vector& pu,
                                  double tau) {
  const Matrix Qx = d.sys.C.transpose() * d.Q * d.sys.C;
  const Index nx = d.n_x();
  const Index nu = d.basis.n_u;
  Vector s = x;
  double t = 0.0, acc = 0.0;
  auto segment = [&](double h, const Vector& u) {
    const Matrix G = step_cost_gramian(d.sys.As, d.sys.Bs, Qx, d.R, h);
    Vector w(nx + nu);
    w << s, u;
    acc += 0.5 * w.dot(G * w);
    const Discretized z = zoh(d.sys.As, d.sys.Bs, h);
    s = z.Ad * s + z.Bd * u;
  };
  for (Index b = 0; b < d.basis.blocks() && t < tau; ++b) {
    const double end = std::min(d.basis.edges[static_cast<std::size_t>(b) + 1], tau);
    if (end > t) {
      segment(end - t, pu.segment(b * nu, nu));
      t = end;
    }
  }
  if (tau > t) segment(tau - t, Vector::Zero(nu));
  return acc;
}

/// Hot start [p_prev]^{+tau}: least-squares fit of the shifted profile over [0, T - tau].
inline Vector warm_start_shift(const MpcDesign& d, const Vector& p_prev, const Vector& x_prev,
                               const Vector& x_next, double tau) {
  require(p_prev.size() == d.n_p(), "warm_start_shift: p_prev has wrong size");
  if (tau < 0.0) throw ParameterError("warm_start_shift: tau must be >= 0");
  const Index nu = d.basis.n_u;
  const Index nb = d.basis.blocks();
  const double T = d.basis.horizon();
  const Vector w_prev = d.control_blocks(p_prev, x_prev);
  const double span = T - tau;

  Vector weight = Vector::Zero(nb);
  Vector target = Vector::Zero(d.m());
  for (Index j = 0; j < nb && span > 0.0; ++j) {
    const double a = d.basis.edges[static_cast<std::size_t>(j)];
    const double b = std::min(d.basis.edges[static_cast<std::size_t>(j) + 1], span);
    if (b <= a) continue;
    weight(j) = b - a;
    // Average of the old profile over [a + tau, b + tau].
    for (Index k = 0; k < nb; ++k) {
      const double lo = std::max(a + tau, d.basis.edges[static_cast<std::size_t>(k)]);
      const double hi = std::min(b + tau, d.basis.edges[static_cast<std::size_t>(k) + 1]);
      if (hi > lo) target.segment(j * nu, nu) += (hi - lo) * w_prev.segment(k * nu, nu);
    }
    target.segment(j * nu, nu) /= weight(j);
  }
  Matrix Kw = d.K;
  Vector rhs = target - d.M * x_next;
  for (Index j = 0; j < nb; ++j) {
    const double s = std::sqrt(weight(j));
    Kw.middleRows(j * nu, nu) *= s;
    rhs.segment(j * nu, nu) *= s;
  }
  return Eigen::CompleteOrthogonalDecomposition<Matrix>(Kw).solve(rhs);
}

struct TraceEvent {
  double t = 0.0;
  Vector x;
  double q = 0.0;
  double eps0 = 0.0;       // precision of the parameter applied from t_k
  double tau = 0.0;        // t_{k+1} - t_k
  IterCount N_budget = 0;  // tau = tau_c N_budget
  IterCount N_used = 0;    // iterations of the solve run during [t_k, t_{k+1})
  double f0_visited = 0.0;
  double max_hard_violation = 0.0;
  double max_soft_violation = 0.0;
  double decrease_margin = std::numeric_limits<double>::quiet_NaN();
  // Not exported.
  Vector p;
  Vector x_hat;            // state the parameter was computed for
  double delta = 0.0;      // stage-cost integral over [t_k, t_{k+1}] along the applied profile
  bool in_x_min = false;
};

struct ClosedLoopTrace {
  std::vector<TraceEvent> events;
};

struct SimOptions {
  double horizon = 10.0;
  double budget_scale = 1.0;  // < 1 injects a budget fault (tau unchanged)
  std::size_t max_events = 1000000;
};

namespace detail {

inline double max_row_violation(const MpcDesign& d, const IndexSet& rows, const Vector& p,
                                const Vector& x) {
  double v = 0.0;
  for (Index i : rows) v = std::max(v, d.A.row(i).dot(p) - d.B0(i) - d.B1.row(i).dot(x));
  return v;
}

}  // namespace detail

inline double decrease_threshold(const CertifiedSamplingLaw& law) {
  return law.gamma_c * law.q_min * law.q_min / (6.0 * law.bounds.D_C);
}

/// Real-time loop: at t_k the solver prepares p(t_{k+1}) for the predicted state within
/// tau_k = tau_c N_k while the plant runs the profile of p(t_k).
inline ClosedLoopTrace simulate(const MpcDesign& d, const CertifiedSamplingLaw& law,
                                const Vector& z0, const SetpointProfile& zd_profile,
                                const SimOptions& opt = {}) {
  const Index nz = d.n_z();
  require(z0.size() == nz && zd_profile.initial.size() == nz, "simulate: state size mismatch");
  if (law.table.empty()) throw PreconditionError("simulate: sampling law is not certified");
  const CompactSetBounds& b = law.bounds;
  if (!(b.p_radius > 0.0)) throw PreconditionError("simulate: compact set radius is zero");
  if (zd_profile.rate_max > b.E1)
    throw PreconditionError("simulate: set-point rate exceeds E1");
  if (zd_profile.rate_max <= 0.0 && !zd_profile.switches.empty() && b.E0 == 0.0)
    throw PreconditionError("simulate: set-point jumps need E0 > 0");

  Vector x(d.n_x());
  x << z0, zd_profile.initial;
  if ((d.M * x).cwiseAbs().maxCoeff() > d.u_bar)
    throw PreconditionError("simulate: |M x0|_inf exceeds u_bar (terminal constraint infeasible)");

  const double eps0_first_cap = decrease_threshold(law);
  const double eps0_init = std::min(updating_period(law, d, x).eps0, eps0_first_cap);
  const auto solve = [&](const Vector& xs, const Vector& p0, double eps0, IterCount cap) {
    const SuboptimalityPair pair(eps0, law.eps_psi);
    const QpProblem prob = d.problem_at(xs);
    const CertificationConstants c = certification_constants(prob, pair, b.p_radius, b.mode);
    return certified_solve(prob, p0, pair, c, NoObserver{}, cap);
  };

  // Initial parameter, computed before t0 from the cold start p = 0.
  const IterCount n_init = pipeline_N(b, SuboptimalityPair(eps0_init, law.eps_psi));
  CertifiedSolveReport first = solve(x, Vector::Zero(d.n_p()), eps0_init, n_init);
  Vector p = first.p_hat;
  if (d.f0(p, x) > b.phi0)
    throw PreconditionError("simulate: initial cost f0(p0, x0) exceeds phi0");

  ClosedLoopTrace tr;
  Vector x_hat = x;
  double t = 0.0;
  double eps0 = eps0_init;
  UpdatingPeriod held{};
  bool have_period = false;
  while (t < opt.horizon && tr.events.size() < opt.max_events) {
    TraceEvent ev;
    ev.t = t;
    ev.x = x;
    ev.q = d.q_of(x);
    ev.eps0 = eps0;
    ev.p = p;
    ev.x_hat = x_hat;
    ev.f0_visited = d.f0(p, x);
    ev.max_hard_violation = detail::max_row_violation(d, d.hard_idx, p, x_hat);
    ev.max_soft_violation = detail::max_row_violation(d, d.soft_idx, p, x);

    UpdatingPeriod u = updating_period(law, ev.q);
    ev.in_x_min = u.in_x_min;
    if (u.in_x_min && have_period) u = held;
    held = u;
    have_period = true;
    if (!(u.tau_k > 0.0)) throw DesignError("simulate: zero updating period");
    ev.tau = u.tau_k;
    ev.N_budget = u.N;

    const Vector pu = d.control_blocks(p, x_hat);
    ev.delta = stage_cost_integral(d, x, d.control_blocks(p, x), ev.tau);
    const Vector x_pred = apply_profile(d, x, pu, ev.tau);
    const Vector p0 = warm_start_shift(d, p, x_hat, x_pred, ev.tau);
    const IterCount cap = opt.budget_scale >= 1.0
                              ? u.N
                              : static_cast<IterCount>(opt.budget_scale * static_cast<double>(u.N));
    const CertifiedSolveReport rep = solve(x_pred, p0, u.eps0, cap);
    ev.N_used = rep.iters_used;

    // Plant: exact propagation of z under the applied profile; z_d follows its profile.
    Vector x_next = apply_profile(d, x, pu, ev.tau);
    t += ev.tau;
    x_next.tail(nz) = zd_profile.at(t);
    if (!tr.events.empty()) {
      TraceEvent& prev = tr.events.back();
      prev.decrease_margin = ev.f0_visited - prev.f0_visited + decrease_threshold(law);
    }
    tr.events.push_back(std::move(ev));
    x = x_next;
    x_hat = x_pred;
    p = rep.p_hat;
    eps0 = u.eps0;
  }
  return tr;
}

struct EventCheck {
  bool decrease = true;  // (a)
  bool hard = true;      // (b)
  bool soft = true;      // (c)
  bool budget = true;    // (d)
  bool lemma6 = true;
  bool delta_lb = true;
  bool suboptimal = true;  // (e) against the reference oracle, when requested
};

struct MonitorReport {
  std::vector<EventCheck> events;
  bool decrease = true;
  bool hard = true;
  bool soft = true;
  bool budget = true;
  bool lemma6 = true;
  bool delta_lb = true;
  bool suboptimal = true;
  bool suboptimality_checked = false;
  bool arrival = false;
  bool event_bound_ok = true;
  double event_bound = 0.0;
  std::size_t events_above_qmin = 0;
  double soft_limit = 0.0;
  double max_tau = 0.0;
  long first_failure = -1;

  bool all_pass() const {
    return decrease && hard && soft && budget && suboptimal && arrival && event_bound_ok;
  }
};

/// Online checks (a)-(d) per event; with check_suboptimality each parameter is also compared
/// with the oracle optimum of the QP it was computed for.
inline MonitorReport monitor(const ClosedLoopTrace& tr, const MpcDesign& d,
                             const CertifiedSamplingLaw& law, bool check_suboptimality = false) {
  const CompactSetBounds& b = law.bounds;
  MonitorReport r;
  r.suboptimality_checked = check_suboptimality;
  for (const auto& e : tr.events) r.max_tau = std::max(r.max_tau, e.tau);
  r.soft_limit = law.eps_psi + b.K_Cpsi * (b.E0 + b.E1 * r.max_tau);
  const double thr = decrease_threshold(law);
  r.event_bound = b.phi0 * 6.0 * b.D_C / (law.gamma_c * law.q_min * law.q_min);
  const std::size_t n = tr.events.size();
  for (std::size_t k = 0; k < n; ++k) {
    const TraceEvent& e = tr.events[k];
    EventCheck c;
    if (e.q > law.q_min) ++r.events_above_qmin;
    else r.arrival = true;
    if (k + 1 < n) {
      const TraceEvent& nx = tr.events[k + 1];
      const double diff = nx.f0_visited - e.f0_visited;
      if (e.q > law.q_min) c.decrease = diff <= -thr;
      const double rhs =
          e.eps0 + b.K_C0 * (b.E0 + b.E1 * e.tau) + nx.eps0 - e.delta;
      c.lemma6 = diff <= rhs;
    }
    c.delta_lb = e.delta >= gamma_lb(e.tau, e.q, b.D_C);
    c.hard = e.max_hard_violation <= 0.0;
    c.soft = e.max_soft_violation <= r.soft_limit;
    c.budget = e.N_used <= e.N_budget;
    if (check_suboptimality) {
      const QpProblem prob = d.problem_at(e.x_hat);
      const OracleSolution o = solve_reference(prob);
      c.suboptimal = is_suboptimal(prob, e.p, o.f_ref, SuboptimalityPair(e.eps0, law.eps_psi));
      r.suboptimal = r.suboptimal && c.suboptimal;
    }
    r.decrease = r.decrease && c.decrease;
    r.hard = r.hard && c.hard;
    r.soft = r.soft && c.soft;
    r.budget = r.budget && c.budget;
    r.lemma6 = r.lemma6 && c.lemma6;
    r.delta_lb = r.delta_lb && c.delta_lb;
    if (r.first_failure < 0 && !(c.decrease && c.hard && c.soft && c.budget && c.suboptimal))
      r.first_failure = static_cast<long>(k);
    r.events.push_back(c);
  }
  r.event_bound_ok = static_cast<double>(r.events_above_qmin) <= r.event_bound;
  if (n == 0) r.arrival = false;
  return r;
}

}  // namespace certmpc
