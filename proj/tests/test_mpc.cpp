#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "certmpc/closed_loop.hpp"
#include "certmpc/experiments.hpp"
#include "certmpc/mpc_design.hpp"
#include "test_support.hpp"

using namespace certmpc;
using namespace certmpc::testing;

namespace {

const MpcDesign& design4() {
  static const MpcDesign d = build_design(integrator_chain(4), DesignConfig{});
  return d;
}

const MpcDesign& design2() {
  static const MpcDesign d = build_design(integrator_chain(2), DesignConfig{});
  return d;
}

// RK4 propagation to time s under block values pu (fine steps, block edges respected).
Vector rk4_state_at(const MpcDesign& d, const Vector& x0, const Vector& pu, double s) {
  Vector x = x0;
  const Index nu = d.basis.n_u;
  for (Index b = 0; b < d.basis.blocks(); ++b) {
    const double a = d.basis.edges[static_cast<std::size_t>(b)];
    const double e = std::min(d.basis.edges[static_cast<std::size_t>(b) + 1], s);
    if (e <= a) break;
    const int steps = 400;
    const double h = (e - a) / steps;
    for (int k = 0; k < steps; ++k) x = rk4(d.sys.As, d.sys.Bs, x, pu.segment(b * nu, nu), h);
  }
  return x;
}

// Demo law shared by the closed-loop tests.
struct Demo {
  ExperimentConfig cfg = demo_closed_loop_config();
  MpcDesign d = design_from_config(cfg);
  CertifiedSamplingLaw law = certified_law(d, cfg);
};

const Demo& demo() {
  static const Demo x;
  return x;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double e : v) out(i++) = e;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Design construction

TEST(Design, ExtendedSystemShape) {
  const Plant pl = integrator_chain(4);
  const ExtendedSystem s = build_extended(pl.A0, pl.B0m, 4);
  EXPECT_EQ(s.n_x(), 8);
  EXPECT_EQ(s.n_z(), 4);
  EXPECT_EQ(s.n_u(), 1);
  EXPECT_TRUE(s.As.bottomRows(4).isZero());
  EXPECT_TRUE(s.Bs.bottomRows(4).isZero());
  const Vector x = vec({1, 2, 3, 4, 0.5, 0.5, 0.5, 0.5});
  EXPECT_TRUE((s.C * x).isApprox(vec({0.5, 1.5, 2.5, 3.5})));
  EXPECT_THROW(build_extended(pl.A0, pl.B0m, 3), InputError);
}

TEST(Design, UniformBasis) {
  const PiecewiseConstantBasis b = PiecewiseConstantBasis::uniform(10.0, 10);
  EXPECT_EQ(b.blocks(), 10);
  EXPECT_EQ(b.m(), 10);
  EXPECT_DOUBLE_EQ(b.width(3), 1.0);
  EXPECT_EQ(b.block_of(0.0), 0);
  EXPECT_EQ(b.block_of(1.0), 1);
  EXPECT_EQ(b.block_of(9.99), 9);
  EXPECT_EQ(b.block_of(10.0), 9);
  EXPECT_THROW(b.block_of(10.5), ParameterError);
  EXPECT_THROW(PiecewiseConstantBasis::uniform(0.0, 3), ParameterError);
}

TEST(Design, SingleIntegratorOneBlockHasNoFreeParameter) {
  const Plant pl = integrator_chain(1);
  const ExtendedSystem s = build_extended(pl.A0, pl.B0m, 1);
  const Parametrization par = build_parametrization(s, PiecewiseConstantBasis::uniform(2.0, 1));
  EXPECT_EQ(par.K.cols(), 0);
  // z + 2u = zd
  EXPECT_NEAR(par.M(0, 0), -0.5, 1e-14);
  EXPECT_NEAR(par.M(0, 1), 0.5, 1e-14);
  DesignConfig cfg;
  cfg.T = 2.0;
  cfg.blocks = 1;
  EXPECT_THROW(build_design(pl, cfg), DesignError);
}

TEST(Design, DimensionsOfTheIntegratorDesigns) {
  const MpcDesign& d4 = design4();
  EXPECT_EQ(d4.n_p(), 6);
  EXPECT_EQ(d4.n_c(), 300);
  EXPECT_EQ(d4.hard_idx.size(), 20u);
  EXPECT_EQ(d4.soft_idx.size(), 280u);
  EXPECT_EQ(design2().n_p(), 8);
  EXPECT_GT(lambda_min(d4.H), 0.0);
  // K has orthonormal columns
  EXPECT_LE((d4.K.transpose() * d4.K - Matrix::Identity(6, 6)).norm(), 1e-12);
}

TEST(Design, MidpointGrid) {
  const std::vector<double> g = midpoint_grid(10.0, 4);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_DOUBLE_EQ(g[0], 1.25);
  EXPECT_DOUBLE_EQ(g[3], 8.75);
  EXPECT_THROW(midpoint_grid(1.0, 0), ParameterError);
}

TEST(Design, TerminalConstraintHoldsForEveryParameter) {
  Rng g(41);
  for (const MpcDesign* d : {&design4(), &design2()}) {
    for (int k = 0; k < 20; ++k) {
      const Vector p = randn(g, d->n_p(), 2.0);
      const Vector x = randn(g, d->n_x(), 2.0);
      const Vector pu = d->control_blocks(p, x);
      EXPECT_LE((d->sys.C * d->predict(x, pu, d->T)).norm(), 1e-9);
      Vector x_end;
      trajectory_cost(*d, x, pu, 100, &x_end);
      EXPECT_LE((d->sys.C * x_end).norm(), 1e-8 * std::max(1.0, x.norm()));
    }
  }
}

TEST(Design, CondensedCostMatchesQuadrature) {
  Rng g(43);
  for (const MpcDesign* d : {&design4(), &design2()}) {
    for (int k = 0; k < 15; ++k) {
      const Vector p = randn(g, d->n_p());
      const Vector x = randn(g, d->n_x());
      const double quad = trajectory_cost(*d, x, d->control_blocks(p, x), 200);
      EXPECT_NEAR(d->f0(p, x), quad, 1e-8 * quad);
    }
  }
}

TEST(Design, ConstraintRowsMatchPredictedTrajectory) {
  Rng g(47);
  const MpcDesign& d = design4();
  for (int k = 0; k < 5; ++k) {
    const Vector p = randn(g, d.n_p());
    const Vector x = randn(g, d.n_x());
    const Vector pu = d.control_blocks(p, x);
    const Vector lhs = d.A * p - d.B0 - d.B1 * x;
    Index row = 0;
    for (double s : d.check_grid) {
      const Vector xs = rk4_state_at(d, x, pu, s);
      for (const auto& bd : d.plant.state_box) {
        EXPECT_NEAR(lhs(row++), xs(bd.component) - bd.hi, 1e-9);
        EXPECT_NEAR(lhs(row++), bd.lo - xs(bd.component), 1e-9);
      }
    }
    for (Index j = 0; j < d.m(); ++j) {
      EXPECT_NEAR(lhs(row++), pu(j) - d.u_bar, 1e-10);
      EXPECT_NEAR(lhs(row++), -pu(j) - d.u_bar, 1e-10);
    }
    EXPECT_EQ(row, d.n_c());
  }
}

TEST(Design, PredictionMapMatchesPredict) {
  Rng g(53);
  const MpcDesign& d = design4();
  const Vector x = randn(g, d.n_x());
  const Vector pu = randn(g, d.m());
  Vector w(d.n_x() + d.m());
  w << x, pu;
  for (double s : {0.0, 0.3, 1.0, 4.7, 10.0})
    EXPECT_LE((d.prediction_map(s) * w - d.predict(x, pu, s)).norm(), 1e-11);
}

TEST(Design, ProblemAtInstantiatesTheCondensedQp) {
  const MpcDesign& d = design4();
  Rng g(59);
  const Vector x = randn(g, d.n_x(), 0.1);
  const Vector p = randn(g, d.n_p());
  const QpProblem q = d.problem_at(x);
  EXPECT_NEAR(cost_value(q, p), d.f0(p, x), 1e-10 * std::max(1.0, d.f0(p, x)));
  EXPECT_EQ(q.hard_idx(), d.hard_idx);
  EXPECT_THROW(d.problem_at(Vector::Zero(3)), InputError);
}

// ---------------------------------------------------------------------------
// Compact-set constants

TEST(Bounds, Phi0AndRadiiExamples) {
  EXPECT_DOUBLE_EQ(phi0_bound(2.0, 10.0, 5.0, ScalingMode::Conservative), 8.0);
  EXPECT_DOUBLE_EQ(phi0_bound(2.0, 10.0, 5.0, ScalingMode::PaperLiteral), 4.0);
  EXPECT_THROW(phi0_bound(2.0, 10.0, 0.0, ScalingMode::PaperLiteral), DesignError);
  const CompactRadii a = compact_radii(2.0, 8.0, 1.0);
  EXPECT_DOUBLE_EQ(a.p_radius, 2.0);
  EXPECT_DOUBLE_EQ(a.x_radius, 3.0);
  EXPECT_DOUBLE_EQ(compact_radii(2.0, 8.0, 1.0, 2.0).p_radius, std::sqrt(8.0));
  EXPECT_THROW(compact_radii(0.0, 1.0, 1.0), DesignError);
}

TEST(Bounds, W0IsPositiveDefinite) {
  EXPECT_GT(lambda_min(w0_matrix(design4())), 0.0);
  EXPECT_GT(lambda_min(w0_matrix(design2())), 0.0);
}

TEST(Bounds, PsiMaxExamplesAndDomination) {
  Matrix Mr(2, 2);
  Mr << 3, 4, 0, 1;
  EXPECT_DOUBLE_EQ(psi_max_bound(Mr, vec({1.0, 2.0}), 1.0), 16.0);
  EXPECT_DOUBLE_EQ(psi_max_bound(Mr, vec({10.0, 2.0}), 1.0), 0.0);
  EXPECT_THROW(psi_max_bound(Mr, vec({1.0}), 1.0), InputError);

  // psi at the unconstrained minimiser never exceeds the ball bound
  Rng g(61);
  const MpcDesign& d = design4();
  for (double r : {0.5, 2.0, 8.0}) {
    const double bound = psi_max(d, r);
    for (int k = 0; k < 200; ++k) {
      Vector x = randn(g, d.n_x());
      x *= r * std::pow(uniform(g, 0.0, 1.0), 0.125) / x.norm();
      const QpProblem q = d.problem_at(x);
      EXPECT_LE(penalty_value(q, q.unconstrained_minimizer()), bound * (1.0 + 1e-12) + 1e-12);
    }
  }
}

TEST(Bounds, PredictionErrorModes) {
  const PredictionError f = prediction_error(SetpointMode::Filtered, 5.0, 0.1, 0.02);
  EXPECT_EQ(f.E0, 0.0);
  EXPECT_DOUBLE_EQ(f.E1, 0.12);
  EXPECT_EQ(prediction_error(SetpointMode::Raw, 5.0, 0.0, 0.0).E0, 5.0);
  EXPECT_THROW(prediction_error(SetpointMode::Raw, -1.0, 0.0, 0.0), ParameterError);
  EXPECT_EQ(setpoint_mode_from_string("raw"), SetpointMode::Raw);
  EXPECT_THROW(setpoint_mode_from_string("x"), ParameterError);
}

TEST(Bounds, F0MaxDominatesTheCompactSet) {
  const MpcDesign& d = design4();
  BoundsConfig bc;
  bc.mode = ScalingMode::Conservative;
  const CompactSetBounds b = compute_bounds(d, bc);
  Rng g(67);
  for (int k = 0; k < 500; ++k) {
    Vector z = randn(g, d.n_p() + d.n_x());
    z *= std::sqrt(b.p_radius * b.p_radius + b.x_radius * b.x_radius) / z.norm();
    EXPECT_LE(d.f0(z.head(d.n_p()), z.tail(d.n_x())), b.f0_max * (1.0 + 1e-12));
  }
}

TEST(Bounds, GammaLowerBound) {
  EXPECT_DOUBLE_EQ(gamma_lb(0.5, 1.0, 1.0), 0.5 - 0.125);
  EXPECT_DOUBLE_EQ(gamma_lb(3.0, 1.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(gamma_lb(0.0, 1.0, 1.0), 0.0);
  EXPECT_NEAR(gamma_lb(0.2, 0.36, 1.8), gamma_lb(0.2 + 1e-15, 0.36, 1.8), 1e-14);  // knee
  EXPECT_THROW(gamma_lb(1.0, 1.0, 0.0), ParameterError);
  Rng g(71);
  for (int k = 0; k < 200; ++k) {
    const double q = log_uniform(g, 1e-3, 10.0), D = log_uniform(g, 1e-2, 1e3);
    const double t1 = log_uniform(g, 1e-4, 10.0), t2 = t1 * uniform(g, 1.0, 3.0);
    EXPECT_LE(gamma_lb(t1, q, D), gamma_lb(t2, q, D) + 1e-15);
    EXPECT_LE(gamma_lb(t2, q, D), q * q / (2.0 * D) * (1.0 + 1e-15));
  }
}

TEST(Bounds, IterationCountDecreasesWithLooserPrecision) {
  for (ScalingMode mode : {ScalingMode::PaperLiteral, ScalingMode::Conservative}) {
    BoundsConfig bc;
    bc.mode = mode;
    bc.zd_rate_max = 0.05;
    const CompactSetBounds b = compute_bounds(design4(), bc);
    double prev = std::numeric_limits<double>::infinity();
    for (double e : log_grid(1e-8, 1e-1, 30)) {
      const double n = pipeline(b, SuboptimalityPair(e, 1e-2)).N_real;
      EXPECT_LE(n, prev * (1.0 + 1e-12));
      prev = n;
    }
  }
}

namespace {

// Hand-built bounds with a moderate iteration count so that certification succeeds.
CompactSetBounds toy_bounds() {
  CompactSetBounds b;
  b.mode = ScalingMode::Conservative;
  b.phi0 = 10.0;
  b.p_radius = 1.0;
  b.x_radius = 1.0;
  b.scaling.L0 = 1.0;
  b.scaling.Lpsi = 2.0;
  b.scaling.mu0 = 1.0;
  b.scaling.beta = 1.0;
  b.kappa0_max = 0.0;
  b.D0 = 1.0;
  b.f0_max = 10.0;
  b.D_C = 1.0;
  b.K_C0 = 1.0;
  return b;
}

}  // namespace

TEST(Certify, ConstructedFeasibleInstance) {
  const CompactSetBounds b = toy_bounds();
  const std::vector<double> qs = log_grid(1.0, 10.0, 6);
  const CertifiedSamplingLaw law = certify(b, 1e-2, 1e-2, 1.0, 0.2, qs, 0.5);
  ASSERT_EQ(law.table.size(), 6u);
  EXPECT_DOUBLE_EQ(law.threshold, -0.2 / 3.0);
  EXPECT_DOUBLE_EQ(law.eps0_cap, 0.1);
  for (const SamplingRow& r : law.table) {
    ASSERT_TRUE(r.feasible);
    EXPECT_LE(r.eps0_lower, r.eps0_sol);
    EXPECT_LE(r.eps0_sol, r.eps0_upper);
    EXPECT_LE(r.eps0_upper, law.eps0_cap);
    EXPECT_LE(r_decrease(r.eps0_sol, 1e-2, r.q_bar, 1e-2, b), law.threshold);
    EXPECT_DOUBLE_EQ(r.tau_k, 1e-2 * static_cast<double>(r.N));
    EXPECT_DOUBLE_EQ(r.eps0_sol, 0.5 * (r.eps0_lower + r.eps0_upper));
  }
  for (std::size_t i = 1; i < law.table.size(); ++i) {
    EXPECT_GE(law.table[i].eps0_upper, law.table[i - 1].eps0_upper);
    EXPECT_LE(law.table[i].eps0_lower, law.table[i - 1].eps0_lower * (1.0 + 1e-12));
  }
}

TEST(Certify, InfeasibleInstanceReportsMargin) {
  CompactSetBounds b = toy_bounds();
  b.E0 = 1.0;  // K0 E0 = 1 swamps any decrease
  try {
    certify(b, 1e-2, 1e-2, 1.0, 0.2, {1.0});
    FAIL() << "expected CertificationInfeasible";
  } catch (const CertificationInfeasible& e) {
    EXPECT_GT(e.margin, 0.0);
  }
  EXPECT_THROW(certify(toy_bounds(), 1e-2, 1e-2, 1.0, 0.2, {1.0}, 0.95), ParameterError);
  EXPECT_THROW(certify(toy_bounds(), 1e-2, 1e-2, 1.0, 0.2, {0.5}), ParameterError);
}

TEST(Certify, UpdatingPeriodLookup) {
  const CertifiedSamplingLaw law =
      certify(toy_bounds(), 1e-2, 1e-2, 1.0, 0.2, {1.0, 2.0, 4.0}, 0.5);
  const UpdatingPeriod below = updating_period(law, 0.5);
  EXPECT_TRUE(below.in_x_min);
  EXPECT_EQ(below.tau_k, law.table[0].tau_k);
  EXPECT_EQ(updating_period(law, 3.0).eps0, law.table[1].eps0_sol);
  EXPECT_EQ(updating_period(law, 4.0).N, law.table[2].N);
  EXPECT_EQ(updating_period(law, 1e6).N, law.table[2].N);
  EXPECT_FALSE(updating_period(law, 1.0).in_x_min);
}

// ---------------------------------------------------------------------------
// Closed loop

TEST(ClosedLoop, SetpointProfiles) {
  SetpointProfile c = SetpointProfile::constant(vec({1.0}));
  EXPECT_DOUBLE_EQ(c.at(5.0)(0), 1.0);
  SetpointProfile j = SetpointProfile::constant(vec({0.0}));
  j.switches.emplace_back(1.0, vec({2.0}));
  EXPECT_DOUBLE_EQ(j.at(0.99)(0), 0.0);
  EXPECT_DOUBLE_EQ(j.at(1.0)(0), 2.0);
  j.rate_max = 0.5;
  EXPECT_DOUBLE_EQ(j.at(1.0)(0), 0.0);
  EXPECT_DOUBLE_EQ(j.at(2.0)(0), 0.5);
  EXPECT_DOUBLE_EQ(j.at(10.0)(0), 2.0);
}

TEST(ClosedLoop, ApplyProfileMatchesRk4) {
  Rng g(73);
  const MpcDesign& d = design4();
  const Vector x = randn(g, d.n_x());
  const Vector pu = randn(g, d.m());
  for (double s : {0.37, 2.0, 6.5, 10.0})
    EXPECT_LE((apply_profile(d, x, pu, s) - rk4_state_at(d, x, pu, s)).norm(), 1e-9);
  // past the horizon the input is zero
  Vector xe = rk4_state_at(d, x, pu, 10.0);
  for (int k = 0; k < 400; ++k) xe = rk4(d.sys.As, d.sys.Bs, xe, Vector::Zero(1), 0.005);
  EXPECT_LE((apply_profile(d, x, pu, 12.0) - xe).norm(), 1e-8 * std::max(1.0, xe.norm()));
}

TEST(ClosedLoop, StageCostOverTheHorizonIsTheCondensedCost) {
  Rng g(79);
  const MpcDesign& d = design4();
  for (int k = 0; k < 5; ++k) {
    const Vector p = randn(g, d.n_p());
    const Vector x = randn(g, d.n_x());
    const Vector pu = d.control_blocks(p, x);
    EXPECT_NEAR(stage_cost_integral(d, x, pu, d.T), d.f0(p, x), 1e-10 * d.f0(p, x));
    EXPECT_EQ(stage_cost_integral(d, x, pu, 0.0), 0.0);
    // half horizon: quadrature of the first five blocks
    const double half = stage_cost_integral(d, x, pu, 5.0);
    EXPECT_GT(half, 0.0);
    EXPECT_LE(half, d.f0(p, x) * (1.0 + 1e-12));
  }
}

TEST(ClosedLoop, WarmStartShiftExamples) {
  Rng g(83);
  const MpcDesign& d = design4();
  const Vector p = randn(g, d.n_p());
  const Vector x = vec({0.3, -0.2, 0.1, 0.0, 0.5, 0, 0, 0});
  // tau = 0: identity
  EXPECT_LE((warm_start_shift(d, p, x, x, 0.0) - p).norm(), 1e-10);
  // one block: the shifted profile is reproduced exactly on the first nine blocks
  const Vector pu = d.control_blocks(p, x);
  const Vector xn = apply_profile(d, x, pu, 1.0);
  const Vector p1 = warm_start_shift(d, p, x, xn, 1.0);
  const Vector u1 = d.control_blocks(p1, xn);
  EXPECT_LE((u1.head(9) - pu.segment(1, 9)).norm(), 1e-9);
  EXPECT_NEAR(u1(9), 0.0, 1e-9);  // equilibrium at the set point afterwards
  EXPECT_THROW(warm_start_shift(d, p, x, x, -1.0), ParameterError);
}

TEST(ClosedLoop, EquilibriumStartIsTrivial) {
  const Demo& s = demo();
  SimOptions o;
  o.horizon = 2.0;
  const ClosedLoopTrace tr =
      simulate(s.d, s.law, Vector::Zero(4), SetpointProfile::constant(Vector::Zero(4)), o);
  ASSERT_FALSE(tr.events.empty());
  for (const auto& e : tr.events) {
    EXPECT_EQ(e.q, 0.0);
    EXPECT_LE(e.f0_visited, 1e-20);
    EXPECT_TRUE(e.in_x_min);
  }
  const MonitorReport r = monitor(tr, s.d, s.law, true);
  EXPECT_TRUE(r.all_pass());
  EXPECT_EQ(r.events_above_qmin, 0u);
}

TEST(ClosedLoop, DemoScenarioPassesTheMonitor) {
  const Demo& s = demo();
  SimOptions o;
  o.horizon = s.cfg.horizon;
  const ClosedLoopTrace tr = simulate(s.d, s.law, vec({1, 0, 0, 0}),
                                      SetpointProfile::constant(Vector::Zero(4)), o);
  const MonitorReport r = monitor(tr, s.d, s.law, true);
  EXPECT_TRUE(r.all_pass()) << "first failure " << r.first_failure;
  EXPECT_TRUE(r.hard);
  EXPECT_TRUE(r.arrival);
  for (std::size_t k = 1; k < tr.events.size(); ++k) {
    // t_{k+1} = t_k + tau_k exactly
    EXPECT_EQ(tr.events[k].t, tr.events[k - 1].t + tr.events[k - 1].tau);
    EXPECT_LE(tr.events[k - 1].N_used, tr.events[k - 1].N_budget);
  }
  EXPECT_LT(tr.events.back().q, s.law.q_min);
}

TEST(ClosedLoop, BudgetFaultIsDetected) {
  const Demo& s = demo();
  SimOptions o;
  o.horizon = s.cfg.horizon;
  o.budget_scale = 0.002;
  const ClosedLoopTrace tr = simulate(s.d, s.law, vec({1, 0, 0, 0}),
                                      SetpointProfile::constant(Vector::Zero(4)), o);
  const MonitorReport r = monitor(tr, s.d, s.law, true);
  EXPECT_FALSE(r.all_pass());
  EXPECT_GE(r.first_failure, 0);
  EXPECT_FALSE(r.suboptimal);
}

TEST(ClosedLoop, Preconditions) {
  const Demo& s = demo();
  SetpointProfile ramp = SetpointProfile::constant(Vector::Zero(4));
  ramp.rate_max = 1.0;  // E1 = 0 in the demo law
  EXPECT_THROW(simulate(s.d, s.law, Vector::Zero(4), ramp), PreconditionError);
  SetpointProfile jump = SetpointProfile::constant(Vector::Zero(4));
  jump.switches.emplace_back(1.0, vec({1, 0, 0, 0}));
  EXPECT_THROW(simulate(s.d, s.law, Vector::Zero(4), jump), PreconditionError);
  CertifiedSamplingLaw empty = s.law;
  empty.table.clear();
  EXPECT_THROW(simulate(s.d, empty, Vector::Zero(4), SetpointProfile::constant(Vector::Zero(4))),
               PreconditionError);
  EXPECT_THROW(simulate(s.d, s.law, vec({1e6, 0, 0, 0}),
                        SetpointProfile::constant(Vector::Zero(4))),
               PreconditionError);
}
