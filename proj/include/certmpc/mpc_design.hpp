#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "certmpc/certified_solver.hpp"
#include "certmpc/lti.hpp"
#include "certmpc/qp_problem.hpp"

namespace certmpc {

/// Box bound lo <= z_c <= hi on one physical state component.
struct StateBound {
  Index component = 0;
  double lo = -1.0;
  double hi = 1.0;
};

/// Continuous LTI plant dz/dt = A0 z + B0m u with |u_j| <= u_bar.
struct Plant {
  Matrix A0;
  Matrix B0m;
  double u_bar = 1.0;
  std::vector<StateBound> state_box;

  void validate() const {
    require(A0.rows() == A0.cols() && A0.rows() > 0, "Plant: A0 must be square");
    require(B0m.rows() == A0.rows() && B0m.cols() > 0, "Plant: B0m has wrong shape");
    if (!(u_bar > 0.0)) throw ParameterError("Plant: u_bar must be > 0");
    for (const auto& b : state_box) {
      require(b.component >= 0 && b.component < A0.rows(), "Plant: bound component out of range");
      if (!(b.lo < b.hi)) throw ParameterError("Plant: state bound lo must be < hi");
    }
  }
};

/// Chain z_i' = z_{i+1}, z_n' = u with |u| <= u_bar, z1 in [-2, 2], z2 in [-1, 1].
inline Plant integrator_chain(int n, double u_bar = 10.0) {
  if (n < 1) throw ParameterError("integrator_chain: n must be >= 1");
  Plant pl;
  pl.A0 = Matrix::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) pl.A0(i, i + 1) = 1.0;
  pl.B0m = Matrix::Zero(n, 1);
  pl.B0m(n - 1, 0) = 1.0;
  pl.u_bar = u_bar;
  pl.state_box.push_back({0, -2.0, 2.0});
  if (n >= 2) pl.state_box.push_back({1, -1.0, 1.0});
  return pl;
}

/// x = (z, z_d) with constant set point; C x = z - z_d.
struct ExtendedSystem {
  Matrix As;
  Matrix Bs;
  Matrix C;
  Index n_z() const { return C.rows(); }
  Index n_x() const { return As.rows(); }
  Index n_u() const { return Bs.cols(); }
};

inline ExtendedSystem build_extended(const Matrix& A0, const Matrix& B0m, Index zd_dim) {
  require(A0.rows() == A0.cols(), "build_extended: A0 must be square");
  require(B0m.rows() == A0.rows(), "build_extended: B0m row count differs from A0");
  const Index nz = A0.rows();
  require(zd_dim == nz, "build_extended: set point dimension must equal the state dimension");
  ExtendedSystem s;
  s.As = Matrix::Zero(2 * nz, 2 * nz);
  s.As.topLeftCorner(nz, nz) = A0;
  s.Bs = Matrix::Zero(2 * nz, B0m.cols());
  s.Bs.topRows(nz) = B0m;
  s.C.resize(nz, 2 * nz);
  s.C << Matrix::Identity(nz, nz), -Matrix::Identity(nz, nz);
  return s;
}

/// Piecewise-constant control profile: block b holds u over [edges[b], edges[b+1]).
struct PiecewiseConstantBasis {
  std::vector<double> edges;
  Index n_u = 1;

  static PiecewiseConstantBasis uniform(double T, int blocks, Index n_u = 1) {
    if (!(T > 0.0) || blocks < 1) throw ParameterError("basis: need T > 0 and blocks >= 1");
    PiecewiseConstantBasis b;
    b.n_u = n_u;
    b.edges.resize(static_cast<std::size_t>(blocks) + 1);
    for (int i = 0; i <= blocks; ++i) b.edges[static_cast<std::size_t>(i)] = T * i / blocks;
    return b;
  }

  Index blocks() const { return static_cast<Index>(edges.size()) - 1; }
  Index m() const { return blocks() * n_u; }
  double horizon() const { return edges.back(); }
  double width(Index b) const {
    return edges[static_cast<std::size_t>(b) + 1] - edges[static_cast<std::size_t>(b)];
  }

  /// Block containing s in [0, T]; s = T maps to the last block.
  Index block_of(double s) const {
    if (s < 0.0 || s > horizon()) throw ParameterError("basis: time outside the horizon");
    const auto it = std::upper_bound(edges.begin(), edges.end(), s);
    Index b = static_cast<Index>(it - edges.begin()) - 1;
    return std::min(b, blocks() - 1);
  }
};

struct Parametrization {
  Matrix K;  // m x n_p, orthonormal columns spanning null(CG)
  Matrix M;  // m x n_x, minimum-norm terminal-feasible control
  Matrix E;  // exp(As T)
  Matrix G;  // x(T) = E x0 + G p_u
};

namespace detail {

/// Maps w = (x0, p_u) to the predicted state at each block start.
struct BlockRecursion {
  std::vector<Matrix> start;  // start[b]: n_x x (n_x + m), b = 0..blocks
  std::vector<Discretized> steps;
};

inline BlockRecursion block_recursion(const ExtendedSystem& sys,
                                      const PiecewiseConstantBasis& basis) {
  const Index nx = sys.n_x();
  const Index nu = sys.n_u();
  require(basis.n_u == nu, "basis input dimension differs from the system");
  const Index m = basis.m();
  BlockRecursion r;
  Matrix X = Matrix::Zero(nx, nx + m);
  X.leftCols(nx).setIdentity();
  r.start.push_back(X);
  for (Index b = 0; b < basis.blocks(); ++b) {
    const Discretized d = zoh(sys.As, sys.Bs, basis.width(b));
    Matrix next = d.Ad * X;
    next.middleCols(nx + b * nu, nu) += d.Bd;
    r.steps.push_back(d);
    X = next;
    r.start.push_back(X);
  }
  return r;
}

}  // namespace detail

inline Parametrization build_parametrization(const ExtendedSystem& sys,
                                             const PiecewiseConstantBasis& basis) {
  const Index nx = sys.n_x();
  const detail::BlockRecursion rec = detail::block_recursion(sys, basis);
  Parametrization par;
  par.E = rec.start.back().leftCols(nx);
  par.G = rec.start.back().rightCols(basis.m());
  const Matrix CG = sys.C * par.G;
  const Matrix CE = sys.C * par.E;
  if (numerical_rank(CG) < CG.rows())
    throw DesignError("terminal map C G is row-rank deficient: horizon/basis cannot reach the set point");
  par.M = -pseudo_inverse(CG) * CE;
  par.K = null_space(CG);
  return par;
}

struct DesignConfig {
  double T = 10.0;
  int blocks = 10;
  double Q_scale = 1.0;   // Q = Q_scale I
  double R = 1e-3;        // R = R I
  double eps_psi = 1e-2;
  int state_checks = 70;  // midpoints of a uniform partition of [0, T]
};

/// Condensed state-dependent QP: f0(p,x) = 1/2 p'Hp + (F1 x)'p + x'Sx, A p <= B0 + B1 x.
struct MpcDesign {
  Plant plant;
  ExtendedSystem sys;
  PiecewiseConstantBasis basis;
  Matrix Q;
  Matrix R;
  double T = 0.0;
  Matrix K;
  Matrix M;
  Matrix H;
  Matrix F1;
  Matrix S;
  Matrix A;
  Vector B0;
  Matrix B1;
  std::vector<double> check_grid;
  double u_bar = 0.0;
  IndexSet hard_idx;
  IndexSet soft_idx;
  double eps_psi = 1e-2;
  detail::BlockRecursion rec;

  Index n_x() const { return sys.n_x(); }
  Index n_z() const { return sys.n_z(); }
  Index n_p() const { return K.cols(); }
  Index n_c() const { return A.rows(); }
  Index m() const { return basis.m(); }

  /// Block values p_u = K p + M x.
  Vector control_blocks(const Vector& p, const Vector& x) const { return K * p + M * x; }

  double q_of(const Vector& x) const {
    const Vector e = sys.C * x;
    return e.dot(Q * e);
  }

  double f0(const Vector& p, const Vector& x) const {
    return 0.5 * p.dot(H * p) + (F1 * x).dot(p) + x.dot(S * x);
  }

  QpProblem problem_at(const Vector& x) const {
    require(x.size() == n_x(), "problem_at: state has wrong size");
    Vector Bx = B0 + B1 * x;
    return QpProblem(H, F1 * x, x.dot(S * x), A, std::move(Bx), hard_idx, soft_idx, eps_psi);
  }

  /// Predicted state at s in [0, T] from x0 under block values pu.
  Vector predict(const Vector& x0, const Vector& pu, double s) const {
    const Index b = basis.block_of(s);
    Vector w(n_x() + m());
    w << x0, pu;
    const Vector xb = rec.start[static_cast<std::size_t>(b)] * w;
    const double delta = s - basis.edges[static_cast<std::size_t>(b)];
    const Discretized d = zoh(sys.As, sys.Bs, delta);
    return d.Ad * xb + d.Bd * pu.segment(b * basis.n_u, basis.n_u);
  }

  /// Linear map w = (x0, p_u) -> predicted state at s.
  Matrix prediction_map(double s) const {
    const Index b = basis.block_of(s);
    const double delta = s - basis.edges[static_cast<std::size_t>(b)];
    const Discretized d = zoh(sys.As, sys.Bs, delta);
    Matrix out = d.Ad * rec.start[static_cast<std::size_t>(b)];
    out.middleCols(n_x() + b * basis.n_u, basis.n_u) += d.Bd;
    return out;
  }
};

/// Cost and constraint matrices for a design whose K, M, basis and system are set.
inline void condense(MpcDesign& d, const std::vector<double>& check_grid) {
  require(!check_grid.empty(), "condense: check_grid is empty");
  const Index nx = d.n_x();
  const Index nu = d.basis.n_u;
  const Index m = d.m();
  const Index np = d.K.cols();
  d.rec = detail::block_recursion(d.sys, d.basis);

  // w = P (x, p) with P = [[I, 0], [M, K]].
  Matrix P = Matrix::Zero(nx + m, nx + np);
  P.topLeftCorner(nx, nx).setIdentity();
  P.bottomLeftCorner(m, nx) = d.M;
  P.bottomRightCorner(m, np) = d.K;

  const Matrix Qx = d.sys.C.transpose() * d.Q * d.sys.C;
  Matrix W = Matrix::Zero(nx + m, nx + m);
  for (Index b = 0; b < d.basis.blocks(); ++b) {
    const Matrix G = step_cost_gramian(d.sys.As, d.sys.Bs, Qx, d.R, d.basis.width(b));
    Matrix T = Matrix::Zero(nx + nu, nx + m);
    T.topRows(nx) = d.rec.start[static_cast<std::size_t>(b)];
    T.block(nx, nx + b * nu, nu, nu).setIdentity();
    W += T.transpose() * G * T;
  }
  const Matrix Wr = P.transpose() * W * P;
  d.H = Wr.bottomRightCorner(np, np);
  d.H = 0.5 * (d.H + d.H.transpose());
  d.F1 = Wr.bottomLeftCorner(np, nx);
  d.S = 0.5 * Wr.topLeftCorner(nx, nx);
  d.S = 0.5 * (d.S + d.S.transpose());

  std::vector<Eigen::RowVectorXd> rows_p, rows_x;
  std::vector<double> rhs;
  IndexSet hard, soft;
  auto add_row = [&](const Eigen::RowVectorXd& rw, double bound, bool is_hard) {
    // rw acts on w; rw P = [rx, rp]; rp p <= bound - rx x.
    const Eigen::RowVectorXd r = rw * P;
    (is_hard ? hard : soft).push_back(static_cast<Index>(rhs.size()));
    rows_x.push_back(-r.head(nx));
    rows_p.push_back(r.tail(np));
    rhs.push_back(bound);
  };
  for (double s : check_grid) {
    const Matrix Psi = d.prediction_map(s);
    for (const auto& bd : d.plant.state_box) {
      const Eigen::RowVectorXd row = Psi.row(bd.component);
      add_row(row, bd.hi, false);
      add_row(-row, -bd.lo, false);
    }
  }
  for (Index j = 0; j < m; ++j) {
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(nx + m);
    e(nx + j) = 1.0;
    add_row(e, d.u_bar, true);
    add_row(-e, d.u_bar, true);
  }
  const Index nc = static_cast<Index>(rhs.size());
  d.A.resize(nc, np);
  d.B1.resize(nc, nx);
  d.B0.resize(nc);
  for (Index i = 0; i < nc; ++i) {
    d.A.row(i) = rows_p[static_cast<std::size_t>(i)];
    d.B1.row(i) = rows_x[static_cast<std::size_t>(i)];
    d.B0(i) = rhs[static_cast<std::size_t>(i)];
  }
  d.hard_idx = hard;
  d.soft_idx = soft;
  d.check_grid = check_grid;
}

inline std::vector<double> midpoint_grid(double T, int count) {
  if (count < 1) throw ParameterError("check grid needs at least one instant");
  std::vector<double> g(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) g[static_cast<std::size_t>(i)] = T * (i + 0.5) / count;
  return g;
}

inline MpcDesign build_design(const Plant& plant, const DesignConfig& cfg) {
  plant.validate();
  if (!(cfg.eps_psi > 0.0)) throw ParameterError("design: eps_psi must be > 0");
  if (!(cfg.R > 0.0) || !(cfg.Q_scale > 0.0)) throw ParameterError("design: weights must be > 0");
  MpcDesign d;
  d.plant = plant;
  d.sys = build_extended(plant.A0, plant.B0m, plant.A0.rows());
  d.basis = PiecewiseConstantBasis::uniform(cfg.T, cfg.blocks, plant.B0m.cols());
  d.T = cfg.T;
  d.Q = cfg.Q_scale * Matrix::Identity(d.n_z(), d.n_z());
  d.R = cfg.R * Matrix::Identity(d.basis.n_u, d.basis.n_u);
  d.u_bar = plant.u_bar;
  d.eps_psi = cfg.eps_psi;
  const Parametrization par = build_parametrization(d.sys, d.basis);
  d.K = par.K;
  d.M = par.M;
  if (d.K.cols() == 0) throw DesignError("design has no free decision variables (n_p = 0)");
  condense(d, midpoint_grid(cfg.T, cfg.state_checks));
  if (!(lambda_min(d.H) > 0.0)) throw DesignError("condensed Hessian is not positive definite");
  return d;
}

// ---------------------------------------------------------------------------
// Compact-set certification constants.

enum class SetpointMode { Filtered, Raw };

inline SetpointMode setpoint_mode_from_string(const std::string& s) {
  if (s == "filtered" || s == "Filtered") return SetpointMode::Filtered;
  if (s == "raw" || s == "Raw") return SetpointMode::Raw;
  throw ParameterError("unknown set-point mode '" + s + "'");
}

struct PredictionError {
  double E0 = 0.0;
  double E1 = 0.0;
};

inline PredictionError prediction_error(SetpointMode mode, double zd_radius, double zd_rate_max,
                                        double extra_e1) {
  if (zd_radius < 0.0 || zd_rate_max < 0.0 || extra_e1 < 0.0)
    throw ParameterError("prediction_error: inputs must be >= 0");
  PredictionError e;
  e.E0 = mode == SetpointMode::Filtered ? 0.0 : zd_radius;
  e.E1 = zd_rate_max + extra_e1;
  return e;
}

/// phi0 from the cold start p = 0 over initial states with ||x|| <= u_bar/||M||.
inline double phi0_bound(double lambda_max_S, double u_bar, double norm_M, ScalingMode mode) {
  if (!(norm_M > 0.0)) throw DesignError("phi0_bound: ||M|| = 0");
  const double r = u_bar / norm_M;
  return mode == ScalingMode::Conservative ? lambda_max_S * r * r : lambda_max_S * r;
}

inline double phi0_bound(const MpcDesign& d, ScalingMode mode) {
  return phi0_bound(lambda_max(d.S), d.u_bar, spectral_norm(d.M), mode);
}

/// Hessian W0 of f0 in (p, y = z - z_d) coordinates for a steady set point:
/// f0 = 1/2 (p, y)' W0 (p, y) with W0 = [[H, F11], [F11', 2 S11]]. The block with S11 alone
/// is not positive definite for the integrator designs, so both modes use the exact form.
inline Matrix w0_matrix(const MpcDesign& d) {
  const Index np = d.n_p();
  const Index nz = d.n_z();
  Matrix W0(np + nz, np + nz);
  W0 << d.H, d.F1.leftCols(nz), d.F1.leftCols(nz).transpose(), 2.0 * d.S.topLeftCorner(nz, nz);
  return W0;
}

struct CompactRadii {
  double p_radius = 0.0;
  double x_radius = 0.0;
};

/// Radii from lambda_min(W0); level_factor is 1 (displayed) or 2 (f0 = 1/2 z'W0 z).
inline CompactRadii compact_radii(double lambda_min_w0, double phi0, double zd_radius,
                                  double level_factor = 1.0) {
  if (!(lambda_min_w0 > 0.0)) throw DesignError("compact set: W0 is not positive definite");
  if (phi0 < 0.0 || zd_radius < 0.0) throw ParameterError("compact set: negative input");
  CompactRadii r;
  r.p_radius = std::sqrt(level_factor * phi0 / lambda_min_w0);
  r.x_radius = zd_radius + r.p_radius;
  return r;
}

inline CompactRadii compact_set(const MpcDesign& d, double phi0, double zd_radius,
                                ScalingMode mode) {
  const double lmin = lambda_min(w0_matrix(d));
  return compact_radii(lmin, phi0, zd_radius, mode == ScalingMode::Conservative ? 2.0 : 1.0);
}

/// Per-row ball bound sum_i max{0, ||M_i|| r - L_i}^2.
inline double psi_max_bound(const Matrix& Mrows, const Vector& L, double x_radius) {
  require(Mrows.rows() == L.size(), "psi_max: row count mismatch");
  if (!(x_radius > 0.0)) throw ParameterError("psi_max: x_radius must be > 0");
  double s = 0.0;
  for (Index i = 0; i < L.size(); ++i) {
    const double v = std::max(0.0, Mrows.row(i).norm() * x_radius - L(i));
    s += v * v;
  }
  return s;
}

/// M_i = -(A_i H^{-1} F1 + B1_i), L_i = B0_i - shift_i (hard rows tightened by eps_psi).
inline double psi_max(const MpcDesign& d, double x_radius) {
  const Matrix Mrows = -(d.A * d.H.llt().solve(d.F1) + d.B1);
  Vector L = d.B0;
  for (Index i : d.hard_idx) L(i) -= d.eps_psi;
  return psi_max_bound(Mrows, L, x_radius);
}

struct BoundsConfig {
  ScalingMode mode = ScalingMode::Conservative;
  double zd_radius = 5.0;
  SetpointMode setpoint = SetpointMode::Filtered;
  double zd_rate_max = 0.0;
  double extra_e1 = 0.0;
  double phi0 = -1.0;  // < 0: use phi0_bound
};

struct CompactSetBounds {
  ScalingMode mode = ScalingMode::Conservative;
  double phi0 = 0.0;
  double p_radius = 0.0;
  double x_radius = 0.0;
  double zd_radius = 0.0;
  double psi_max = 0.0;
  double f0_max = 0.0;
  double kappa0_max = 0.0;
  // Filled for the last pair passed to pipeline evaluation.
  double rho_max = 0.0;
  double eta_min = 0.0;
  double gamma0_min = 0.0;
  double log_gamma0_min = 0.0;
  double c_min = 0.0;
  double D_C = 0.0;
  double K_C0 = 0.0;
  double K_Cpsi = 0.0;
  double E0 = 0.0;
  double E1 = 0.0;
  // Scaling constants of the condensed QP and the gradient bound over the compact set.
  QpScaling scaling;
  double D0 = 0.0;
  double lambda_max_W = 0.0;
};

struct KdConstants {
  double K_C0 = 0.0;
  double K_Cpsi = 0.0;
  double D_C = 0.0;
};

inline KdConstants constants_KD(const MpcDesign& d, double p_radius, double x_radius,
                                double psi_max_value) {
  KdConstants k;
  k.K_C0 = spectral_norm(d.F1.transpose()) * p_radius + 2.0 * lambda_max(d.S) * x_radius;
  k.K_Cpsi = 2.0 * static_cast<double>(d.n_c()) * psi_max_value * spectral_norm(d.B1.transpose());
  const double u_radius = d.u_bar * std::sqrt(static_cast<double>(d.basis.n_u));
  k.D_C = lambda_max(d.Q) * x_radius *
          (spectral_norm(d.sys.As) * x_radius + spectral_norm(d.sys.Bs) * u_radius);
  return k;
}

/// Upper bound of f0 over P x X.
inline double f0_max_bound(const MpcDesign& d, double p_radius, double x_radius, ScalingMode mode,
                           double* lambda_max_W = nullptr) {
  const Index np = d.n_p();
  const Index nx = d.n_x();
  Matrix W(np + nx, np + nx);
  const double s_factor = mode == ScalingMode::Conservative ? 2.0 : 1.0;
  W << d.H, d.F1, d.F1.transpose(), s_factor * d.S;
  const double lmax = lambda_max(W);
  if (lambda_max_W) *lambda_max_W = lmax;
  const double r2 = p_radius * p_radius + x_radius * x_radius;
  // Conservative: f0 = 1/2 z'Wz <= 1/2 lmax ||z||^2. PaperLiteral: lmax * rho(P x X).
  return mode == ScalingMode::Conservative ? 0.5 * lmax * r2 : lmax * std::sqrt(r2);
}

inline CompactSetBounds compute_bounds(const MpcDesign& d, const BoundsConfig& cfg) {
  CompactSetBounds b;
  b.mode = cfg.mode;
  b.phi0 = cfg.phi0 >= 0.0 ? cfg.phi0 : phi0_bound(d, cfg.mode);
  b.zd_radius = cfg.zd_radius;
  const CompactRadii r = compact_set(d, b.phi0, cfg.zd_radius, cfg.mode);
  b.p_radius = r.p_radius;
  b.x_radius = r.x_radius;
  b.psi_max = b.x_radius > 0.0 ? psi_max(d, b.x_radius) : 0.0;
  b.f0_max = f0_max_bound(d, b.p_radius, b.x_radius, cfg.mode, &b.lambda_max_W);
  b.scaling = qp_scaling(d.H, d.A, cfg.mode);
  b.kappa0_max = kappa0(b.scaling.L0, b.scaling.beta, b.scaling.mu0, b.psi_max);
  b.D0 = b.p_radius > 0.0 ? d0_upper_bound(b.scaling.L0, b.scaling.mu0,
                                           spectral_norm(d.F1) * b.x_radius, b.p_radius)
                          : 0.0;
  const KdConstants k = constants_KD(d, b.p_radius, b.x_radius, b.psi_max);
  b.K_C0 = k.K_C0;
  b.K_Cpsi = k.K_Cpsi;
  b.D_C = k.D_C;
  const PredictionError e = prediction_error(cfg.setpoint, cfg.zd_radius, cfg.zd_rate_max,
                                             cfg.extra_e1);
  b.E0 = e.E0;
  b.E1 = e.E1;
  return b;
}

struct PipelineResult {
  IterCount N = 0;
  double N_real = 0.0;  // real-valued bound before the ceiling
  PenaltyChoice choice;
  double L = 0.0;
  double log_gamma0_min = 0.0;
  double c_min = 0.0;
};

/// Worst-case iteration count over the compact set for the precision pair.
inline PipelineResult pipeline(const CompactSetBounds& b, const SuboptimalityPair& pair) {
  PipelineResult r;
  if (!(b.f0_max > 0.0)) return r;
  r.choice = select_rho_eta(b.scaling, b.D0, b.kappa0_max, pair);
  r.L = L_of_rho(b.scaling.L0, b.scaling.Lpsi, r.choice.rho);
  r.c_min = std::sqrt(b.scaling.mu0 / r.L);
  r.log_gamma0_min = std::log(r.choice.eta) + std::log(b.scaling.mu0) -
                     std::log(r.L + b.scaling.mu0) - std::log(b.f0_max);
  r.N_real = nbar_real_log(r.c_min, r.log_gamma0_min);
  r.N = ceil_count(r.N_real);
  return r;
}

inline IterCount pipeline_N(const CompactSetBounds& b, const SuboptimalityPair& pair) {
  return pipeline(b, pair).N;
}

/// Copy of b with the pair-dependent fields filled.
inline CompactSetBounds bounds_at(const CompactSetBounds& b, const SuboptimalityPair& pair) {
  CompactSetBounds out = b;
  const PipelineResult r = pipeline(b, pair);
  out.rho_max = r.choice.rho;
  out.eta_min = r.choice.eta;
  out.log_gamma0_min = r.log_gamma0_min;
  out.gamma0_min = std::exp(r.log_gamma0_min);
  out.c_min = r.c_min;
  return out;
}

// ---------------------------------------------------------------------------
// Decrease analysis and the certified sampling law.

/// Lower bound of the cost decrease over an interval tau for q(x) = q.
inline double gamma_lb(double tau, double q, double D_C) {
  if (tau < 0.0 || q < 0.0) throw ParameterError("gamma_lb: tau and q must be >= 0");
  if (!(D_C > 0.0)) throw ParameterError("gamma_lb: D_C must be > 0");
  if (tau <= q / D_C) return q * tau - 0.5 * D_C * tau * tau;
  return q * q / (2.0 * D_C);
}

struct DecreaseTerms {
  IterCount N = 0;
  double tau = 0.0;
  double e_term = 0.0;   // K0 (E0 + tau E1)
  double eps0 = 0.0;
  double gamma = 0.0;    // Gamma(tau, q)
  double R = 0.0;        // e_term + eps0 - gamma
};

inline DecreaseTerms decrease_terms(double eps0, double eps_psi, double q_bar, double tau_c,
                                    const CompactSetBounds& b) {
  DecreaseTerms t;
  const PipelineResult pr = pipeline(b, SuboptimalityPair(eps0, eps_psi));
  t.N = pr.N;
  t.tau = tau_c * (pr.N == kIterSaturated ? std::ceil(pr.N_real) : static_cast<double>(pr.N));
  t.e_term = b.K_C0 * (b.E0 + t.tau * b.E1);
  t.eps0 = eps0;
  t.gamma = gamma_lb(t.tau, q_bar, b.D_C);
  t.R = t.e_term + eps0 - t.gamma;
  return t;
}

inline double r_decrease(double eps0, double eps_psi, double q_bar, double tau_c,
                         const CompactSetBounds& b) {
  return decrease_terms(eps0, eps_psi, q_bar, tau_c, b).R;
}

struct SamplingRow {
  double q_bar = 0.0;
  double eps0_lower = 0.0;
  double eps0_upper = 0.0;
  double eps0_sol = 0.0;
  IterCount N = 0;
  double tau_k = 0.0;
  bool feasible = false;
};

struct CertifiedSamplingLaw {
  double q_min = 0.0;
  double gamma_c = 0.0;
  double eps_psi = 0.0;
  double tau_c = 0.0;
  double lambda = 0.5;
  double threshold = 0.0;  // -gamma_c q_min^2 / (3 D_C)
  double eps0_cap = 0.0;   // gamma_c q_min^2 / (2 D_C)
  CompactSetBounds bounds;
  std::vector<SamplingRow> table;
};

struct CertifyOptions {
  double eps0_lo = 1e-8;
  double eps0_hi = 1e-1;
  int grid_points = 200;
  double bisect_rel = 1e-3;
};

inline std::vector<double> log_grid(double lo, double hi, int n) {
  if (!(lo > 0.0 && hi > lo) || n < 2) throw ParameterError("log_grid: bad range");
  std::vector<double> g(static_cast<std::size_t>(n));
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = std::exp(a + (b - a) * i / (n - 1));
  return g;
}

namespace detail {

// Boundary between an admissible point `in` and an inadmissible point `out`, bisected in
// log scale until the bracket is within rel; returns the admissible end.
template <class Pred>
double bisect_boundary(double in, double out, double rel, Pred&& admissible) {
  for (int it = 0; it < 200 && std::abs(out - in) > rel * std::min(in, out); ++it) {
    const double mid = std::sqrt(in * out);
    if (admissible(mid))
      in = mid;
    else
      out = mid;
  }
  return in;
}

}  // namespace detail

/// Log grid restricted to (0, cap], with cap itself appended when it falls inside the range.
inline std::vector<double> capped_grid(double cap, const CertifyOptions& opt) {
  std::vector<double> g;
  for (double e : log_grid(opt.eps0_lo, opt.eps0_hi, opt.grid_points))
    if (e <= cap) g.push_back(e);
  if (cap > 0.0 && cap < opt.eps0_hi && (g.empty() || g.back() < cap)) g.push_back(cap);
  return g;
}

/// Smallest value of R - threshold over the scanned eps0 values at q_bar (positive: infeasible).
inline double closest_margin(const CompactSetBounds& b, double eps_psi, double tau_c, double q_bar,
                             double threshold, double cap, const CertifyOptions& opt) {
  double best = std::numeric_limits<double>::infinity();
  for (double e : capped_grid(cap, opt))
    best = std::min(best, r_decrease(e, eps_psi, q_bar, tau_c, b) - threshold);
  return best;
}

inline SamplingRow certify_row(const CompactSetBounds& b, double eps_psi, double tau_c,
                               double q_bar, double threshold, double cap, double lambda,
                               const CertifyOptions& opt) {
  SamplingRow row;
  row.q_bar = q_bar;
  auto admissible = [&](double e) {
    return e <= cap && r_decrease(e, eps_psi, q_bar, tau_c, b) <= threshold;
  };
  const std::vector<double> g = capped_grid(cap, opt);
  int first = -1, last = -1;
  for (int i = 0; i < static_cast<int>(g.size()); ++i) {
    if (admissible(g[static_cast<std::size_t>(i)])) {
      if (first < 0) first = i;
      last = i;
    }
  }
  if (first < 0) return row;
  row.feasible = true;
  row.eps0_lower = first > 0 ? detail::bisect_boundary(g[static_cast<std::size_t>(first)],
                                                       g[static_cast<std::size_t>(first) - 1],
                                                       opt.bisect_rel, admissible)
                             : g.front();
  const double up_grid = g[static_cast<std::size_t>(last)];
  if (last + 1 < static_cast<int>(g.size())) {
    row.eps0_upper = detail::bisect_boundary(up_grid, g[static_cast<std::size_t>(last) + 1],
                                             opt.bisect_rel, admissible);
  } else {
    row.eps0_upper = up_grid;
  }
  if (cap < row.eps0_upper && admissible(cap)) row.eps0_upper = cap;
  row.eps0_sol = (1.0 - lambda) * row.eps0_lower + lambda * row.eps0_upper;
  if (!admissible(row.eps0_sol)) {
    // Sub-level set not an interval here: fall back to the admissible grid point nearest
    // to the interpolated value.
    double best = row.eps0_lower;
    for (int i = first; i <= last; ++i) {
      const double e = g[static_cast<std::size_t>(i)];
      if (admissible(e) && std::abs(std::log(e / row.eps0_sol)) <
                               std::abs(std::log(best / row.eps0_sol)))
        best = e;
    }
    row.eps0_sol = best;
  }
  const DecreaseTerms t = decrease_terms(row.eps0_sol, eps_psi, q_bar, tau_c, b);
  row.N = t.N;
  row.tau_k = t.tau;
  return row;
}

/// Builds the eps0(q) table; throws CertificationInfeasible when q_min has no admissible eps0.
inline CertifiedSamplingLaw certify(const CompactSetBounds& b, double eps_psi, double tau_c,
                                    double q_min, double gamma_c, std::vector<double> q_grid,
                                    double lambda = 0.5, const CertifyOptions& opt = {}) {
  if (!(q_min > 0.0) || !(gamma_c > 0.0) || !(tau_c > 0.0))
    throw ParameterError("certify: q_min, gamma_c and tau_c must be > 0");
  if (lambda < 0.5 || lambda > 0.9) throw ParameterError("certify: lambda must lie in [0.5, 0.9]");
  if (!(b.D_C > 0.0)) throw ParameterError("certify: D_C must be > 0");
  std::sort(q_grid.begin(), q_grid.end());
  if (q_grid.empty() || q_grid.front() != q_min) q_grid.insert(q_grid.begin(), q_min);
  for (double q : q_grid)
    if (q < q_min) throw ParameterError("certify: q_grid must lie in [q_min, inf)");

  CertifiedSamplingLaw law;
  law.q_min = q_min;
  law.gamma_c = gamma_c;
  law.eps_psi = eps_psi;
  law.tau_c = tau_c;
  law.lambda = lambda;
  law.threshold = -gamma_c * q_min * q_min / (3.0 * b.D_C);
  law.eps0_cap = gamma_c * q_min * q_min / (2.0 * b.D_C);
  law.bounds = b;
  for (double q : q_grid) {
    SamplingRow row = certify_row(b, eps_psi, tau_c, q, law.threshold, law.eps0_cap, lambda, opt);
    if (!row.feasible && q == q_min) {
      const double margin =
          closest_margin(b, eps_psi, tau_c, q_min, law.threshold, law.eps0_cap, opt);
      throw CertificationInfeasible(
          "no admissible eps0 at q_min = " + std::to_string(q_min) +
              "; closest approach of R - threshold = " + std::to_string(margin),
          margin);
    }
    law.table.push_back(row);
  }
  return law;
}

struct UpdatingPeriod {
  double tau_k = 0.0;
  double eps0 = 0.0;
  IterCount N = 0;
  bool in_x_min = false;  // q(x) < q_min
};

/// Row with the largest q_bar <= q (rows are valid for every q above their q_bar).
inline UpdatingPeriod updating_period(const CertifiedSamplingLaw& law, double q) {
  if (law.table.empty()) throw ParameterError("updating_period: empty law");
  UpdatingPeriod u;
  std::size_t k = 0;
  if (q < law.q_min) {
    u.in_x_min = true;
  } else {
    for (std::size_t i = 0; i < law.table.size(); ++i)
      if (law.table[i].q_bar <= q && law.table[i].feasible) k = i;
  }
  const SamplingRow& row = law.table[k];
  u.eps0 = row.eps0_sol;
  u.N = row.N;
  u.tau_k = row.tau_k;
  return u;
}

inline UpdatingPeriod updating_period(const CertifiedSamplingLaw& law, const MpcDesign& d,
                                      const Vector& x) {
  return updating_period(law, d.q_of(x));
}

}  // namespace certmpc
