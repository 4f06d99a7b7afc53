#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "certmpc/certified_solver.hpp"
#include "certmpc/closed_loop.hpp"
#include "certmpc/io.hpp"
#include "certmpc/mpc_design.hpp"
#include "certmpc/random_qp.hpp"
#include "certmpc/reference_oracle.hpp"

namespace certmpc {

enum class Experiment { RandomQpSuite, IntegratorCertify, IntegratorBounds, ClosedLoop };

inline const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::RandomQpSuite: return "qp-suite";
    case Experiment::IntegratorCertify: return "mpc-certify";
    case Experiment::IntegratorBounds: return "mpc-bounds";
    case Experiment::ClosedLoop: return "simulate";
  }
  return "?";
}

inline Experiment experiment_from_string(const std::string& s) {
  for (Experiment e : {Experiment::RandomQpSuite, Experiment::IntegratorCertify,
                       Experiment::IntegratorBounds, Experiment::ClosedLoop})
    if (s == to_string(e)) return e;
  throw ParameterError("unknown experiment '" + s + "'");
}

struct ExperimentConfig {
  Experiment experiment = Experiment::RandomQpSuite;
  std::uint64_t seed = 1;
  int trials = 500;
  int threads = 0;  // 0: hardware concurrency
  ScalingMode mode = ScalingMode::Conservative;
  std::string output_dir = ".";

  // Random QP suite.
  int n_p = 10;
  int n_c = 20;
  double sigma_min = 1e-3;
  double sigma_max = 1.0;
  double c_scale = 0.05;
  double pu_scale = 0.3;
  double pf_scale = 0.5;
  double slack_min = 0.1;
  double slack_max = 1.0;
  double hard_fraction = 0.0;
  double eps0_rel = 0.01;
  int histogram_bins = 20;

  // MPC design and certification.
  int n = 4;
  double T = 10.0;
  int m = 10;
  double Q = 1.0;
  double R = 1e-3;
  double u_bar = 10.0;
  std::vector<double> state_box_halfwidth{2.0, 1.0};  // bounds on z1, z2, ...
  int state_checks = 70;
  double tau_c = 1e-7;
  double eps_psi = 1e-2;
  double zd_radius = 5.0;
  std::string setpoint = "filtered";
  double E1 = 0.05;
  double extra_e1 = 0.0;
  double phi0 = -1.0;  // < 0: bound from the cold start
  double q_min = 0.36;
  double gamma_c = 0.2;
  double lambda = 0.5;
  int q_points = 25;
  double q_max_ratio = 100.0;
  double eps0_lo = 1e-8;
  double eps0_hi = 1e-1;
  int eps0_points = 200;

  // Closed loop.
  double horizon = 15.0;
  std::vector<double> z0{1.0, 0.0, 0.0, 0.0};
  std::vector<double> zd{0.0, 0.0, 0.0, 0.0};
  double zd_rate = 0.0;
  std::vector<double> zd_step_times;
  std::vector<std::vector<double>> zd_step_targets;
  double budget_scale = 1.0;
  bool check_suboptimality = true;

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const {
    if (trials < 1) throw ParameterError("trials must be >= 1");
    if (lambda < 0.5 || lambda > 0.9) throw ParameterError("lambda must lie in [0.5, 0.9]");
    if (n_p < 1 || n_c < 0) throw ParameterError("bad QP dimensions");
    if (n < 1 || m < 1 || !(T > 0.0)) throw ParameterError("bad MPC dimensions");
    if (!(tau_c > 0.0) || !(eps_psi > 0.0)) throw ParameterError("tau_c and eps_psi must be > 0");
    if (!(q_min > 0.0) || !(gamma_c > 0.0)) throw ParameterError("q_min and gamma_c must be > 0");
    if (zd_step_times.size() != zd_step_targets.size())
      throw ParameterError("zd_step_times and zd_step_targets differ in length");
  }
};

#define CERTMPC_CFG_FIELDS(X)                                                                     \
  X(seed) X(trials) X(threads) X(output_dir) X(n_p) X(n_c) X(sigma_min) X(sigma_max) X(c_scale)    \
  X(pu_scale) X(pf_scale) X(slack_min) X(slack_max) X(hard_fraction) X(eps0_rel)                   \
  X(histogram_bins) X(n) X(T) X(m) X(Q) X(R) X(u_bar) X(state_box_halfwidth) X(state_checks)       \
  X(tau_c) X(eps_psi) X(zd_radius) X(setpoint) X(E1) X(extra_e1) X(phi0) X(q_min) X(gamma_c)       \
  X(lambda) X(q_points) X(q_max_ratio) X(eps0_lo) X(eps0_hi) X(eps0_points) X(horizon) X(z0)       \
  X(zd) X(zd_rate) X(zd_step_times) X(zd_step_targets) X(budget_scale) X(check_suboptimality)

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = to_string(c.experiment);
  j["mode"] = c.mode == ScalingMode::PaperLiteral ? "paper" : "conservative";
#define CERTMPC_PUT(f) j[#f] = c.f;
  CERTMPC_CFG_FIELDS(CERTMPC_PUT)
#undef CERTMPC_PUT
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ParameterError("config must be a JSON object");
  ExperimentConfig c;
  std::vector<std::string> known{"experiment", "mode"};
#define CERTMPC_NAME(f) known.emplace_back(#f);
  CERTMPC_CFG_FIELDS(CERTMPC_NAME)
#undef CERTMPC_NAME
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ParameterError("unknown config key '" + k + "'");
  try {
    if (j.contains("experiment")) c.experiment = experiment_from_string(j.at("experiment"));
    if (j.contains("mode")) c.mode = scaling_mode_from_string(j.at("mode").get<std::string>());
#define CERTMPC_GET(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
    CERTMPC_CFG_FIELDS(CERTMPC_GET)
#undef CERTMPC_GET
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

#undef CERTMPC_CFG_FIELDS

/// Runs body(i) for i in [0, n) on a pool of workers; results land in caller-owned slots.
template <class Body>
void parallel_for(int n, int threads, Body&& body) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, std::max(1, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errs(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = next++; i < n; i = next++) body(i);
      } catch (...) {
        errs[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Random QP suite.

struct QpTrialRow {
  int trial = 0;
  IterCount N_used = 0;
  IterCount N_max = 0;
  double ratio = 0.0;
  IterCount N_needed = 0;  // first iterate that is eps-suboptimal against the oracle
  double needed_ratio = 0.0;
  double eps0 = 0.0;
  double f_ref = 0.0;
  bool diverged = false;
  bool suboptimal_pass = false;
};

struct QpSuiteResult {
  std::vector<QpTrialRow> rows;
  std::vector<int> histogram;         // N_used / N_max
  std::vector<int> needed_histogram;  // N_needed / N_max
  int failures = 0;
  double max_ratio = 0.0;
  double max_needed_ratio = 0.0;
};

inline RandomQpConfig generator_config(const ExperimentConfig& c) {
  RandomQpConfig g;
  g.n_p = c.n_p;
  g.n_c = c.n_c;
  g.sigma_min = c.sigma_min;
  g.sigma_max = c.sigma_max;
  g.c_scale = c.c_scale;
  g.pu_scale = c.pu_scale;
  g.pf_scale = c.pf_scale;
  g.slack_min = c.slack_min;
  g.slack_max = c.slack_max;
  g.eps_psi = c.eps_psi;
  g.hard_fraction = c.hard_fraction;
  return g;
}

inline QpTrialRow run_qp_trial(const ExperimentConfig& c, int trial) {
  auto rng = make_rng(c.seed, static_cast<std::uint64_t>(trial));
  const RandomQp q = generate_random_qp(generator_config(c), rng);
  const OracleSolution o = solve_reference(q.prob);
  QpTrialRow row;
  row.trial = trial;
  row.f_ref = o.f_ref;
  row.eps0 = c.eps0_rel * std::abs(o.f_ref);
  const SuboptimalityPair pair(row.eps0, c.eps_psi);
  const CertificationConstants k = certification_constants(q.prob, pair, q.p_f.norm(), c.mode);
  bool found = false;
  auto observe = [&](IterCount i, const Vector&, const IterateInfo& in) {
    if (!found && std::abs(in.f0 - o.f_ref) <= pair.eps0 && in.psi <= pair.eps_psi * pair.eps_psi) {
      found = true;
      row.N_needed = i;
    }
  };
  try {
    const CertifiedSolveReport rep =
        certified_solve(q.prob, Vector::Zero(q.prob.n_p()), pair, k, observe);
    row.N_used = rep.iters_used;
    row.N_max = rep.n_max;
    row.suboptimal_pass =
        is_suboptimal(q.prob, rep.p_hat, o.f_ref, pair) && rep.iters_used <= rep.n_max;
  } catch (const NumericError& e) {
    row.diverged = true;
    row.N_used = e.iteration;
    row.N_max = solve_budget(q.prob, Vector::Zero(q.prob.n_p()), k).n_max;
  }
  row.ratio = row.N_max ? static_cast<double>(row.N_used) / static_cast<double>(row.N_max) : 0.0;
  row.needed_ratio =
      row.N_max && found ? static_cast<double>(row.N_needed) / static_cast<double>(row.N_max) : 0.0;
  return row;
}

inline std::vector<int> histogram(const std::vector<double>& v, int bins) {
  std::vector<int> h(static_cast<std::size_t>(bins), 0);
  for (double x : v) {
    int b = static_cast<int>(std::floor(x * bins));
    h[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))]++;
  }
  return h;
}

inline QpSuiteResult run_random_qp_suite(const ExperimentConfig& c) {
  c.validate();
  QpSuiteResult r;
  r.rows.resize(static_cast<std::size_t>(c.trials));
  parallel_for(c.trials, c.threads,
               [&](int t) { r.rows[static_cast<std::size_t>(t)] = run_qp_trial(c, t); });
  std::vector<double> ratios, needed;
  for (const auto& row : r.rows) {
    r.failures += !row.suboptimal_pass;
    r.max_ratio = std::max(r.max_ratio, row.ratio);
    r.max_needed_ratio = std::max(r.max_needed_ratio, row.needed_ratio);
    ratios.push_back(row.ratio);
    needed.push_back(row.needed_ratio);
  }
  r.histogram = histogram(ratios, c.histogram_bins);
  r.needed_histogram = histogram(needed, c.histogram_bins);
  return r;
}

inline CsvWriter qp_suite_csv(const QpSuiteResult& r) {
  CsvWriter w({"trial", "N_used", "N_max", "ratio", "N_needed", "needed_ratio", "eps0", "f_ref",
               "diverged", "suboptimal_pass"});
  for (const auto& x : r.rows)
    w.row(x.trial, x.N_used, x.N_max, x.ratio, x.N_needed, x.needed_ratio, x.eps0, x.f_ref,
          x.diverged, x.suboptimal_pass);
  return w;
}

inline CsvWriter qp_histogram_csv(const QpSuiteResult& r) {
  CsvWriter w({"bin_lo", "bin_hi", "count_used", "count_needed"});
  const int bins = static_cast<int>(r.histogram.size());
  for (int b = 0; b < bins; ++b)
    w.row(static_cast<double>(b) / bins, static_cast<double>(b + 1) / bins,
          r.histogram[static_cast<std::size_t>(b)], r.needed_histogram[static_cast<std::size_t>(b)]);
  return w;
}

// ---------------------------------------------------------------------------
// Integrator designs.

inline Plant plant_from_config(const ExperimentConfig& c) {
  Plant pl = integrator_chain(c.n, c.u_bar);
  pl.state_box.clear();
  for (std::size_t i = 0; i < c.state_box_halfwidth.size() && static_cast<int>(i) < c.n; ++i)
    pl.state_box.push_back({static_cast<Index>(i), -c.state_box_halfwidth[i],
                            c.state_box_halfwidth[i]});
  return pl;
}

inline MpcDesign design_from_config(const ExperimentConfig& c) {
  DesignConfig dc;
  dc.T = c.T;
  dc.blocks = c.m;
  dc.Q_scale = c.Q;
  dc.R = c.R;
  dc.eps_psi = c.eps_psi;
  dc.state_checks = c.state_checks;
  return build_design(plant_from_config(c), dc);
}

inline CompactSetBounds bounds_from_config(const MpcDesign& d, const ExperimentConfig& c) {
  BoundsConfig bc;
  bc.mode = c.mode;
  bc.zd_radius = c.zd_radius;
  bc.setpoint = setpoint_mode_from_string(c.setpoint);
  bc.zd_rate_max = c.E1;
  bc.extra_e1 = c.extra_e1;
  bc.phi0 = c.phi0;
  return compute_bounds(d, bc);
}

inline CertifyOptions certify_options(const ExperimentConfig& c) {
  CertifyOptions o;
  o.eps0_lo = c.eps0_lo;
  o.eps0_hi = c.eps0_hi;
  o.grid_points = c.eps0_points;
  return o;
}

inline std::vector<double> q_grid(const ExperimentConfig& c) {
  if (c.q_points < 2) return {c.q_min};
  return log_grid(c.q_min, c.q_min * c.q_max_ratio, c.q_points);
}

struct CertifyResult {
  bool feasible = false;
  double margin = 0.0;  // closest approach of R - threshold when infeasible
  double threshold = 0.0;
  double eps0_cap = 0.0;
  SamplingRow row;      // certified interval at q_min
  CompactSetBounds bounds;
  CsvWriter sweep{{"eps0", "N", "tau", "e_term", "eps0_line", "sum", "gamma", "R", "threshold"}};
};

/// eps0 sweep of the terms of R at q_min plus the certified interval (or the closest margin).
inline CertifyResult run_integrator_certify(const ExperimentConfig& c) {
  c.validate();
  const MpcDesign d = design_from_config(c);
  CertifyResult r;
  r.bounds = bounds_from_config(d, c);
  const CertifyOptions opt = certify_options(c);
  r.threshold = -c.gamma_c * c.q_min * c.q_min / (3.0 * r.bounds.D_C);
  r.eps0_cap = c.gamma_c * c.q_min * c.q_min / (2.0 * r.bounds.D_C);
  for (double e : log_grid(opt.eps0_lo, opt.eps0_hi, opt.grid_points)) {
    const DecreaseTerms t = decrease_terms(e, c.eps_psi, c.q_min, c.tau_c, r.bounds);
    r.sweep.row(e, t.N, t.tau, t.e_term, e, t.e_term + e, t.gamma, t.R, r.threshold);
  }
  try {
    const CertifiedSamplingLaw law =
        certify(r.bounds, c.eps_psi, c.tau_c, c.q_min, c.gamma_c, {c.q_min}, c.lambda, opt);
    r.feasible = true;
    r.row = law.table.front();
    r.margin = r_decrease(r.row.eps0_sol, c.eps_psi, c.q_min, c.tau_c, r.bounds) - r.threshold;
  } catch (const CertificationInfeasible& e) {
    r.margin = e.margin;
  }
  return r;
}

inline CertifiedSamplingLaw certified_law(const MpcDesign& d, const ExperimentConfig& c) {
  return certify(bounds_from_config(d, c), c.eps_psi, c.tau_c, c.q_min, c.gamma_c, q_grid(c),
                 c.lambda, certify_options(c));
}

/// q sweep table; q column is reported relative to q_min.
inline CsvWriter bounds_table_csv(const CertifiedSamplingLaw& law) {
  CsvWriter w({"q_over_qmin", "q_bar", "eps0_lower", "eps0_upper", "eps0_sol", "N", "tau_k"});
  for (const auto& r : law.table)
    w.row(r.q_bar / law.q_min, r.q_bar, r.eps0_lower, r.eps0_upper, r.eps0_sol, r.N, r.tau_k);
  return w;
}

struct ClosedLoopResult {
  ClosedLoopTrace trace;
  MonitorReport report;
};

inline SetpointProfile setpoint_from_config(const ExperimentConfig& c) {
  SetpointProfile sp = SetpointProfile::constant(Vector::Map(c.zd.data(), static_cast<Index>(c.zd.size())));
  sp.rate_max = c.zd_rate;
  for (std::size_t i = 0; i < c.zd_step_times.size(); ++i) {
    const auto& v = c.zd_step_targets[i];
    sp.switches.emplace_back(c.zd_step_times[i], Vector::Map(v.data(), static_cast<Index>(v.size())));
  }
  return sp;
}

inline ClosedLoopResult run_closed_loop(const ExperimentConfig& c) {
  c.validate();
  const MpcDesign d = design_from_config(c);
  const CertifiedSamplingLaw law = certified_law(d, c);
  SimOptions so;
  so.horizon = c.horizon;
  so.budget_scale = c.budget_scale;
  ClosedLoopResult r;
  r.trace = simulate(d, law, Vector::Map(c.z0.data(), static_cast<Index>(c.z0.size())),
                     setpoint_from_config(c), so);
  r.report = monitor(r.trace, d, law, c.check_suboptimality);
  return r;
}

/// Certified demonstration scenario: n = 4 with a wide state box and u_bar so that
/// psi_max = 0, perfect prediction and a moderate phi0.
inline ExperimentConfig demo_closed_loop_config() {
  ExperimentConfig c;
  c.experiment = Experiment::ClosedLoop;
  c.mode = ScalingMode::Conservative;
  c.u_bar = 1e3;
  c.state_box_halfwidth = {1e3, 1e3};
  c.phi0 = 50.0;
  c.E1 = 0.0;
  c.tau_c = 1e-4;
  c.q_min = 1.0;
  c.q_points = 4;
  c.horizon = 15.0;
  return c;
}

}  // namespace certmpc
