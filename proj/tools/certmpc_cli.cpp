// certmpc: experiment harness (random QP certification suite, integrator MPC certification,
// sampling-law tables, closed-loop runs). Exit codes: 0 pass, 1 validation failure,
// 2 configuration error.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "certmpc/experiments.hpp"

namespace fs = std::filesystem;
using namespace certmpc;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<int> threads;
  std::string out = ".";
  std::string mode;
  bool print_config = false;
  bool demo = false;
};

ExperimentConfig load(const Common& o, Experiment exp) {
  ExperimentConfig c = o.demo ? demo_closed_loop_config() : ExperimentConfig{};
  if (!o.config.empty()) {
    std::ifstream f(o.config);
    if (!f) throw ParameterError("cannot open config " + o.config);
    json j;
    try {
      j = json::parse(f);
    } catch (const json::exception& e) {
      throw ParameterError(std::string("config is not valid JSON: ") + e.what());
    }
    c = config_from_json(j);
  }
  c.experiment = exp;
  if (o.seed) c.seed = *o.seed;
  if (o.trials) c.trials = *o.trials;
  if (o.threads) c.threads = *o.threads;
  if (!o.mode.empty()) c.mode = scaling_mode_from_string(o.mode);
  c.output_dir = o.out;
  c.validate();
  return c;
}

fs::path out_dir(const ExperimentConfig& c) {
  fs::path p(c.output_dir);
  fs::create_directories(p);
  return p;
}

int qp_suite(const ExperimentConfig& c) {
  const QpSuiteResult r = run_random_qp_suite(c);
  const fs::path dir = out_dir(c);
  qp_suite_csv(r).save((dir / "qp_suite.csv").string());
  qp_histogram_csv(r).save((dir / "qp_histogram.csv").string());
  json s{{"trials", c.trials},         {"seed", c.seed},
         {"mode", to_string(c.mode)},  {"failures", r.failures},
         {"max_ratio", r.max_ratio},   {"max_needed_ratio", r.max_needed_ratio},
         {"histogram", r.histogram},   {"needed_histogram", r.needed_histogram}};
  json failed = json::array();
  for (const auto& row : r.rows)
    if (!row.suboptimal_pass) failed.push_back(row.trial);
  s["failed_trials"] = failed;
  save_text((dir / "qp_suite.json").string(), s.dump(2) + "\n");
  std::cout << "qp-suite: " << c.trials - r.failures << "/" << c.trials
            << " eps-suboptimal, max N_used/N_max = " << r.max_ratio
            << ", max N_needed/N_max = " << r.max_needed_ratio << "\n";
  if (r.failures) {
    std::cout << "failed trials (seed " << c.seed << "):";
    for (const auto& t : failed) std::cout << " " << t;
    std::cout << "\n";
    return 1;
  }
  return 0;
}

int mpc_certify(const ExperimentConfig& c) {
  const CertifyResult r = run_integrator_certify(c);
  const fs::path dir = out_dir(c);
  r.sweep.save((dir / "certify_sweep.csv").string());
  json s{{"n", c.n},
         {"q_min", c.q_min},
         {"gamma_c", c.gamma_c},
         {"E1", c.E1},
         {"feasible", r.feasible},
         {"margin", r.margin},
         {"threshold", r.threshold},
         {"eps0_cap", r.eps0_cap},
         {"bounds", bounds_to_json(r.bounds)}};
  if (r.feasible)
    s["interval"] = {{"eps0_lower", r.row.eps0_lower}, {"eps0_upper", r.row.eps0_upper},
                     {"eps0_sol", r.row.eps0_sol},     {"N", r.row.N},
                     {"tau_k", r.row.tau_k}};
  save_text((dir / "certify.json").string(), s.dump(2) + "\n");
  if (r.feasible) {
    std::cout << "mpc-certify: feasible, eps0 in [" << r.row.eps0_lower << ", "
              << r.row.eps0_upper << "]\n";
    return 0;
  }
  std::cout << "mpc-certify: infeasible, closest approach of R - threshold = " << r.margin << "\n";
  return 1;
}

int mpc_bounds(const ExperimentConfig& c) {
  const MpcDesign d = design_from_config(c);
  const fs::path dir = out_dir(c);
  save_text((dir / "design.json").string(), design_to_json(d).dump() + "\n");
  try {
    const CertifiedSamplingLaw law = certified_law(d, c);
    bounds_table_csv(law).save((dir / "bounds_table.csv").string());
    law_to_csv(law).save((dir / "sampling_law.csv").string());
    std::cout << "mpc-bounds: " << law.table.size() << " rows\n";
    return 0;
  } catch (const CertificationInfeasible& e) {
    std::cout << "mpc-bounds: certification infeasible (" << e.what() << ")\n";
    return 1;
  }
}

int simulate_cmd(const ExperimentConfig& c) {
  const fs::path dir = out_dir(c);
  try {
    const ClosedLoopResult r = run_closed_loop(c);
    trace_to_csv(r.trace).save((dir / "trace.csv").string());
    save_text((dir / "monitor.json").string(), monitor_to_json(r.report, r.trace).dump(2) + "\n");
    std::cout << "simulate: " << r.trace.events.size() << " events, monitor "
              << (r.report.all_pass() ? "pass" : "FAIL");
    if (r.report.first_failure >= 0) std::cout << " (first failing event " << r.report.first_failure << ")";
    std::cout << "\n";
    return r.report.all_pass() ? 0 : 1;
  } catch (const CertificationInfeasible& e) {
    std::cout << "simulate: refused, law not certified (" << e.what() << ")\n";
    return 1;
  } catch (const PreconditionError& e) {
    std::cout << "simulate: precondition failed: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"certmpc experiment harness"};
  app.require_subcommand(1);
  Common o;
  struct Sub {
    const char* name;
    const char* help;
    Experiment exp;
    int (*run)(const ExperimentConfig&);
  };
  const Sub subs[] = {
      {"qp-suite", "random QP certification suite", Experiment::RandomQpSuite, qp_suite},
      {"mpc-certify", "eps0 sweep and certification of an integrator design",
       Experiment::IntegratorCertify, mpc_certify},
      {"mpc-bounds", "eps0 bounds over q (sampling-law table)", Experiment::IntegratorBounds,
       mpc_bounds},
      {"simulate", "closed-loop run with online monitor", Experiment::ClosedLoop, simulate_cmd},
  };
  for (const auto& s : subs) {
    CLI::App* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("--config", o.config, "JSON experiment config");
    sc->add_option("--seed", o.seed, "RNG seed");
    sc->add_option("--trials", o.trials, "number of trials");
    sc->add_option("--threads", o.threads, "worker threads (0: all cores)");
    sc->add_option("--out", o.out, "output directory");
    sc->add_option("--mode", o.mode, "scaling mode")->check(CLI::IsMember({"paper", "conservative"}));
    sc->add_flag("--print-config", o.print_config, "print the effective config and exit");
    if (s.exp == Experiment::ClosedLoop)
      sc->add_flag("--demo", o.demo, "certified demonstration scenario instead of the paper one");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  for (const auto& s : subs) {
    if (!app.got_subcommand(s.name)) continue;
    ExperimentConfig c;
    try {
      c = load(o, s.exp);
    } catch (const Error& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    }
    if (o.print_config) {
      std::cout << config_to_json(c).dump(2) << "\n";
      return 0;
    }
    try {
      return s.run(c);
    } catch (const ParameterError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}
