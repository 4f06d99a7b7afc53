#include <gtest/gtest.h>

#include <atomic>
#include <sstream>
#include <string>
#include <vector>

#include "certmpc/experiments.hpp"
#include "certmpc/io.hpp"

using namespace certmpc;

namespace {

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::size_t cells(const std::string& line) {
  return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

}  // namespace

TEST(Config, RoundTripDefaultsAndEdits) {
  const ExperimentConfig a;
  EXPECT_EQ(config_from_json(config_to_json(a)), a);
  ExperimentConfig b;
  b.experiment = Experiment::ClosedLoop;
  b.mode = ScalingMode::PaperLiteral;
  b.seed = 123456789012345ull;
  b.tau_c = 1.2345678901234567e-7;
  b.z0 = {0.5, -1.0, 0.0, 2.0};
  b.zd_step_times = {1.0, 2.5};
  b.zd_step_targets = {{1, 0, 0, 0}, {0, 0, 0, 0}};
  b.setpoint = "raw";
  b.check_suboptimality = false;
  EXPECT_EQ(config_from_json(config_to_json(b)), b);
  EXPECT_EQ(config_from_json(json::parse(config_to_json(b).dump())), b);
}

TEST(Config, RejectsInvalidInput) {
  EXPECT_THROW(config_from_json(json{{"nonsense", 1}}), ParameterError);
  EXPECT_THROW(config_from_json(json{{"lambda", 0.95}}), ParameterError);
  EXPECT_THROW(config_from_json(json{{"trials", 0}}), ParameterError);
  EXPECT_THROW(config_from_json(json{{"trials", "many"}}), ParameterError);
  EXPECT_THROW(config_from_json(json::array()), ParameterError);
  EXPECT_THROW(config_from_json(json{{"experiment", "other"}}), ParameterError);
  EXPECT_THROW(config_from_json(json{{"zd_step_times", {1.0}}}), ParameterError);
  EXPECT_EQ(config_from_json(json{{"experiment", "mpc-bounds"}}).experiment,
            Experiment::IntegratorBounds);
}

TEST(Csv, SeventeenDigitsAndShape) {
  CsvWriter w({"a", "b", "c"});
  w.row(0.1, IterCount{7}, true);
  w.row(std::numeric_limits<double>::quiet_NaN(), IterCount{0}, false);
  EXPECT_EQ(w.str(), "a,b,c\n0.10000000000000001,7,1\nnan,0,0\n");
  EXPECT_THROW(w.row(1.0, 2.0), InputError);
  EXPECT_EQ(std::stod(fmt(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Histogram, BinsCoverTheUnitInterval) {
  const std::vector<int> h = histogram({0.0, 0.049, 0.05, 0.5, 0.999, 1.0}, 20);
  EXPECT_EQ(h[0], 2);
  EXPECT_EQ(h[1], 1);
  EXPECT_EQ(h[10], 1);
  EXPECT_EQ(h[19], 2);
}

TEST(ParallelFor, VisitsEveryIndexOnceAndRethrows) {
  std::vector<std::atomic<int>> seen(57);
  parallel_for(57, 4, [&](int i) { seen[static_cast<std::size_t>(i)]++; });
  for (auto& s : seen) EXPECT_EQ(s.load(), 1);
  EXPECT_THROW(parallel_for(10, 3,
                            [](int i) {
                              if (i == 7) throw NumericError("boom");
                            }),
               NumericError);
}

TEST(QpSuite, DeterministicAcrossRunsAndThreadCounts) {
  ExperimentConfig c;
  c.trials = 4;
  c.seed = 3;
  c.n_p = 5;
  c.n_c = 8;
  c.threads = 1;
  const QpSuiteResult a = run_random_qp_suite(c);
  c.threads = 3;
  const QpSuiteResult b = run_random_qp_suite(c);
  EXPECT_EQ(qp_suite_csv(a).str(), qp_suite_csv(b).str());
  EXPECT_EQ(qp_histogram_csv(a).str(), qp_histogram_csv(b).str());
  const auto ls = lines(qp_suite_csv(a).str());
  ASSERT_EQ(ls.size(), 5u);
  EXPECT_EQ(ls[0], "trial,N_used,N_max,ratio,N_needed,needed_ratio,eps0,f_ref,diverged,suboptimal_pass");
  for (const auto& row : a.rows) {
    EXPECT_TRUE(row.suboptimal_pass);
    EXPECT_LE(row.N_used, row.N_max);
    EXPECT_NEAR(row.eps0, 0.01 * row.f_ref, 1e-15);
  }
  // a single trial is reproducible by itself
  const QpTrialRow one = run_qp_trial(c, 2);
  EXPECT_EQ(one.N_used, a.rows[2].N_used);
  EXPECT_EQ(one.f_ref, a.rows[2].f_ref);
}

TEST(IntegratorCertify, InfeasibilityIsAStructuredReport) {
  ExperimentConfig c;
  c.experiment = Experiment::IntegratorCertify;
  c.mode = ScalingMode::PaperLiteral;
  c.eps0_points = 40;
  const CertifyResult r = run_integrator_certify(c);
  EXPECT_FALSE(r.feasible);
  EXPECT_GT(r.margin, 0.0);
  const auto ls = lines(r.sweep.str());
  ASSERT_EQ(ls.size(), 41u);
  EXPECT_EQ(ls[0], "eps0,N,tau,e_term,eps0_line,sum,gamma,R,threshold");
  for (std::size_t i = 1; i < ls.size(); ++i) EXPECT_EQ(cells(ls[i]), 9u);
}

TEST(IntegratorBounds, DemoTableIsMonotone) {
  const ExperimentConfig c = demo_closed_loop_config();
  const MpcDesign d = design_from_config(c);
  const CertifiedSamplingLaw law = certified_law(d, c);
  const auto ls = lines(bounds_table_csv(law).str());
  EXPECT_EQ(ls[0], "q_over_qmin,q_bar,eps0_lower,eps0_upper,eps0_sol,N,tau_k");
  ASSERT_GE(law.table.size(), 2u);
  EXPECT_EQ(law.table.front().q_bar, c.q_min);
  for (std::size_t i = 1; i < law.table.size(); ++i) {
    EXPECT_GE(law.table[i].eps0_upper, law.table[i - 1].eps0_upper);
    EXPECT_LE(law.table[i].eps0_lower, law.table[i - 1].eps0_lower * (1.0 + 1e-12));
  }
  EXPECT_EQ(lines(law_to_csv(law).str()).size(), law.table.size() + 1);
}

TEST(ClosedLoopRun, TraceCsvAndMonitorJson) {
  ExperimentConfig c = demo_closed_loop_config();
  c.horizon = 3.0;
  c.check_suboptimality = false;
  const ClosedLoopResult r = run_closed_loop(c);
  const auto ls = lines(trace_to_csv(r.trace).str());
  ASSERT_EQ(ls.size(), r.trace.events.size() + 1);
  EXPECT_EQ(ls[0],
            "t_k,x1,x2,x3,x4,x5,x6,x7,x8,q,eps0_k,tau_k,N_budget,N_used,f0_visited,"
            "max_hard_violation,max_soft_violation,decrease_margin");
  EXPECT_NE(ls.back().find("nan"), std::string::npos);  // last event has no successor
  const json m = monitor_to_json(r.report, r.trace);
  EXPECT_EQ(m["events"].get<std::size_t>(), r.trace.events.size());
  EXPECT_EQ(m["pass"].get<bool>(), r.report.all_pass());
  EXPECT_EQ(trace_to_csv(run_closed_loop(c).trace).str(), trace_to_csv(r.trace).str());
}

TEST(Experiment, Names) {
  for (Experiment e : {Experiment::RandomQpSuite, Experiment::IntegratorCertify,
                       Experiment::IntegratorBounds, Experiment::ClosedLoop})
    EXPECT_EQ(experiment_from_string(to_string(e)), e);
}
