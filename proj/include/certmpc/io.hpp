#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "certmpc/closed_loop.hpp"
#include "certmpc/mpc_design.hpp"

namespace certmpc {

using json = nlohmann::json;

/// 17 significant digits, so values round-trip exactly.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt(IterCount v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(long v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "1" : "0"; }
inline std::string fmt(const std::string& s) { return s; }

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : cols_(header.size()) { row_raw(header); }

  template <class... Ts>
  void row(const Ts&... vals) {
    std::vector<std::string> cells{fmt(vals)...};
    if (cells.size() != cols_) throw InputError("csv: wrong number of cells");
    row_raw(cells);
  }

  void row_cells(const std::vector<std::string>& cells) {
    if (cells.size() != cols_) throw InputError("csv: wrong number of cells");
    row_raw(cells);
  }

  const std::string& str() const { return out_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path);
    f << out_;
  }

 private:
  void row_raw(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ += ',';
      out_ += cells[i];
    }
    out_ += '\n';
  }
  std::size_t cols_;
  std::string out_;
};

inline json to_json(const Matrix& M) {
  json j = json::array();
  for (Index i = 0; i < M.rows(); ++i) {
    json r = json::array();
    for (Index k = 0; k < M.cols(); ++k) r.push_back(M(i, k));
    j.push_back(r);
  }
  return j;
}

inline json to_json(const Vector& v) {
  json j = json::array();
  for (Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

inline Vector vector_from_json(const json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
  return v;
}

inline json design_to_json(const MpcDesign& d) {
  json j;
  j["As"] = to_json(d.sys.As);
  j["Bs"] = to_json(d.sys.Bs);
  j["C"] = to_json(d.sys.C);
  j["Q"] = to_json(d.Q);
  j["R"] = to_json(d.R);
  j["T"] = d.T;
  j["basis_edges"] = d.basis.edges;
  j["K"] = to_json(d.K);
  j["M"] = to_json(d.M);
  j["H"] = to_json(d.H);
  j["F1"] = to_json(d.F1);
  j["S"] = to_json(d.S);
  j["A"] = to_json(d.A);
  j["B0"] = to_json(d.B0);
  j["B1"] = to_json(d.B1);
  j["check_grid"] = d.check_grid;
  j["u_bar"] = d.u_bar;
  j["hard_rows"] = d.hard_idx;
  j["soft_rows"] = d.soft_idx;
  j["eps_psi"] = d.eps_psi;
  return j;
}

inline json bounds_to_json(const CompactSetBounds& b) {
  return json{{"mode", to_string(b.mode)},   {"phi0", b.phi0},
              {"p_radius", b.p_radius},      {"x_radius", b.x_radius},
              {"zd_radius", b.zd_radius},    {"psi_max", b.psi_max},
              {"f0_max", b.f0_max},          {"kappa0_max", b.kappa0_max},
              {"rho_max", b.rho_max},        {"eta_min", b.eta_min},
              {"gamma0_min", b.gamma0_min},  {"log_gamma0_min", b.log_gamma0_min},
              {"c_min", b.c_min},            {"D_C", b.D_C},
              {"K_C0", b.K_C0},              {"K_Cpsi", b.K_Cpsi},
              {"E0", b.E0},                  {"E1", b.E1},
              {"L0", b.scaling.L0},          {"Lpsi", b.scaling.Lpsi},
              {"mu0", b.scaling.mu0},        {"beta", b.scaling.beta},
              {"D0", b.D0}};
}

inline CsvWriter law_to_csv(const CertifiedSamplingLaw& law) {
  CsvWriter w({"q_bar", "eps0_lower", "eps0_upper", "eps0_sol", "N", "tau_k"});
  for (const auto& r : law.table) w.row(r.q_bar, r.eps0_lower, r.eps0_upper, r.eps0_sol, r.N, r.tau_k);
  return w;
}

inline CsvWriter trace_to_csv(const ClosedLoopTrace& tr) {
  std::vector<std::string> h{"t_k"};
  const Index nx = tr.events.empty() ? 0 : tr.events.front().x.size();
  for (Index i = 0; i < nx; ++i) h.push_back("x" + std::to_string(i + 1));
  for (const char* c : {"q", "eps0_k", "tau_k", "N_budget", "N_used", "f0_visited",
                        "max_hard_violation", "max_soft_violation", "decrease_margin"})
    h.emplace_back(c);
  CsvWriter w(h);
  for (const auto& e : tr.events) {
    std::vector<std::string> cells{fmt(e.t)};
    for (Index i = 0; i < nx; ++i) cells.push_back(fmt(e.x(i)));
    for (const std::string& s :
         {fmt(e.q), fmt(e.eps0), fmt(e.tau), fmt(e.N_budget), fmt(e.N_used), fmt(e.f0_visited),
          fmt(e.max_hard_violation), fmt(e.max_soft_violation), fmt(e.decrease_margin)})
      cells.push_back(s);
    w.row_cells(cells);
  }
  return w;
}

inline json monitor_to_json(const MonitorReport& r, const ClosedLoopTrace& tr) {
  return json{{"pass", r.all_pass()},
              {"decrease", r.decrease},
              {"hard", r.hard},
              {"soft", r.soft},
              {"budget", r.budget},
              {"suboptimal", r.suboptimal},
              {"suboptimality_checked", r.suboptimality_checked},
              {"arrival", r.arrival},
              {"event_bound_ok", r.event_bound_ok},
              {"event_bound", r.event_bound},
              {"events", tr.events.size()},
              {"events_above_qmin", r.events_above_qmin},
              {"soft_limit", r.soft_limit},
              {"max_tau", r.max_tau},
              {"lemma6", r.lemma6},
              {"delta_lower_bound", r.delta_lb},
              {"first_failure_event", r.first_failure}};
}

inline void save_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path);
  f << text;
}

}  // namespace certmpc
