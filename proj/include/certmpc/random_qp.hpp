#pragma once

#include <cstdint>
#include <random>

#include "certmpc/qp_problem.hpp"

namespace certmpc {

/// Generator of random strongly convex QPs with a known strictly feasible point.
struct RandomQpConfig {
  int n_p = 10;
  int n_c = 20;
  double sigma_min = 1e-3;   // H = C C' + sigma I, sigma ~ U[sigma_min, sigma_max]
  double sigma_max = 1.0;
  double c_scale = 0.05;     // entries of the n_p x 1 factor C ~ N(0, c_scale^2)
  double pu_scale = 0.3;     // unconstrained minimum p_u ~ N(0, pu_scale^2 I)
  double pf_scale = 0.5;     // admissible point p_f ~ N(0, pf_scale^2 I)
  double slack_min = 0.1;    // B = A p_f + slack, slack ~ U[slack_min, slack_max]
  double slack_max = 1.0;
  double eps_psi = 1e-2;
  double hard_fraction = 0.0;  // leading share of rows declared hard
};

struct RandomQp {
  QpProblem prob;
  Vector p_f;   // strictly admissible point
  Vector p_u;   // unconstrained minimiser
  double sigma = 0.0;
};

/// Engine seeded from (seed, stream) so trials are independent of execution order.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

template <class Rng>
Vector gaussian_vector(Index n, double scale, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * nd(rng);
  return v;
}

/// Cost 1/2 ||p - p_u||_H^2 + 1, rows of A of unit norm.
template <class Rng>
RandomQp generate_random_qp(const RandomQpConfig& cfg, Rng& rng) {
  if (cfg.n_p < 1 || cfg.n_c < 0) throw ParameterError("random qp: bad dimensions");
  if (!(cfg.sigma_min > 0.0 && cfg.sigma_max >= cfg.sigma_min))
    throw ParameterError("random qp: bad sigma range");
  const Index n = cfg.n_p;
  const Index m = cfg.n_c;
  std::uniform_real_distribution<double> usig(cfg.sigma_min, cfg.sigma_max);
  std::uniform_real_distribution<double> uslack(cfg.slack_min, cfg.slack_max);

  RandomQp out;
  const Vector C = gaussian_vector(n, cfg.c_scale, rng);
  out.sigma = usig(rng);
  Matrix H = C * C.transpose();
  H.diagonal().array() += out.sigma;
  out.p_u = gaussian_vector(n, cfg.pu_scale, rng);
  out.p_f = gaussian_vector(n, cfg.pf_scale, rng);

  Matrix A(m, n);
  for (Index i = 0; i < m; ++i) {
    Vector row = gaussian_vector(n, 1.0, rng);
    A.row(i) = row.transpose() / row.norm();
  }
  Vector B(m);
  for (Index i = 0; i < m; ++i) B(i) = A.row(i).dot(out.p_f) + uslack(rng);

  const Vector F = -H * out.p_u;
  const double s0 = 0.5 * out.p_u.dot(H * out.p_u) + 1.0;
  const Index n_hard = static_cast<Index>(cfg.hard_fraction * static_cast<double>(m));
  IndexSet hard, soft;
  for (Index i = 0; i < m; ++i) (i < n_hard ? hard : soft).push_back(i);
  out.prob = QpProblem(std::move(H), F, s0, std::move(A), std::move(B), std::move(hard),
                       std::move(soft), cfg.eps_psi);
  return out;
}

}  // namespace certmpc
