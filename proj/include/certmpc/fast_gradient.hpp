#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>

#include "certmpc/linalg.hpp"

namespace certmpc {

using IterCount = std::uint64_t;
inline constexpr IterCount kIterSaturated = std::numeric_limits<IterCount>::max();

/// Strong convexity mu and gradient Lipschitz constant L of the minimized function.
struct SmoothnessPair {
  double mu = 1.0;
  double L = 1.0;

  SmoothnessPair() = default;
  SmoothnessPair(double mu_, double L_) : mu(mu_), L(L_) {
    if (!(mu_ > 0.0) || !std::isfinite(mu_)) throw ParameterError("mu must be > 0");
    if (!(L_ >= mu_) || !std::isfinite(L_)) throw ParameterError("L must be >= mu");
  }

  double ratio() const { return mu / L; }
  double c() const { return std::sqrt(mu / L); }
};

struct FastGradientState {
  Vector p;
  Vector q;
  double alpha = 1.0;
  IterCount iter = 0;

  static FastGradientState initial(Vector p0, const SmoothnessPair& smooth) {
    FastGradientState s;
    s.q = p0;
    s.p = std::move(p0);
    s.alpha = smooth.c();
    s.iter = 0;
    return s;
  }
};

/// Positive root of a^2 = (1 - a) alpha^2 + (mu/L) a.
inline double alpha_next(double alpha, const SmoothnessPair& smooth) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in (0, 1]");
  const double a2 = alpha * alpha;
  const double b = a2 - smooth.ratio();
  const double disc = std::sqrt(b * b + 4.0 * a2);
  // a = (-b + disc)/2, rewritten as 2a^2/(b + disc) when b > 0 to avoid cancellation.
  const double out = b > 0.0 ? 2.0 * a2 / (b + disc) : 0.5 * (disc - b);
  return std::min(out, 1.0);
}

/// Momentum weight beta_i given alpha_i and alpha_{i+1}.
inline double momentum(double alpha, double alpha_plus) {
  return alpha * (1.0 - alpha) / (alpha * alpha + alpha_plus);
}

/// In-place step given the gradient at q.
inline void fg_advance(FastGradientState& s, const Vector& grad_q, const SmoothnessPair& smooth) {
  if (!grad_q.allFinite()) throw NumericError("non-finite gradient", s.iter);
  Vector p_next = s.q - grad_q / smooth.L;
  const double a_next = alpha_next(s.alpha, smooth);
  const double beta = momentum(s.alpha, a_next);
  s.q = p_next + beta * (p_next - s.p);
  s.p = std::move(p_next);
  s.alpha = a_next;
  ++s.iter;
}

/// One step of the accelerated scheme; grad is any callable Vector -> Vector.
template <class Grad>
FastGradientState fg_step(const FastGradientState& state, Grad&& grad,
                          const SmoothnessPair& smooth) {
  FastGradientState next = state;
  const Vector g = grad(static_cast<const Vector&>(state.q));
  fg_advance(next, g, smooth);
  return next;
}

/// Real-valued iteration bound, computed from log(gamma) so that gamma may underflow.
inline double nbar_real_log(double c, double log_gamma) {
  if (!(c > 0.0 && c <= 1.0)) throw ParameterError("nbar: c must lie in (0, 1]");
  if (std::isnan(log_gamma)) throw ParameterError("nbar: gamma is NaN");
  if (log_gamma >= 0.0) return 0.0;
  if (c == 1.0) return 1.0;  // mu = L: one gradient step is exact
  const double linear = log_gamma / std::log1p(-c);
  // (1/c)(gamma^{-1/2} - 1) = expm1(-log_gamma/2)/c
  const double sublinear = std::expm1(-0.5 * log_gamma) / c;
  return std::max(0.0, std::min(linear, sublinear));
}

/// Ceiling of the real bound, saturating at the largest IterCount.
inline IterCount ceil_count(double v) {
  if (!(v > 0.0)) return 0;
  const double r = std::ceil(v);
  if (r >= 18446744073709549568.0) return kIterSaturated;
  return static_cast<IterCount>(r);
}

inline IterCount nbar_log(double c, double log_gamma) {
  return ceil_count(nbar_real_log(c, log_gamma));
}

inline IterCount nbar(double c, double gamma) {
  if (!(gamma > 0.0)) throw ParameterError("nbar: gamma must be > 0");
  return nbar_log(c, std::log(gamma));
}

/// Right-hand side of the accelerated rate: ((L+mu)/2) min{(1-c)^i, 1/(1+ic)^2} dist0^2.
inline double convergence_bound(IterCount i, const SmoothnessPair& smooth, double dist0) {
  if (!(dist0 >= 0.0)) throw ParameterError("dist0 must be >= 0");
  const double c = smooth.c();
  const double di = static_cast<double>(i);
  const double geo = c < 1.0 ? std::exp(di * std::log1p(-c)) : (i == 0 ? 1.0 : 0.0);
  const double poly = 1.0 / ((1.0 + di * c) * (1.0 + di * c));
  return 0.5 * (smooth.L + smooth.mu) * std::min(geo, poly) * dist0 * dist0;
}

/// Distance bound sqrt(2 f(p)/mu) for a nonnegative strongly convex f.
inline double radius_bound(double f_at_p, double mu) {
  if (f_at_p < 0.0) throw InvariantError("radius_bound: f(p) must be >= 0");
  if (!(mu > 0.0)) throw ParameterError("radius_bound: mu must be > 0");
  return std::sqrt(2.0 * f_at_p / mu);
}

}  // namespace certmpc
