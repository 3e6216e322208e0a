#pragma once

// Reaction terms, the p-energy and Nehari functionals, Nehari scaling,
// the dictionary upper bound for the well depth, and potential-well
// classification.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "onelap/mesh.hpp"

namespace onelap {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct ZeroReaction {};

/// f(u) = |u|^{q-2} u
struct PowerReaction {
  double q = 3.0;
};

/// f(u) = |u|^{q-2} u + |u|^{s-2} u
struct SumPowersReaction {
  double q = 2.0;
  double s = 3.0;
};

/// f(u) = |u|^{q-2} u exp(alpha u^2)
struct ExpPowerReaction {
  double q = 2.0;
  double alpha = 1.0;
};

struct Nonlinearity {
  std::variant<ZeroReaction, PowerReaction, SumPowersReaction, ExpPowerReaction> kind;
  double p0 = 1.5;  // exponent in the small-amplitude condition, declared by the caller
};

inline std::string reaction_name(const Nonlinearity& nl) {
  struct {
    std::string operator()(const ZeroReaction&) const { return "zero"; }
    std::string operator()(const PowerReaction&) const { return "power"; }
    std::string operator()(const SumPowersReaction&) const { return "sum_powers"; }
    std::string operator()(const ExpPowerReaction&) const { return "exp_power"; }
  } v;
  return std::visit(v, nl.kind);
}

inline void validate(const Nonlinearity& nl) {
  if (!(nl.p0 > 1.0 && nl.p0 < 2.0)) throw std::invalid_argument("p0 must lie in (1,2)");
  if (const auto* p = std::get_if<PowerReaction>(&nl.kind)) {
    if (!(p->q > 1.0)) throw std::invalid_argument("power reaction requires q > 1");
  } else if (const auto* sp = std::get_if<SumPowersReaction>(&nl.kind)) {
    if (!(sp->q > 1.0) || !(sp->s > 1.0)) throw std::invalid_argument("sum_powers reaction requires q > 1 and s > 1");
  } else if (const auto* ep = std::get_if<ExpPowerReaction>(&nl.kind)) {
    if (!(ep->q > 1.0)) throw std::invalid_argument("exp_power reaction requires q > 1");
    if (!(ep->alpha > 0.0)) throw std::invalid_argument("exp_power reaction requires alpha > 0");
  }
}

/// Superlinearity constant theta with 0 < theta F(t) <= f(t) t. Infinite for
/// the zero reaction, which has no finite Nehari level.
inline double theta(const Nonlinearity& nl) {
  if (const auto* p = std::get_if<PowerReaction>(&nl.kind)) return p->q;
  if (const auto* sp = std::get_if<SumPowersReaction>(&nl.kind)) return std::min(sp->q, sp->s);
  if (const auto* ep = std::get_if<ExpPowerReaction>(&nl.kind)) return ep->q;
  return kInf;
}

/// |f(s)| <= C (1 + |s|^{q-1}) for the polynomial reactions.
struct GrowthBound {
  double C = 1.0;
  double q = 2.0;
};

inline std::optional<GrowthBound> growth_bound(const Nonlinearity& nl) {
  if (const auto* p = std::get_if<PowerReaction>(&nl.kind)) return GrowthBound{1.0, p->q};
  if (const auto* sp = std::get_if<SumPowersReaction>(&nl.kind)) return GrowthBound{2.0, std::max(sp->q, sp->s)};
  if (std::holds_alternative<ZeroReaction>(nl.kind)) return GrowthBound{0.0, 2.0};
  return std::nullopt;
}

struct ReactionValue {
  double f = 0.0;
  double F = 0.0;
};

namespace detail {

inline double signed_power(double u, double q) {  // |u|^{q-2} u
  if (u == 0.0) return 0.0;
  return std::copysign(std::pow(std::abs(u), q - 1.0), u);
}

// int_0^{|u|} t^{q-1} exp(alpha t^2) dt as a series of positive terms.
inline double exp_power_primitive(double u, double q, double alpha) {
  const double a = std::abs(u);
  if (a == 0.0) return 0.0;
  if (q == 2.0) return std::expm1(alpha * a * a) / (2.0 * alpha);
  const double x = alpha * a * a;
  double term = std::pow(a, q) / q;
  double sum = term;
  for (int k = 0; k < 100000; ++k) {
    term *= x * (q + 2.0 * k) / ((k + 1.0) * (q + 2.0 * k + 2.0));
    sum += term;
    if (term <= 1e-18 * sum && k > x) break;
  }
  return sum;
}

}  // namespace detail

inline ReactionValue evaluate(const Nonlinearity& nl, double u) {
  if (const auto* p = std::get_if<PowerReaction>(&nl.kind))
    return {detail::signed_power(u, p->q), std::pow(std::abs(u), p->q) / p->q};
  if (const auto* sp = std::get_if<SumPowersReaction>(&nl.kind))
    return {detail::signed_power(u, sp->q) + detail::signed_power(u, sp->s),
            std::pow(std::abs(u), sp->q) / sp->q + std::pow(std::abs(u), sp->s) / sp->s};
  if (const auto* ep = std::get_if<ExpPowerReaction>(&nl.kind))
    return {detail::signed_power(u, ep->q) * std::exp(ep->alpha * u * u),
            detail::exp_power_primitive(u, ep->q, ep->alpha)};
  return {0.0, 0.0};
}

inline double reaction(const Nonlinearity& nl, double u) { return evaluate(nl, u).f; }

/// f'(u); infinite at u = 0 when an exponent is below 2.
inline double reaction_derivative(const Nonlinearity& nl, double u) {
  const double a = std::abs(u);
  if (const auto* p = std::get_if<PowerReaction>(&nl.kind)) return (p->q - 1.0) * std::pow(a, p->q - 2.0);
  if (const auto* sp = std::get_if<SumPowersReaction>(&nl.kind))
    return (sp->q - 1.0) * std::pow(a, sp->q - 2.0) + (sp->s - 1.0) * std::pow(a, sp->s - 2.0);
  if (const auto* ep = std::get_if<ExpPowerReaction>(&nl.kind))
    return ((ep->q - 1.0) * std::pow(a, ep->q - 2.0) + 2.0 * ep->alpha * std::pow(a, ep->q)) *
           std::exp(ep->alpha * u * u);
  return 0.0;
}

// ---------------------------------------------------------------------------
// Energy functionals
// ---------------------------------------------------------------------------

inline void require_p(double p) {
  if (!(p > 1.0)) throw std::invalid_argument("p must satisfy p > 1");
}

/// |g|_eps^p with |g|_eps = sqrt(|g|^2 + eps^2).
inline double regularized_power(const Vec2& g, double p, double eps) {
  if (eps == 0.0) return std::pow(norm(g), p);
  return std::pow(dot(g, g) + eps * eps, 0.5 * p);
}

/// int |grad u|_eps^p
inline double gradient_power_integral(const Field& u, double p, double eps = 0.0) {
  const auto g = gradient(u);
  return integrate_elements(*u.mesh, [&](std::size_t e) { return regularized_power(g[e], p, eps); });
}

/// int |grad u|, the discrete total variation.
inline double total_variation(const Field& u) {
  const auto g = gradient(u);
  return integrate_elements(*u.mesh, [&](std::size_t e) { return norm(g[e]); });
}

inline double primitive_integral(const Field& u, const Nonlinearity& nl) {
  return integrate_nodes(*u.mesh, [&](std::size_t i) { return evaluate(nl, u[i]).F; });
}

/// E_p(u) = (1/p) int |grad u|^p - int F(u). With eps > 0 the gradient is
/// regularized, which is the functional the time stepper dissipates.
inline double energy(const Field& u, double p, const Nonlinearity& nl, double eps = 0.0) {
  require_p(p);
  return gradient_power_integral(u, p, eps) / p - primitive_integral(u, nl);
}

/// I_p(u) = <E_p'(u), u> = int |grad u|^p - int f(u) u.
inline double nehari_I(const Field& u, double p, const Nonlinearity& nl) {
  require_p(p);
  const double fu = integrate_nodes(*u.mesh, [&](std::size_t i) { return reaction(nl, u[i]) * u[i]; });
  return gradient_power_integral(u, p) - fu;
}

/// <E_p'(u), v> = int |grad u|^{p-2} grad u . grad v - int f(u) v.
inline double energy_derivative(const Field& u, const Field& v, double p, const Nonlinearity& nl) {
  require_p(p);
  require_same_mesh(u, v);
  const auto gu = gradient(u);
  const auto gv = gradient(v);
  const double diffusion = integrate_elements(*u.mesh, [&](std::size_t e) {
    const double n = norm(gu[e]);
    return n == 0.0 ? 0.0 : std::pow(n, p - 2.0) * dot(gu[e], gv[e]);
  });
  const double react = integrate_nodes(*u.mesh, [&](std::size_t i) { return reaction(nl, u[i]) * v[i]; });
  return diffusion - react;
}

struct EnergySnapshot {
  double time = 0.0;
  double E_p = 0.0;
  double I_p = 0.0;
  double tv = 0.0;
  double l2 = 0.0;
  double sup = 0.0;
  double dissipation_cum = 0.0;
  double grad_p = 0.0;  // int |grad u|^p
};

inline EnergySnapshot take_snapshot(const Field& u, double t, double p, const Nonlinearity& nl, double dissipation) {
  EnergySnapshot s;
  s.time = t;
  s.grad_p = gradient_power_integral(u, p);
  const double Fu = primitive_integral(u, nl);
  const double fu = integrate_nodes(*u.mesh, [&](std::size_t i) { return reaction(nl, u[i]) * u[i]; });
  s.E_p = s.grad_p / p - Fu;
  s.I_p = s.grad_p - fu;
  s.tv = total_variation(u);
  s.l2 = l2_norm(u);
  s.sup = sup_norm(u);
  s.dissipation_cum = dissipation;
  return s;
}

// ---------------------------------------------------------------------------
// Nehari scaling
// ---------------------------------------------------------------------------

class NehariError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// h(t) = I_p(t phi)/t = t^{p-1} A - int f(t phi) phi
struct NehariFunction {
  const Field& phi;
  double p;
  const Nonlinearity& nl;
  double A;

  double value(double t) const {
    const double react = integrate_nodes(*phi.mesh, [&](std::size_t i) { return reaction(nl, t * phi[i]) * phi[i]; });
    return std::pow(t, p - 1.0) * A - react;
  }
  double derivative(double t) const {
    const double react = integrate_nodes(*phi.mesh, [&](std::size_t i) {
      return phi[i] == 0.0 ? 0.0 : reaction_derivative(nl, t * phi[i]) * phi[i] * phi[i];
    });
    return (p - 1.0) * std::pow(t, p - 2.0) * A - react;
  }
};

}  // namespace detail

/// Positive t with I_p(t phi) = 0, or nullopt when the scalar equation has
/// no sign change in [1e-8, 1e8].
inline std::optional<double> try_nehari_scale(const Field& direction, double p, const Nonlinearity& nl) {
  require_p(p);
  if (is_zero(direction)) throw std::invalid_argument("Nehari direction must be nonzero");
  if (!(theta(nl) > p) || std::holds_alternative<ZeroReaction>(nl.kind)) return std::nullopt;
  const double A = gradient_power_integral(direction, p);
  if (!(A > 0.0)) return std::nullopt;

  const detail::NehariFunction h{direction, p, nl, A};
  double lo = 1.0, hi = 1.0;
  double hlo = h.value(1.0), hhi = hlo;
  if (hlo == 0.0) return 1.0;
  if (hlo > 0.0) {
    while (hhi > 0.0) {
      lo = hi;
      hlo = hhi;
      hi *= 10.0;
      if (hi > 1e8) return std::nullopt;
      hhi = h.value(hi);
      if (!std::isfinite(hhi)) hhi = -kInf;  // exponential overflow means the reaction dominates
    }
  } else {
    while (hlo < 0.0) {
      hi = lo;
      hhi = hlo;
      lo /= 10.0;
      if (lo < 1e-8) return std::nullopt;
      hlo = h.value(lo);
    }
  }

  // Safeguarded Newton on the bracket [lo, hi] with h(lo) > 0 > h(hi).
  double t = 0.5 * (lo + hi);
  for (int it = 0; it < 400; ++it) {
    const double ht = h.value(t);
    if (ht == 0.0) return t;
    if (ht > 0.0) lo = t; else hi = t;
    if (hi - lo <= 1e-15 * hi) break;
    const double dh = h.derivative(t);
    double next = (std::isfinite(dh) && dh != 0.0) ? t - ht / dh : lo - 1.0;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) <= 1e-15 * t) {
      t = next;
      break;
    }
    t = next;
  }
  return t;
}

inline double nehari_scale(const Field& direction, double p, const Nonlinearity& nl) {
  const auto t = try_nehari_scale(direction, p, nl);
  if (!t)
    throw NehariError("no sign change of the Nehari equation in [1e-8, 1e8]; direction is incompatible with the "
                      "superlinearity assumptions");
  return *t;
}

inline Field scaled(const Field& u, double c) {
  Field v = u;
  for (double& x : v.values) x *= c;
  return v;
}

/// E_p(t_p(phi) phi) for each dictionary entry; +inf where no Nehari
/// crossing exists along the ray.
inline std::vector<double> nehari_levels(double p, const Nonlinearity& nl, const std::vector<Field>& dictionary) {
  std::vector<double> levels(dictionary.size(), kInf);
  for (std::size_t k = 0; k < dictionary.size(); ++k) {
    if (const auto t = try_nehari_scale(dictionary[k], p, nl)) levels[k] = energy(scaled(dictionary[k], *t), p, nl);
  }
  return levels;
}

/// Upper bound for d_p = inf over the Nehari set of E_p: the minimum of
/// E_p over the Nehari projections of a finite dictionary.
inline double estimate_dp(const Mesh& mesh, double p, const Nonlinearity& nl, const std::vector<Field>& dictionary) {
  if (dictionary.empty()) throw std::invalid_argument("estimate_dp needs a nonempty dictionary");
  for (const auto& phi : dictionary) {
    if (phi.mesh.get() != &mesh) throw std::invalid_argument("dictionary entry lives on a different mesh");
    if (is_zero(phi)) throw std::invalid_argument("dictionary entries must be nonzero");
  }
  const auto levels = nehari_levels(p, nl, dictionary);
  return *std::min_element(levels.begin(), levels.end());
}

/// Tents of decreasing width followed by sine modes, all vanishing on the
/// boundary. Coordinates are normalized to the unit interval (square).
inline std::vector<Field> bump_dictionary(const MeshPtr& mesh, std::size_t count) {
  const Mesh& m = *mesh;
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  if (const auto* i = std::get_if<Interval>(&m.domain)) x1 = i->length;
  if (const auto* a = std::get_if<Annulus>(&m.domain)) {
    x0 = a->inner;
    x1 = a->outer;
  }
  if (const auto* r = std::get_if<Rectangle>(&m.domain)) {
    x1 = r->width;
    y1 = r->height;
  }
  const bool two_d = m.coord_dim == 2;
  const auto normalized = [&](const Vec2& x) {
    return Vec2{(x[0] - x0) / (x1 - x0), two_d ? (x[1] - y0) / (y1 - y0) : 0.5};
  };
  const auto tent = [](double s, double c, double w) { return std::max(0.0, 1.0 - std::abs(s - c) / w); };

  std::vector<Field> dict;
  const std::size_t tents = (count + 1) / 2;
  for (int level = 1; dict.size() < tents; ++level) {
    const double w = 1.0 / (level + 1);
    for (int j = 1; j <= level && dict.size() < tents; ++j) {
      const double c = static_cast<double>(j) / (level + 1);
      Field phi = interpolate(mesh, [&](const Vec2& x) {
        const Vec2 s = normalized(x);
        return two_d ? tent(s[0], c, w) * tent(s[1], 0.5, 0.5) : tent(s[0], c, w);
      });
      apply_dirichlet(phi);
      dict.push_back(std::move(phi));
    }
  }
  for (int k = 1; dict.size() < count; ++k) {
    Field phi = interpolate(mesh, [&](const Vec2& x) {
      const Vec2 s = normalized(x);
      const double sx = std::sin(k * std::numbers::pi * s[0]);
      return two_d ? sx * std::sin(std::numbers::pi * s[1]) : sx;
    });
    apply_dirichlet(phi);
    dict.push_back(std::move(phi));
  }
  return dict;
}

// ---------------------------------------------------------------------------
// Potential well
// ---------------------------------------------------------------------------

enum class WellStatus { Inside, OnNehari, Outside };

inline std::string to_string(WellStatus s) {
  switch (s) {
    case WellStatus::Inside: return "inside";
    case WellStatus::OnNehari: return "on_nehari";
    case WellStatus::Outside: return "outside";
  }
  return "?";
}

struct WellReport {
  double d_hat = 0.0;
  WellStatus status = WellStatus::Inside;
  double margin_E = 0.0;  // d_hat - E_p(u)
  double margin_I = 0.0;  // I_p(u)
};

inline constexpr double kNehariTol = 1e-9;
inline constexpr double kStrictTol = 1e-10;

/// Classifies u against W_p = {E_p < d_hat, I_p > 0} union {0}. The I_p
/// slack is relative to int |grad u|^p + |int f(u) u| so that states close
/// to extinction are still recognized as interior.
inline WellReport well_status(const Field& u, double p, const Nonlinearity& nl, double d_hat) {
  require_p(p);
  WellReport r;
  r.d_hat = d_hat;
  const double gp = gradient_power_integral(u, p);
  const double fu = integrate_nodes(*u.mesh, [&](std::size_t i) { return reaction(nl, u[i]) * u[i]; });
  const double E = gp / p - primitive_integral(u, nl);
  r.margin_I = gp - fu;
  r.margin_E = d_hat - E;
  if (is_zero(u)) {
    r.status = WellStatus::Inside;
    return r;
  }
  const double scale = gp + std::abs(fu);
  const bool below_level = std::isinf(d_hat) ? d_hat > 0 : r.margin_E > kStrictTol * (1.0 + std::abs(d_hat));
  if (std::abs(r.margin_I) <= kNehariTol * scale)
    r.status = WellStatus::OnNehari;
  else if (below_level && r.margin_I > kStrictTol * scale)
    r.status = WellStatus::Inside;
  else
    r.status = WellStatus::Outside;
  return r;
}

// ---------------------------------------------------------------------------
// Structural conditions on f
// ---------------------------------------------------------------------------

/// Log-spaced magnitudes in [lo, hi], `per_decade` points per decade, with
/// both signs.
inline std::vector<double> log_grid(double lo, double hi, int per_decade) {
  std::vector<double> g;
  const int n = static_cast<int>(std::round(std::log10(hi / lo) * per_decade));
  for (int k = 0; k <= n; ++k) {
    const double t = lo * std::pow(10.0, static_cast<double>(k) / per_decade);
    g.push_back(t);
    g.push_back(-t);
  }
  return g;
}

struct FConditionReport {
  double theta = 0.0;
  double f1_ratio_at_min = 0.0;      // |f(t)|/|t|^{p0-1} at the smallest |t|
  double f1_ratio_small_decade = 0.0;  // max over the smallest decade
  double f1_slope = 0.0;             // log-log slope of the ratio over the smallest decades
  bool f1_holds = false;
  double f2_min_slack = 0.0;  // min of f(t)t - theta F(t)
  bool f2_F_positive = false;
  bool f2_holds = false;
  double growth_exponent = 0.0;  // fitted q from |f| on the largest decade
  double f3_C = 0.0;
  bool f3_applicable = false;
  bool f3_holds = false;
};

inline FConditionReport check_f_conditions(const Nonlinearity& nl, double p0, const std::vector<double>& grid) {
  FConditionReport r;
  r.theta = theta(nl);
  double tmin = kInf, tmax = 0.0;
  for (double t : grid) {
    tmin = std::min(tmin, std::abs(t));
    tmax = std::max(tmax, std::abs(t));
  }
  const auto ratio = [&](double t) { return std::abs(reaction(nl, t)) / std::pow(std::abs(t), p0 - 1.0); };

  r.f1_ratio_at_min = std::max(ratio(tmin), ratio(-tmin));
  double small_max = 0.0;
  for (double t : grid)
    if (std::abs(t) <= 10.0 * tmin) small_max = std::max(small_max, ratio(t));
  r.f1_ratio_small_decade = small_max;
  const double r0 = std::max(ratio(tmin), ratio(-tmin));
  const double r2 = std::max(ratio(100.0 * tmin), ratio(-100.0 * tmin));
  if (r0 == 0.0) {
    r.f1_slope = kInf;
    r.f1_holds = true;
  } else {
    r.f1_slope = (std::log(r2) - std::log(r0)) / std::log(100.0);
    r.f1_holds = r.f1_slope > 1e-3;
  }

  r.f2_F_positive = true;
  r.f2_min_slack = kInf;
  bool slack_ok = true;
  const double th = std::isinf(r.theta) ? 1.0 : r.theta;
  for (double t : grid) {
    const auto v = evaluate(nl, t);
    if (!(v.F > 0.0)) r.f2_F_positive = false;
    const double slack = v.f * t - th * v.F;
    r.f2_min_slack = std::min(r.f2_min_slack, slack);
    if (slack < -1e-12 * std::abs(v.f * t)) slack_ok = false;
  }
  r.f2_holds = r.f2_F_positive && slack_ok && r.theta > 1.0;

  const double a = std::max(tmax / 10.0, tmin), b = tmax;
  const double fa = std::abs(reaction(nl, a)), fb = std::abs(reaction(nl, b));
  r.growth_exponent = (fa > 0.0 && fb > 0.0) ? 1.0 + std::log(fb / fa) / std::log(b / a) : 0.0;

  if (const auto gb = growth_bound(nl)) {
    r.f3_applicable = true;
    r.f3_C = gb->C;
    r.f3_holds = true;
    for (double t : grid)
      if (std::abs(reaction(nl, t)) > gb->C * (1.0 + std::pow(std::abs(t), gb->q - 1.0)) * (1.0 + 1e-12))
        r.f3_holds = false;
  }
  return r;
}

}  // namespace onelap
