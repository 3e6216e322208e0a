#pragma once

// Flux fields z = |grad u|_eps^{p-2} grad u, the discrete Green formula,
// the checkable conditions of the 1-Laplacian weak formulation, and the
// p -> 1+ continuation driver.

#include <algorithm>
#include <cmath>
#include <future>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "onelap/mesh.hpp"
#include "onelap/model.hpp"
#include "onelap/solver.hpp"

namespace onelap {

/// Element-wise vector field with its normal boundary trace and the nodal
/// divergence defined as the adjoint of the discrete gradient.
struct FluxField {
  MeshPtr mesh;
  std::vector<Vec2> z;
  std::vector<double> boundary_trace;  // [z, nu] per boundary node
  std::vector<double> div_z;           // per node
};

/// Builds traces and divergence for a given element field. Traces average
/// z.nu over the boundary facets touching a node, weighted by facet measure;
/// div_z then satisfies the Green formula exactly for every nodal w.
inline FluxField make_flux(const MeshPtr& mesh, std::vector<Vec2> z) {
  const Mesh& m = *mesh;
  if (z.size() != m.element_count()) throw std::invalid_argument("flux size does not match element count");
  FluxField f;
  f.mesh = mesh;
  f.z = std::move(z);

  std::vector<double> flux_out(m.boundary_nodes.size(), 0.0);
  for (const auto& facet : m.facets) {
    const double zn = dot(f.z[facet.element], facet.normal);
    for (std::size_t k = 0; k < facet.count; ++k) {
      const long b = m.boundary_slot[facet.nodes[k]];
      flux_out[static_cast<std::size_t>(b)] += facet.measure / facet.count * zn;
    }
  }
  f.boundary_trace.resize(m.boundary_nodes.size());
  for (std::size_t b = 0; b < m.boundary_nodes.size(); ++b) f.boundary_trace[b] = flux_out[b] / m.boundary_weights[b];

  std::vector<double> weak(m.node_count(), 0.0);  // int z . grad phi_i
  for (std::size_t e = 0; e < m.element_count(); ++e) {
    const Element& el = m.elements[e];
    for (std::size_t k = 0; k < el.count; ++k) weak[el.nodes[k]] += el.measure * dot(f.z[e], el.basis_grad[k]);
  }
  f.div_z.resize(m.node_count());
  for (std::size_t i = 0; i < m.node_count(); ++i) {
    const long b = m.boundary_slot[i];
    const double boundary = b >= 0 ? flux_out[static_cast<std::size_t>(b)] : 0.0;
    f.div_z[i] = (boundary - weak[i]) / m.quad_weights[i];
  }
  return f;
}

inline FluxField extract_flux(const Field& u, double p, double eps) {
  require_p(p);
  if (!(eps >= 0.0)) throw std::invalid_argument("eps must be non-negative");
  auto g = gradient(u);
  for (auto& v : g) {
    const double s = std::sqrt(dot(v, v) + eps * eps);
    const double c = s == 0.0 ? 0.0 : std::pow(s, p - 2.0);
    v = {c * v[0], c * v[1]};
  }
  return make_flux(u.mesh, std::move(g));
}

inline double max_abs_flux(const FluxField& f) {
  double m = 0.0;
  for (const auto& v : f.z) m = std::max(m, norm(v));
  return m;
}

inline double div_l2_norm(const FluxField& f) {
  return std::sqrt(integrate_nodes(*f.mesh, [&](std::size_t i) { return f.div_z[i] * f.div_z[i]; }));
}

/// Discrete L2 distance between two element fields on the same mesh.
inline double flux_distance(const FluxField& a, const FluxField& b) {
  if (a.mesh != b.mesh) throw std::invalid_argument("flux fields live on different meshes");
  return std::sqrt(integrate_elements(*a.mesh, [&](std::size_t e) {
    const Vec2 d{a.z[e][0] - b.z[e][0], a.z[e][1] - b.z[e][1]};
    return dot(d, d);
  }));
}

/// int z . grad u / int |grad u| over elements whose gradient exceeds
/// floor_rel * max |grad u|; 1 when that set is empty.
inline double flux_alignment(const FluxField& f, const Field& u, double floor_rel = 1e-6) {
  if (f.mesh != u.mesh) throw std::invalid_argument("flux and field live on different meshes");
  const auto g = gradient(u);
  double gmax = 0.0;
  for (const auto& v : g) gmax = std::max(gmax, norm(v));
  const double floor = floor_rel * gmax;
  double num = 0.0, den = 0.0;
  for (std::size_t e = 0; e < g.size(); ++e) {
    const double n = norm(g[e]);
    if (n <= floor || n == 0.0) continue;
    const double w = f.mesh->elements[e].measure;
    num += w * dot(f.z[e], g[e]);
    den += w * n;
  }
  return den == 0.0 ? 1.0 : num / den;
}

struct BoundarySignReport {
  double worst_deviation = 0.0;
  std::size_t worst_node = 0;
  std::size_t nodes_checked = 0;
  bool holds = true;
};

namespace detail {

// u just inside the boundary: mean of u over the interior nodes of the
// elements owning the facets at boundary node b.
inline std::vector<double> inner_boundary_values(const Field& u) {
  const Mesh& m = *u.mesh;
  std::vector<double> sum(m.boundary_nodes.size(), 0.0);
  std::vector<double> cnt(m.boundary_nodes.size(), 0.0);
  for (const auto& facet : m.facets) {
    const Element& el = m.elements[facet.element];
    double s = 0.0, c = 0.0;
    for (std::size_t k = 0; k < el.count; ++k) {
      if (m.is_boundary(el.nodes[k])) continue;
      s += u[el.nodes[k]];
      c += 1.0;
    }
    for (std::size_t k = 0; k < facet.count; ++k) {
      const auto b = static_cast<std::size_t>(m.boundary_slot[facet.nodes[k]]);
      sum[b] += s;
      cnt[b] += c;
    }
  }
  for (std::size_t b = 0; b < sum.size(); ++b) sum[b] = cnt[b] > 0.0 ? sum[b] / cnt[b] : 0.0;
  return sum;
}

}  // namespace detail

/// [z, nu] in sign(-u) on the boundary, with u taken just inside the
/// boundary. Where |u| <= tol only |[z, nu]| <= 1 + tol is required.
inline BoundarySignReport boundary_sign_check(const FluxField& f, const Field& u, double tol = 1e-8,
                                              double tol_sign = 0.05) {
  if (f.mesh != u.mesh) throw std::invalid_argument("flux and field live on different meshes");
  BoundarySignReport r;
  const auto inner = detail::inner_boundary_values(u);
  for (std::size_t b = 0; b < inner.size(); ++b) {
    const double trace = f.boundary_trace[b];
    double dev = 0.0;
    bool ok = true;
    if (std::abs(inner[b]) <= tol) {
      dev = std::max(0.0, std::abs(trace) - 1.0);
      ok = dev <= tol;
    } else {
      dev = std::abs(trace - (inner[b] > 0.0 ? -1.0 : 1.0));
      ok = dev <= tol_sign;
    }
    ++r.nodes_checked;
    if (!ok) r.holds = false;
    if (dev > r.worst_deviation) {
      r.worst_deviation = dev;
      r.worst_node = r.nodes_checked - 1;
    }
  }
  return r;
}

struct GreenTerms {
  double pairing = 0.0;   // int z . grad w
  double divergence = 0.0;  // int w div z
  double boundary = 0.0;  // int_{boundary} w [z, nu]
  double scale = 0.0;     // sum of absolute contributions
  double residual() const { return std::abs(pairing + divergence - boundary); }
};

inline GreenTerms green_terms(const FluxField& f, const Field& w) {
  if (f.mesh != w.mesh) throw std::invalid_argument("flux and field live on different meshes");
  const Mesh& m = *f.mesh;
  const auto g = gradient(w);
  GreenTerms t;
  for (std::size_t e = 0; e < m.element_count(); ++e) {
    const double v = m.elements[e].measure * dot(f.z[e], g[e]);
    t.pairing += v;
    t.scale += std::abs(v);
  }
  for (std::size_t i = 0; i < m.node_count(); ++i) {
    const double v = m.quad_weights[i] * w[i] * f.div_z[i];
    t.divergence += v;
    t.scale += std::abs(v);
  }
  for (std::size_t b = 0; b < m.boundary_nodes.size(); ++b) {
    const double v = m.boundary_weights[b] * w[m.boundary_nodes[b]] * f.boundary_trace[b];
    t.boundary += v;
    t.scale += std::abs(v);
  }
  return t;
}

/// |int z.grad w + int w div z - int_{boundary} w [z,nu]|
inline double green_residual(const FluxField& f, const Field& w) { return green_terms(f, w).residual(); }

struct RadialSupReport {
  double norm = 0.0;  // int |grad u| + int_{boundary} |u|
  double sup = 0.0;
  double worst_slack = kInf;  // min over nodes of r^{1-N} norm - |u(r)|
  double worst_radius = 0.0;
  bool holds = true;
};

/// sup |u(r)| <= r^{1-N} (int |Du| + int_{boundary} |u|) for radial fields
/// on an annulus (extension by zero).
inline RadialSupReport radial_sup_bound_check(const Field& u) {
  const auto* ann = std::get_if<Annulus>(&u.mesh->domain);
  if (!ann) throw std::invalid_argument("radial sup bound needs an annulus mesh");
  const Mesh& m = *u.mesh;
  RadialSupReport r;
  std::vector<double> trace(m.boundary_nodes.size());
  for (std::size_t b = 0; b < trace.size(); ++b) trace[b] = std::abs(u[m.boundary_nodes[b]]);
  r.norm = total_variation(u) + boundary_integrate(m, trace);
  for (std::size_t i = 0; i < m.node_count(); ++i) {
    const double radius = m.nodes[i][0];
    const double slack = std::pow(radius, 1 - ann->dim) * r.norm - std::abs(u[i]);
    r.sup = std::max(r.sup, std::abs(u[i]));
    if (slack < r.worst_slack) {
      r.worst_slack = slack;
      r.worst_radius = radius;
    }
  }
  r.holds = r.worst_slack >= -1e-12 * std::max(1.0, r.norm);
  return r;
}

/// E(u) = int |grad u| + int_{boundary} |u| - int F(u), the 1-Laplacian energy.
inline double one_laplacian_energy(const Field& u, const Nonlinearity& nl) {
  const Mesh& m = *u.mesh;
  std::vector<double> trace(m.boundary_nodes.size());
  for (std::size_t b = 0; b < trace.size(); ++b) trace[b] = std::abs(u[m.boundary_nodes[b]]);
  return total_variation(u) + boundary_integrate(m, trace) - primitive_integral(u, nl);
}

/// Slack in int|grad u| <= (1/p) int|grad u|^p + (p-1)/p |Omega|, as rhs - lhs.
inline double young_slack(const Field& u, double p) {
  const double lhs = total_variation(u);
  const double rhs = gradient_power_integral(u, p) / p + (p - 1.0) / p * u.mesh->volume();
  return rhs - lhs;
}

// ---------------------------------------------------------------------------
// Continuation p_m -> 1+
// ---------------------------------------------------------------------------

struct ContinuationPlan {
  std::vector<double> p_sequence;
  std::vector<double> eps_schedule;
  Field u0;
  Nonlinearity nl;
  SolverConfig cfg;  // p, eps and checkpoints are overwritten per member
  std::vector<double> checkpoints;
  std::vector<Field> dictionary;  // empty: 8 bumps plus the u0 direction
  double flux_tol = 0.05;         // max|z| <= 1 + flux_tol
  double alignment_floor = 1e-6;
  double alignment_min = 0.95;
  double sign_tol = 0.05;
  double energy_tol = 1e-3;  // relative slack in the energy inequality
  bool parallel = false;
};

/// p_m = 1 + 2^{-m}, eps_m = (p_m - 1)^2 for m = 1..m_max.
inline ContinuationPlan default_plan(const Field& u0, const Nonlinearity& nl, const SolverConfig& cfg, int m_max,
                                     std::vector<double> checkpoints) {
  ContinuationPlan plan;
  for (int m = 1; m <= m_max; ++m) {
    const double p = 1.0 + std::ldexp(1.0, -m);
    plan.p_sequence.push_back(p);
    plan.eps_schedule.push_back((p - 1.0) * (p - 1.0));
  }
  plan.u0 = u0;
  plan.nl = nl;
  plan.cfg = cfg;
  plan.checkpoints = std::move(checkpoints);
  return plan;
}

inline void validate(const ContinuationPlan& plan) {
  if (plan.p_sequence.empty()) throw std::invalid_argument("continuation needs at least one p");
  if (plan.eps_schedule.size() != plan.p_sequence.size())
    throw std::invalid_argument("eps schedule must have one entry per p");
  for (std::size_t i = 0; i < plan.p_sequence.size(); ++i) {
    if (!(plan.p_sequence[i] > 1.0)) throw std::invalid_argument("continuation exponents must exceed 1");
    if (i > 0 && !(plan.p_sequence[i] < plan.p_sequence[i - 1]))
      throw std::invalid_argument("continuation exponents must be strictly decreasing");
    if (!(plan.eps_schedule[i] >= 0.0)) throw std::invalid_argument("eps schedule entries must be non-negative");
    if (!(plan.p_sequence[i] < theta(plan.nl)))
      throw std::invalid_argument("continuation exponents must stay below theta");
  }
  if (!plan.u0.mesh) throw std::invalid_argument("continuation needs an initial field");
}

struct CheckpointRecord {
  double time = 0.0;
  double max_abs_z = 0.0;
  double gradient_bound = 0.0;  // (max |grad u|_eps)^{p-1}
  double alignment = 1.0;
  double boundary_sign = 0.0;
  double div_z_l2 = 0.0;
  double equation_residual = 0.0;  // relative L2 residual of u_t - div z - f(u) at interior nodes
  double young_slack = 0.0;
  double energy_residual = 0.0;  // dissipation + E(u) - E(u0), 1-Laplacian energy
  double flux_increment = -1.0;  // L2 distance to the previous member's flux; -1 if none
  FluxField flux;
};

struct MemberRecord {
  double p = 0.0;
  double eps = 0.0;
  TerminalStatus status;
  double d_hat = kInf;
  double grad_ceiling = kInf;      // theta p d_hat / (theta - p)
  double grad_bound_worst = 0.0;   // max_t int |grad u|^p
  double dissipation_total = 0.0;
  double p_energy_excess = 0.0;    // worst dissipation + E_p - E_p(u0)
  double max_abs_z = 0.0;
  double alignment_min = 1.0;  // 1 when no checkpoint was reached
  double boundary_sign_worst = 0.0;
  double energy_inequality_worst_residual = 0.0;
  double young_worst_slack = kInf;
  double flux_increment_max = -1.0;
  std::vector<CheckpointRecord> checkpoints;
  Trajectory trajectory;
};

struct Verdict {
  std::string name;
  bool holds = false;
  double value = 0.0;
  double tolerance = 0.0;
};

struct ContinuationReport {
  std::vector<MemberRecord> members;
  double E0 = 0.0;  // 1-Laplacian energy of u0
  double uniform_grad_bound = 0.0;  // max_m max_t int |grad u_m|^{p_m}
  double uniform_dissipation = 0.0;
  double d_hat_max = 0.0;
  std::vector<Verdict> verdicts;  // evaluated on the final member
};

namespace detail {

inline double equation_residual(const CheckpointState& cp, const FluxField& flux, const Nonlinearity& nl) {
  const Mesh& m = *cp.field.mesh;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m.node_count(); ++i) {
    if (m.is_boundary(i)) continue;
    const double ut = (cp.field[i] - cp.previous[i]) / cp.dt;
    const double res = ut - flux.div_z[i] - reaction(nl, cp.field[i]);
    num += m.quad_weights[i] * res * res;
    den += m.quad_weights[i] * (ut * ut + flux.div_z[i] * flux.div_z[i]);
  }
  return den == 0.0 ? 0.0 : std::sqrt(num / den);
}

inline MemberRecord run_member(const ContinuationPlan& plan, std::size_t m, const std::vector<Field>& dictionary) {
  MemberRecord rec;
  rec.p = plan.p_sequence[m];
  rec.eps = plan.eps_schedule[m];
  SolverConfig cfg = plan.cfg;
  cfg.p = rec.p;
  cfg.eps = rec.eps;
  cfg.checkpoints = plan.checkpoints;

  const MeshPtr& mesh = plan.u0.mesh;
  rec.d_hat = estimate_dp(*mesh, rec.p, plan.nl, dictionary);
  const double th = theta(plan.nl);
  rec.grad_ceiling = std::isinf(th) || std::isinf(rec.d_hat) ? kInf : th * rec.p * rec.d_hat / (th - rec.p);

  rec.trajectory = run(mesh, plan.u0, cfg, plan.nl, rec.d_hat);
  const Trajectory& traj = rec.trajectory;
  rec.status = traj.status;
  for (const auto& s : traj.snapshots) {
    rec.grad_bound_worst = std::max(rec.grad_bound_worst, s.grad_p);
    rec.dissipation_total = std::max(rec.dissipation_total, s.dissipation_cum);
  }
  rec.p_energy_excess = energy_inequality_audit(traj, plan.energy_tol).worst_excess;

  const double E0 = one_laplacian_energy(plan.u0, plan.nl);
  for (const auto& cp : traj.checkpoints) {
    CheckpointRecord c;
    c.time = cp.time;
    c.flux = extract_flux(cp.field, rec.p, rec.eps);
    c.max_abs_z = max_abs_flux(c.flux);
    double gmax = 0.0;
    for (const auto& g : gradient(cp.field)) gmax = std::max(gmax, std::sqrt(dot(g, g) + rec.eps * rec.eps));
    c.gradient_bound = std::pow(gmax, rec.p - 1.0);
    c.alignment = flux_alignment(c.flux, cp.field, plan.alignment_floor);
    c.boundary_sign = boundary_sign_check(c.flux, cp.field, 1e-8, plan.sign_tol).worst_deviation;
    c.div_z_l2 = div_l2_norm(c.flux);
    c.equation_residual = equation_residual(cp, c.flux, plan.nl);
    c.young_slack = young_slack(cp.field, rec.p);
    std::size_t k = 0;
    while (k + 1 < traj.times.size() && traj.times[k] < cp.time) ++k;
    c.energy_residual = traj.snapshots[k].dissipation_cum + one_laplacian_energy(cp.field, plan.nl) - E0;

    rec.max_abs_z = std::max(rec.max_abs_z, c.max_abs_z);
    rec.alignment_min = rec.checkpoints.empty() ? c.alignment : std::min(rec.alignment_min, c.alignment);
    rec.boundary_sign_worst = std::max(rec.boundary_sign_worst, c.boundary_sign);
    rec.young_worst_slack = std::min(rec.young_worst_slack, c.young_slack);
    rec.energy_inequality_worst_residual =
        rec.checkpoints.empty() ? c.energy_residual : std::max(rec.energy_inequality_worst_residual, c.energy_residual);
    rec.checkpoints.push_back(std::move(c));
  }
  return rec;
}

}  // namespace detail

inline ContinuationReport run_continuation(const ContinuationPlan& plan) {
  validate(plan);
  std::vector<Field> dictionary = plan.dictionary;
  if (dictionary.empty()) {
    dictionary = bump_dictionary(plan.u0.mesh, 8);
    if (!is_zero(plan.u0)) dictionary.push_back(plan.u0);
  }

  ContinuationReport report;
  report.E0 = one_laplacian_energy(plan.u0, plan.nl);
  const std::size_t count = plan.p_sequence.size();
  report.members.resize(count);
  if (plan.parallel) {
    std::vector<std::future<MemberRecord>> jobs;
    for (std::size_t m = 0; m < count; ++m)
      jobs.push_back(std::async(std::launch::async, [&plan, &dictionary, m] { return detail::run_member(plan, m, dictionary); }));
    for (std::size_t m = 0; m < count; ++m) report.members[m] = jobs[m].get();
  } else {
    for (std::size_t m = 0; m < count; ++m) report.members[m] = detail::run_member(plan, m, dictionary);
  }

  // Cauchy increments of the checkpoint fluxes across consecutive members.
  for (std::size_t m = 1; m < count; ++m) {
    auto& cur = report.members[m];
    const auto& prev = report.members[m - 1];
    for (auto& c : cur.checkpoints) {
      for (const auto& pc : prev.checkpoints) {
        if (pc.time != c.time) continue;
        c.flux_increment = flux_distance(c.flux, pc.flux);
        cur.flux_increment_max = std::max(cur.flux_increment_max, c.flux_increment);
      }
    }
  }

  for (const auto& rec : report.members) {
    report.uniform_grad_bound = std::max(report.uniform_grad_bound, rec.grad_bound_worst);
    report.uniform_dissipation = std::max(report.uniform_dissipation, rec.dissipation_total);
    report.d_hat_max = std::max(report.d_hat_max, rec.d_hat);
  }

  const MemberRecord& last = report.members.back();
  const double energy_allow = plan.energy_tol * (1.0 + std::abs(report.E0));
  report.verdicts = {
      {"flux_bound", last.max_abs_z <= 1.0 + plan.flux_tol, last.max_abs_z, 1.0 + plan.flux_tol},
      {"flux_alignment", last.alignment_min >= plan.alignment_min, last.alignment_min, plan.alignment_min},
      {"boundary_sign", last.boundary_sign_worst <= plan.sign_tol, last.boundary_sign_worst, plan.sign_tol},
      {"energy_inequality", last.energy_inequality_worst_residual <= energy_allow,
       last.energy_inequality_worst_residual, energy_allow},
  };
  return report;
}

}  // namespace onelap
