#pragma once

// Semi-implicit time stepping of u_t - div(|grad u|^{p-2} grad u) = f(u)
// with homogeneous Dirichlet data, energy accounting, blow-up/extinction
// detection and the trajectory audits.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "onelap/mesh.hpp"
#include "onelap/model.hpp"

namespace onelap {

struct SolverConfig {
  double p = 2.0;
  double eps = 1e-4;  // gradient regularization |g|_eps = sqrt(|g|^2 + eps^2)
  double dt0 = 1e-3;
  double dt_min = 1e-12;
  double T_end = 1.0;
  double U_max = 1e6;
  double tol_ext = 1e-8;
  double energy_residual_tol = 1e-6;
  bool adapt = true;
  std::size_t store_stride = 10;
  std::vector<double> checkpoints;
  std::size_t max_steps = 5'000'000;
};

inline void validate(const SolverConfig& c) {
  if (!(c.p > 1.0)) throw std::invalid_argument("p must satisfy p > 1");
  if (!(c.eps >= 0.0)) throw std::invalid_argument("eps must be non-negative");
  if (!(c.dt_min > 0.0 && c.dt_min < c.dt0)) throw std::invalid_argument("need 0 < dt_min < dt0");
  if (!(c.dt0 <= c.T_end)) throw std::invalid_argument("need dt0 <= T_end");
  if (!(c.U_max > 0.0)) throw std::invalid_argument("U_max must be positive");
  if (!(c.tol_ext >= 0.0)) throw std::invalid_argument("tol_ext must be non-negative");
  if (!(c.energy_residual_tol > 0.0)) throw std::invalid_argument("energy_residual_tol must be positive");
  if (c.store_stride == 0) throw std::invalid_argument("store_stride must be at least 1");
  for (std::size_t i = 0; i < c.checkpoints.size(); ++i) {
    if (!(c.checkpoints[i] > 0.0 && c.checkpoints[i] <= c.T_end))
      throw std::invalid_argument("checkpoints must lie in (0, T_end]");
    if (i > 0 && !(c.checkpoints[i] > c.checkpoints[i - 1]))
      throw std::invalid_argument("checkpoints must be strictly increasing");
  }
}

enum class StepOutcome { Accepted, DtUnderflow, SolveFailure };

struct StepResult {
  Field state;
  double dt_used = 0.0;
  double residual = 0.0;     // |du/dt|_2^2 dt + E(new) - E(old)
  double dissipation = 0.0;  // |du/dt|_2^2 dt
  double energy = 0.0;       // regularized energy of the new state
  StepOutcome outcome = StepOutcome::Accepted;
  std::string message;
};

namespace detail {

inline double lagged_coefficient(const Vec2& g, double p, double eps) {
  const double s = dot(g, g) + eps * eps;
  if (p == 2.0) return 1.0;
  return std::pow(s, 0.5 * (p - 2.0));
}

}  // namespace detail

/// One step of fixed size: diffusion coefficients frozen at the current
/// state, implicit linear diffusion solve, explicit reaction.
inline StepResult try_step(const Field& state, double dt, const SolverConfig& cfg, const Nonlinearity& nl,
                           std::optional<double> energy_old = std::nullopt) {
  StepResult r;
  r.dt_used = dt;
  if (is_zero(state) && reaction(nl, 0.0) == 0.0) {
    r.state = state;
    r.energy = energy(state, cfg.p, nl, cfg.eps);
    return r;
  }
  const Mesh& m = *state.mesh;
  const std::size_t n = m.node_count();
  std::vector<long> unknown(n, -1);
  long count = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (!m.is_boundary(i)) unknown[i] = count++;

  const auto g = gradient(state);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(m.element_count() * 9 + static_cast<std::size_t>(count));
  for (std::size_t e = 0; e < m.element_count(); ++e) {
    const Element& el = m.elements[e];
    const double c = el.measure * detail::lagged_coefficient(g[e], cfg.p, cfg.eps);
    if (!std::isfinite(c)) {
      r.outcome = StepOutcome::SolveFailure;
      r.message = "non-finite diffusion coefficient (zero gradient with eps = 0?)";
      return r;
    }
    for (std::size_t a = 0; a < el.count; ++a) {
      const long ia = unknown[el.nodes[a]];
      if (ia < 0) continue;
      for (std::size_t b = 0; b < el.count; ++b) {
        const long ib = unknown[el.nodes[b]];
        if (ib < 0) continue;
        trip.emplace_back(ia, ib, c * dot(el.basis_grad[a], el.basis_grad[b]));
      }
    }
  }
  Eigen::VectorXd rhs(count);
  for (std::size_t i = 0; i < n; ++i) {
    const long k = unknown[i];
    if (k < 0) continue;
    trip.emplace_back(k, k, m.quad_weights[i] / dt);
    rhs[k] = m.quad_weights[i] * (state[i] / dt + reaction(nl, state[i]));
  }
  Eigen::SparseMatrix<double> A(count, count);
  A.setFromTriplets(trip.begin(), trip.end());

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
  if (solver.info() != Eigen::Success) {
    r.outcome = StepOutcome::SolveFailure;
    r.message = "sparse factorization failed";
    return r;
  }
  Eigen::VectorXd x = solver.solve(rhs);
  // normwise relative residual |Ax - b| / (|A| |x| + |b|), with a couple of
  // refinement sweeps for the stiff near-degenerate coefficients
  double a_norm = 0.0;
  for (int k = 0; k < A.outerSize(); ++k) {
    double col = 0.0;
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it) col += std::abs(it.value());
    a_norm = std::max(a_norm, col);
  }
  const auto backward_error = [&](const Eigen::VectorXd& y) {
    const double denom = a_norm * y.lpNorm<Eigen::Infinity>() + rhs.lpNorm<Eigen::Infinity>();
    return denom > 0.0 ? (A * y - rhs).lpNorm<Eigen::Infinity>() / denom : 0.0;
  };
  for (int sweep = 0; sweep < 2 && backward_error(x) > 1e-14; ++sweep) x += solver.solve(rhs - A * x);
  if (solver.info() != Eigen::Success || !(backward_error(x) <= 1e-10)) {
    r.outcome = StepOutcome::SolveFailure;
    r.message = "linear solve did not reach relative residual 1e-10";
    return r;
  }

  r.state = Field(state.mesh);
  for (std::size_t i = 0; i < n; ++i)
    if (unknown[i] >= 0) r.state[i] = x[unknown[i]];
  double diss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = r.state[i] - state[i];
    diss += m.quad_weights[i] * d * d;
  }
  r.dissipation = diss / dt;
  r.energy = energy(r.state, cfg.p, nl, cfg.eps);
  const double e_old = energy_old ? *energy_old : energy(state, cfg.p, nl, cfg.eps);
  r.residual = r.dissipation + r.energy - e_old;
  return r;
}

inline bool finite_field(const Field& u) {
  for (double v : u.values)
    if (!std::isfinite(v)) return false;
  return true;
}

/// Adaptive step starting from `dt`: halves until the dissipation residual
/// satisfies |residual| <= energy_residual_tol (1 + |E|) or dt drops below
/// dt_min. Without adaptation the first attempt is returned as is.
inline StepResult step(const Field& state, double t, double dt, const SolverConfig& cfg, const Nonlinearity& nl) {
  (void)t;
  if (!is_dirichlet(state)) throw std::invalid_argument("state must vanish on the boundary");
  const double e_old = energy(state, cfg.p, nl, cfg.eps);
  while (true) {
    StepResult r = try_step(state, dt, cfg, nl, e_old);
    if (r.outcome == StepOutcome::SolveFailure) return r;
    const bool finite = finite_field(r.state) && std::isfinite(r.residual);
    if (!cfg.adapt) {
      if (!finite) {
        r.outcome = StepOutcome::SolveFailure;
        r.message = "non-finite state";
      }
      return r;
    }
    if (finite && std::abs(r.residual) <= cfg.energy_residual_tol * (1.0 + std::abs(r.energy))) return r;
    dt *= 0.5;
    if (dt < cfg.dt_min) {
      r.outcome = StepOutcome::DtUnderflow;
      r.dt_used = dt;
      r.message = "time step fell below dt_min";
      return r;
    }
  }
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

enum class RunStatus { Completed, Extinct, BlowUp, StepFailure };

inline std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Completed: return "completed";
    case RunStatus::Extinct: return "extinct";
    case RunStatus::BlowUp: return "blow_up";
    case RunStatus::StepFailure: return "step_failure";
  }
  return "?";
}

struct TerminalStatus {
  RunStatus kind = RunStatus::Completed;
  double time = 0.0;
  bool dt_underflow = false;
  std::string detail;
};

struct StoredState {
  double time = 0.0;
  Field field;
};

struct CheckpointState {
  double time = 0.0;
  Field field;
  Field previous;  // state one step earlier
  double dt = 0.0;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<EnergySnapshot> snapshots;
  std::vector<double> dts;        // dt of the step ending at times[k]; 0 for k = 0
  std::vector<double> residuals;  // dissipation residual of that step
  std::vector<StoredState> states;
  std::vector<CheckpointState> checkpoints;
  TerminalStatus status;
  double p = 2.0;
  double eps = 0.0;
  double d_hat = kInf;

  double dt_max() const {
    double m = 0.0;
    for (double d : dts) m = std::max(m, d);
    return m;
  }
};

inline Trajectory run(const MeshPtr& mesh, const Field& u0, const SolverConfig& cfg, const Nonlinearity& nl,
                      double d_hat) {
  validate(cfg);
  if (u0.mesh != mesh) throw std::invalid_argument("initial field lives on a different mesh");
  if (!is_dirichlet(u0)) throw std::invalid_argument("initial field must vanish on the boundary");

  Trajectory traj;
  traj.p = cfg.p;
  traj.eps = cfg.eps;
  traj.d_hat = d_hat;

  double t = 0.0;
  double dissipation = 0.0;
  Field u = u0;
  const auto record = [&](double dt, double residual) {
    traj.times.push_back(t);
    traj.snapshots.push_back(take_snapshot(u, t, cfg.p, nl, dissipation));
    traj.dts.push_back(dt);
    traj.residuals.push_back(residual);
  };
  record(0.0, 0.0);
  traj.states.push_back({0.0, u});

  const double s0 = sup_norm(u);
  if (s0 <= cfg.tol_ext) {
    traj.status = {RunStatus::Extinct, 0.0, false, "initial state below extinction threshold"};
    return traj;
  }
  if (s0 > cfg.U_max) {
    traj.status = {RunStatus::BlowUp, 0.0, false, "initial state above U_max"};
    return traj;
  }

  std::size_t next_cp = 0;
  double dt = cfg.dt0;
  std::size_t steps = 0;
  bool finished = false;
  const double t_tol = 1e-12 * std::max(1.0, cfg.T_end);
  while (!finished) {
    if (t >= cfg.T_end - t_tol) {
      traj.status = {RunStatus::Completed, cfg.T_end, false, ""};
      break;
    }
    if (++steps > cfg.max_steps) {
      traj.status = {RunStatus::StepFailure, t, false, "step budget exhausted"};
      break;
    }
    double target = cfg.T_end;
    if (next_cp < cfg.checkpoints.size()) target = std::min(target, cfg.checkpoints[next_cp]);
    const double dt_try = std::min(dt, target - t);
    const bool clamped = dt_try < dt;

    StepResult r = step(u, t, dt_try, cfg, nl);
    if (r.outcome == StepOutcome::DtUnderflow) {
      traj.status = {RunStatus::BlowUp, t, true, r.message};
      break;
    }
    if (r.outcome == StepOutcome::SolveFailure) {
      traj.status = {RunStatus::StepFailure, t, false, r.message};
      break;
    }

    Field previous = std::move(u);
    u = std::move(r.state);
    dissipation += r.dissipation;
    const bool reached_target = r.dt_used == dt_try && dt_try == target - t;
    t = reached_target ? target : t + r.dt_used;
    if (std::abs(t - target) <= t_tol) t = target;
    record(r.dt_used, r.residual);

    bool hit_cp = false;
    if (next_cp < cfg.checkpoints.size() && t == cfg.checkpoints[next_cp]) {
      traj.checkpoints.push_back({t, u, previous, r.dt_used});
      ++next_cp;
      hit_cp = true;
    }

    const double s = traj.snapshots.back().sup;
    if (s > cfg.U_max) {
      traj.status = {RunStatus::BlowUp, t, false, "sup norm exceeded U_max"};
      finished = true;
    } else if (s <= cfg.tol_ext) {
      traj.status = {RunStatus::Extinct, t, false, ""};
      finished = true;
    }
    if (hit_cp || finished || (traj.times.size() - 1) % cfg.store_stride == 0) {
      if (traj.states.back().time != t) traj.states.push_back({t, u});
    }

    if (cfg.adapt) {
      if (r.dt_used < dt_try) {
        dt = r.dt_used;
      } else if (!clamped &&
                 std::abs(r.residual) <= 0.25 * cfg.energy_residual_tol * (1.0 + std::abs(r.energy))) {
        dt = std::min(2.0 * dt, cfg.dt0);
      }
    }
  }
  if (traj.states.back().time != t) traj.states.push_back({t, u});
  return traj;
}

/// Maximal existence time as realized by the detectors: the first time the
/// sup norm exceeded U_max or the step size underflowed; infinite otherwise.
inline double detect_tmax(const Trajectory& traj, const SolverConfig& cfg) {
  for (std::size_t k = 0; k < traj.snapshots.size(); ++k)
    if (traj.snapshots[k].sup > cfg.U_max) return traj.times[k];
  if (traj.status.kind == RunStatus::BlowUp && traj.status.dt_underflow) return traj.status.time;
  return kInf;
}

// ---------------------------------------------------------------------------
// Audits. They report; they never throw on a violated property.
// ---------------------------------------------------------------------------

struct WellAudit {
  bool all_inside = true;
  std::size_t states_checked = 0;
  double worst_margin_E = kInf;
  double worst_margin_I = kInf;
  struct Violation {
    double time = 0.0;
    WellStatus status = WellStatus::Outside;
    double margin_E = 0.0;
    double margin_I = 0.0;
  };
  std::optional<Violation> first_violation;
};

inline WellAudit well_invariance_audit(const Trajectory& traj, double p, const Nonlinearity& nl, double d_hat) {
  WellAudit a;
  for (const auto& s : traj.states) {
    const WellReport w = well_status(s.field, p, nl, d_hat);
    ++a.states_checked;
    if (!is_zero(s.field)) {
      a.worst_margin_E = std::min(a.worst_margin_E, w.margin_E);
      a.worst_margin_I = std::min(a.worst_margin_I, w.margin_I);
    }
    if (w.status != WellStatus::Inside) {
      a.all_inside = false;
      if (!a.first_violation) a.first_violation = WellAudit::Violation{s.time, w.status, w.margin_E, w.margin_I};
    }
  }
  return a;
}

struct L2Audit {
  bool nehari_positive = true;  // I_p > 0 (or u = 0) at every snapshot
  bool monotone = true;
  bool bounded_by_initial = true;
  double max_increase = 0.0;           // max_k (|u_{k+1}| - |u_k|)
  double max_excess_over_initial = 0.0;  // max_k (|u_k| - |u_0|)
  double identity_max_deviation = 0.0;   // max_k |(|u_{k+1}|^2 - |u_k|^2)/(2 dt) + I_p(u_{k+1})|
  double identity_scale = 0.0;           // max_k |I_p(u_k)|
};

inline L2Audit l2_audit(const Trajectory& traj, double slack = 1e-8) {
  L2Audit a;
  const auto& s = traj.snapshots;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (!(s[k].I_p > 0.0 || s[k].sup == 0.0)) a.nehari_positive = false;
    a.identity_scale = std::max(a.identity_scale, std::abs(s[k].I_p));
    a.max_excess_over_initial = std::max(a.max_excess_over_initial, s[k].l2 - s[0].l2);
    if (k + 1 < s.size()) {
      a.max_increase = std::max(a.max_increase, s[k + 1].l2 - s[k].l2);
      const double dt = traj.dts[k + 1];
      if (dt > 0.0) {
        const double lhs = 0.5 * (s[k + 1].l2 * s[k + 1].l2 - s[k].l2 * s[k].l2) / dt;
        a.identity_max_deviation = std::max(a.identity_max_deviation, std::abs(lhs + s[k + 1].I_p));
      }
    }
  }
  a.monotone = a.max_increase <= slack;
  a.bounded_by_initial = a.max_excess_over_initial <= slack;
  return a;
}

struct GradientBoundAudit {
  double bound = 0.0;  // theta p d_hat / (theta - p)
  double worst_margin = kInf;  // min_k bound - int |grad u_k|^p
  double max_grad_p = 0.0;
  double dissipation_total = 0.0;
  double dissipation_margin = kInf;  // d_hat - dissipation_total
  bool holds = true;
};

inline GradientBoundAudit gradient_bound_audit(const Trajectory& traj, double p, double theta_value, double d_hat) {
  if (!(theta_value > p)) throw std::invalid_argument("gradient bound needs theta > p");
  GradientBoundAudit a;
  a.bound = std::isinf(theta_value) ? p * d_hat : theta_value * p * d_hat / (theta_value - p);
  for (const auto& s : traj.snapshots) {
    a.max_grad_p = std::max(a.max_grad_p, s.grad_p);
    a.dissipation_total = std::max(a.dissipation_total, s.dissipation_cum);
  }
  a.worst_margin = a.bound - a.max_grad_p;
  a.dissipation_margin = d_hat - a.dissipation_total;
  const double tol = 1e-10 * (1.0 + std::abs(a.bound));
  a.holds = a.worst_margin > -tol && a.dissipation_margin > -1e-10 * (1.0 + std::abs(d_hat));
  return a;
}

struct EnergyAudit {
  double E0 = 0.0;
  double worst_excess = -kInf;  // max_k dissipation_k + E_p(u_k) - E_p(u_0)
  double K = 0.0;               // smallest K with excess <= K dt_max t
  double max_abs_residual = 0.0;
  bool holds = true;
};

inline EnergyAudit energy_inequality_audit(const Trajectory& traj, double rel_tol) {
  EnergyAudit a;
  const auto& s = traj.snapshots;
  a.E0 = s.front().E_p;
  const double dtm = traj.dt_max();
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double excess = s[k].dissipation_cum + s[k].E_p - a.E0;
    a.worst_excess = std::max(a.worst_excess, excess);
    if (k > 0 && dtm > 0.0 && excess > 0.0) a.K = std::max(a.K, excess / (dtm * s[k].time));
    a.max_abs_residual = std::max(a.max_abs_residual, std::abs(traj.residuals[k]));
  }
  a.holds = a.worst_excess <= rel_tol * (1.0 + std::abs(a.E0));
  return a;
}

}  // namespace onelap
