#pragma once

// Config-driven runs: initial profiles, artifacts (trajectory CSV, state
// dumps, summary and continuation JSON) and exit codes.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "onelap/config.hpp"
#include "onelap/format.hpp"
#include "onelap/limit.hpp"

namespace onelap {

constexpr const char* kCodeVersion = "onelap 0.1.0";
constexpr int kOutputFormatVersion = 1;

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitBlowUp = 2, kExitStepFailure = 3, kExitIo = 4 };

inline int exit_code(RunStatus s) {
  switch (s) {
    case RunStatus::Completed:
    case RunStatus::Extinct: return kExitOk;
    case RunStatus::BlowUp: return kExitBlowUp;
    case RunStatus::StepFailure: return kExitStepFailure;
  }
  return kExitStepFailure;
}

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Canonical JSON: sorted keys (nlohmann's default std::map objects), floats
// at 17 significant digits, non-finite floats as strings.
// ---------------------------------------------------------------------------

using Json = nlohmann::json;

inline Json jnum(double x) {
  if (std::isfinite(x)) return x;
  return fmt_g17(x);
}

namespace detail {

inline void write_string(std::ostream& os, const std::string& s) { os << Json(s).dump(); }

inline void write_canonical(std::ostream& os, const Json& j, int depth) {
  const std::string pad(2 * (depth + 1), ' ');
  const std::string close(2 * depth, ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) os << ",\n";
        first = false;
        os << pad;
        write_string(os, it.key());
        os << ": ";
        write_canonical(os, it.value(), depth + 1);
      }
      os << '\n' << close << '}';
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      os << "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) os << ",\n";
        os << pad;
        write_canonical(os, j[i], depth + 1);
      }
      os << '\n' << close << ']';
      return;
    }
    case Json::value_t::number_float: {
      const double x = j.get<double>();
      if (std::isfinite(x))
        os << fmt_g17(x);
      else
        write_string(os, fmt_g17(x));
      return;
    }
    default: os << j.dump();
  }
}

}  // namespace detail

inline std::string canonical_json(const Json& j) {
  std::ostringstream os;
  detail::write_canonical(os, j, 0);
  os << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Setup
// ---------------------------------------------------------------------------

inline MeshPtr build_mesh(const RunConfig& cfg) { return build_mesh(cfg.domain, cfg.resolution); }

namespace detail {

// Coordinates of x mapped to [0,1] per axis.
inline Vec2 unit_coords(const Domain& d, const Vec2& x) {
  if (const auto* i = std::get_if<Interval>(&d)) return {x[0] / i->length, 0.0};
  if (const auto* a = std::get_if<Annulus>(&d)) return {(x[0] - a->inner) / (a->outer - a->inner), 0.0};
  const auto& r = std::get<Rectangle>(d);
  return {x[0] / r.width, x[1] / r.height};
}

inline double tent(double s) { return std::max(0.0, 1.0 - std::abs(2.0 * s - 1.0)); }

}  // namespace detail

inline std::vector<Field> dictionary_for(const MeshPtr& mesh, const RunConfig& cfg, const Field* u0) {
  auto dict = bump_dictionary(mesh, cfg.audit.dictionary_size);
  if (u0 && !is_zero(*u0)) dict.push_back(*u0);
  return dict;
}

/// Builds u0 from the named profile; throws ConfigError or IoError.
inline Field build_initial(const MeshPtr& mesh, const RunConfig& cfg) {
  const InitialSpec& s = cfg.initial;
  const bool planar = std::holds_alternative<Rectangle>(cfg.domain);
  Field u(mesh);
  if (s.profile == "flat") {
    u = interpolate(mesh, [&](const Vec2&) { return s.value; });
  } else if (s.profile == "hat") {
    u = interpolate(mesh, [&](const Vec2& x) {
      const Vec2 c = detail::unit_coords(cfg.domain, x);
      return s.amplitude * (planar ? std::min(detail::tent(c[0]), detail::tent(c[1])) : detail::tent(c[0]));
    });
  } else if (s.profile == "bump") {
    u = interpolate(mesh, [&](const Vec2& x) {
      const Vec2 c = detail::unit_coords(cfg.domain, x);
      const double dx = c[0] - s.center;
      const double dy = planar ? c[1] - s.center : 0.0;
      const double r = std::sqrt(dx * dx + dy * dy) / s.width;
      if (r >= 1.0) return 0.0;
      const double v = std::cos(0.5 * std::numbers::pi * r);
      return s.amplitude * v * v;
    });
  } else if (s.profile == "nehari") {
    const auto dict = bump_dictionary(mesh, cfg.audit.dictionary_size);
    if (static_cast<std::size_t>(s.index) >= dict.size())
      throw ConfigError("initial.index", "dictionary has only " + std::to_string(dict.size()) + " entries");
    const double p = cfg.continuation.enabled ? cfg.continuation.p_sequence.front() : cfg.solver.p;
    const auto t = try_nehari_scale(dict[s.index], p, cfg.nl);
    if (!t) throw ConfigError("initial.profile", "no Nehari point along the chosen direction");
    u = scaled(dict[s.index], s.scale * *t);
  } else if (s.profile == "file") {
    std::ifstream in(s.path);
    if (!in) throw IoError("cannot read initial state '" + s.path + "'");
    try {
      u = read_state(in, mesh);
    } catch (const std::exception& e) {
      throw IoError("initial state '" + s.path + "': " + e.what());
    }
  }
  apply_dirichlet(u);
  return u;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "# onelap trajectory format_version=" << kOutputFormatVersion << " p=" << fmt_g17(traj.p)
     << " eps=" << fmt_g17(traj.eps) << '\n';
  os << "t,E_p,I_p,tv,l2,sup,dissipation_cum,dt\n";
  for (std::size_t k = 0; k < traj.snapshots.size(); ++k) {
    const auto& s = traj.snapshots[k];
    os << fmt_g17(s.time) << ',' << fmt_g17(s.E_p) << ',' << fmt_g17(s.I_p) << ',' << fmt_g17(s.tv) << ','
       << fmt_g17(s.l2) << ',' << fmt_g17(s.sup) << ',' << fmt_g17(s.dissipation_cum) << ',' << fmt_g17(traj.dts[k])
       << '\n';
  }
}

inline Json snapshot_json(const EnergySnapshot& s) {
  return {{"time", jnum(s.time)}, {"E_p", jnum(s.E_p)},   {"I_p", jnum(s.I_p)},
          {"tv", jnum(s.tv)},     {"l2", jnum(s.l2)},     {"sup", jnum(s.sup)},
          {"grad_p", jnum(s.grad_p)}, {"dissipation_cum", jnum(s.dissipation_cum)}};
}

inline Json continuation_json(const ContinuationReport& r, const ContinuationPlan& plan) {
  Json members = Json::array();
  for (std::size_t m = 0; m < r.members.size(); ++m) {
    const auto& rec = r.members[m];
    Json cps = Json::array();
    for (const auto& c : rec.checkpoints) {
      cps.push_back({{"time", jnum(c.time)},
                     {"max_abs_z", jnum(c.max_abs_z)},
                     {"gradient_bound", jnum(c.gradient_bound)},
                     {"alignment", jnum(c.alignment)},
                     {"boundary_sign", jnum(c.boundary_sign)},
                     {"div_z_l2", jnum(c.div_z_l2)},
                     {"equation_residual", jnum(c.equation_residual)},
                     {"young_slack", jnum(c.young_slack)},
                     {"energy_residual", jnum(c.energy_residual)},
                     {"flux_increment", c.flux_increment < 0 ? Json("none") : jnum(c.flux_increment)}});
    }
    members.push_back({{"m", m + 1},
                       {"p", jnum(rec.p)},
                       {"eps", jnum(rec.eps)},
                       {"status", to_string(rec.status.kind)},
                       {"status_time", jnum(rec.status.time)},
                       {"max_abs_z", jnum(rec.max_abs_z)},
                       {"alignment_min", jnum(rec.alignment_min)},
                       {"boundary_sign_worst", jnum(rec.boundary_sign_worst)},
                       {"grad_bound_worst", jnum(rec.grad_bound_worst)},
                       {"grad_ceiling", jnum(rec.grad_ceiling)},
                       {"dissipation_total", jnum(rec.dissipation_total)},
                       {"d_hat", jnum(rec.d_hat)},
                       {"energy_inequality_worst_residual", jnum(rec.energy_inequality_worst_residual)},
                       {"p_energy_excess", jnum(rec.p_energy_excess)},
                       {"young_worst_slack", jnum(rec.young_worst_slack)},
                       {"flux_increment_max", rec.flux_increment_max < 0 ? Json("none") : jnum(rec.flux_increment_max)},
                       {"checkpoints", cps}});
  }
  Json verdicts = Json::object();
  for (const auto& v : r.verdicts)
    verdicts[v.name] = {{"holds", v.holds}, {"value", jnum(v.value)}, {"tolerance", jnum(v.tolerance)}};
  Json cp_times = Json::array();
  for (double t : plan.checkpoints) cp_times.push_back(jnum(t));
  return {{"format_version", kOutputFormatVersion},
          {"members", members},
          {"E0", jnum(r.E0)},
          {"uniform_grad_bound", jnum(r.uniform_grad_bound)},
          {"uniform_dissipation", jnum(r.uniform_dissipation)},
          {"d_hat_max", jnum(r.d_hat_max)},
          {"checkpoints", cp_times},
          {"verdicts", verdicts},
          {"tolerances",
           {{"flux_tol", jnum(plan.flux_tol)},
            {"alignment_min", jnum(plan.alignment_min)},
            {"alignment_floor", jnum(plan.alignment_floor)},
            {"sign_tol", jnum(plan.sign_tol)},
            {"energy_tol", jnum(plan.energy_tol)}}}};
}

// ---------------------------------------------------------------------------
// Audits and summary
// ---------------------------------------------------------------------------

struct ExperimentResult {
  int exit_code = kExitOk;
  Json summary;
  std::string message;
};

namespace detail {

inline Json audits_json(const RunConfig& cfg, const Trajectory& traj, const Field& u0, double d_hat,
                        std::vector<std::string>& violations) {
  const double p = traj.p;
  const double th = theta(cfg.nl);
  const WellReport w0 = well_status(u0, p, cfg.nl, d_hat);
  const bool inside0 = w0.status == WellStatus::Inside;
  const bool run_preconditioned = inside0 || cfg.audit.strict;
  Json a = Json::object();

  if (!cfg.audit.well) {
    a["well_invariance"] = "skipped";
  } else if (!run_preconditioned) {
    a["well_invariance"] = "skipped";
  } else {
    const auto r = well_invariance_audit(traj, p, cfg.nl, d_hat);
    Json j = {{"all_inside", r.all_inside},
              {"states_checked", r.states_checked},
              {"worst_margin_E", jnum(r.worst_margin_E)},
              {"worst_margin_I", jnum(r.worst_margin_I)}};
    if (r.first_violation)
      j["first_violation"] = {{"time", jnum(r.first_violation->time)},
                              {"status", to_string(r.first_violation->status)},
                              {"margin_E", jnum(r.first_violation->margin_E)},
                              {"margin_I", jnum(r.first_violation->margin_I)}};
    else
      j["first_violation"] = "none";
    if (!r.all_inside) violations.push_back("well_invariance");
    a["well_invariance"] = j;
  }

  if (!cfg.audit.l2) {
    a["l2"] = "skipped";
  } else {
    const auto r = l2_audit(traj, cfg.audit.l2_slack);
    a["l2"] = {{"nehari_positive", r.nehari_positive},
               {"monotone", r.monotone},
               {"bounded_by_initial", r.bounded_by_initial},
               {"max_increase", jnum(r.max_increase)},
               {"max_excess_over_initial", jnum(r.max_excess_over_initial)},
               {"identity_max_deviation", jnum(r.identity_max_deviation)},
               {"identity_scale", jnum(r.identity_scale)},
               {"slack", jnum(cfg.audit.l2_slack)}};
    // Monotonicity is only expected while I_p stays positive.
    if (r.nehari_positive && !(r.monotone && r.bounded_by_initial)) violations.push_back("l2");
  }

  if (!cfg.audit.gradient || !run_preconditioned || !(th > p) || std::isinf(d_hat) || std::isinf(th)) {
    a["gradient_bound"] = "skipped";
  } else {
    const auto r = gradient_bound_audit(traj, p, th, d_hat);
    a["gradient_bound"] = {{"bound", jnum(r.bound)},
                           {"worst_margin", jnum(r.worst_margin)},
                           {"max_grad_p", jnum(r.max_grad_p)},
                           {"dissipation_total", jnum(r.dissipation_total)},
                           {"dissipation_margin", jnum(r.dissipation_margin)},
                           {"holds", r.holds}};
    if (!r.holds) violations.push_back("gradient_bound");
  }

  if (!cfg.audit.energy) {
    a["energy_inequality"] = "skipped";
  } else {
    const auto r = energy_inequality_audit(traj, cfg.audit.energy_tol);
    a["energy_inequality"] = {{"E0", jnum(r.E0)},
                              {"worst_excess", jnum(r.worst_excess)},
                              {"K", jnum(r.K)},
                              {"max_abs_step_residual", jnum(r.max_abs_residual)},
                              {"rel_tol", jnum(cfg.audit.energy_tol)},
                              {"holds", r.holds}};
    if (!r.holds) violations.push_back("energy_inequality");
  }

  if (!cfg.audit.radial || !std::holds_alternative<Annulus>(cfg.domain)) {
    a["radial_sup_bound"] = "skipped";
  } else {
    double worst = kInf;
    bool holds = true;
    for (const auto& s : traj.states) {
      const auto r = radial_sup_bound_check(s.field);
      worst = std::min(worst, r.worst_slack);
      holds = holds && r.holds;
    }
    a["radial_sup_bound"] = {{"states_checked", traj.states.size()}, {"worst_slack", jnum(worst)}, {"holds", holds}};
    if (!holds) violations.push_back("radial_sup_bound");
  }

  a["initial_well"] = {{"status", to_string(w0.status)},
                       {"margin_E", jnum(w0.margin_E)},
                       {"margin_I", jnum(w0.margin_I)}};
  return a;
}

inline Json provenance_json(const RunConfig& cfg) {
  Json echo = Json::object();
  for (const auto& [k, v] : cfg.echo) echo[k] = v;
  return {{"code_version", kCodeVersion},
          {"config", echo},
          {"tolerances",
           {{"eps", jnum(cfg.solver.eps)},
            {"energy_residual_tol", jnum(cfg.solver.energy_residual_tol)},
            {"tol_ext", jnum(cfg.solver.tol_ext)},
            {"U_max", jnum(cfg.solver.U_max)},
            {"dt0", jnum(cfg.solver.dt0)},
            {"dt_min", jnum(cfg.solver.dt_min)},
            {"audit_energy_tol", jnum(cfg.audit.energy_tol)},
            {"audit_l2_slack", jnum(cfg.audit.l2_slack)},
            {"nehari_tol", jnum(kNehariTol)},
            {"strict_tol", jnum(kStrictTol)}}}};
}

inline Json trajectory_summary(const RunConfig& cfg, const Trajectory& traj, double d_hat) {
  const double tmax = detect_tmax(traj, cfg.solver);
  Json j = {{"status", to_string(traj.status.kind)},
            {"status_time", jnum(traj.status.time)},
            {"status_detail", traj.status.detail},
            {"dt_underflow", traj.status.dt_underflow},
            {"T_max", jnum(tmax)},
            {"extinction_time",
             traj.status.kind == RunStatus::Extinct ? jnum(traj.status.time) : Json("none")},
            {"steps", traj.times.size() - 1},
            {"stored_states", traj.states.size()},
            {"dt_max", jnum(traj.dt_max())},
            {"p", jnum(traj.p)},
            {"eps", jnum(traj.eps)},
            {"d_hat", jnum(d_hat)},
            {"initial", snapshot_json(traj.snapshots.front())},
            {"final", snapshot_json(traj.snapshots.back())}};
  return j;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  return os;
}

inline void write_state_dumps(const std::filesystem::path& dir, const Trajectory& traj) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "state_%05zu.txt", k);
    auto os = open_output(dir / name);
    os << "# t=" << fmt_g17(traj.states[k].time) << '\n';
    write_state(os, traj.states[k].field);
  }
}

}  // namespace detail

/// Runs one configured experiment and writes its artifacts. Never throws:
/// failures map to exit codes (1 config, 4 I/O).
inline ExperimentResult run_experiment(const RunConfig& cfg) {
  ExperimentResult res;
  namespace fs = std::filesystem;
  try {
    const fs::path dir(cfg.output.directory);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
    // Open everything up front so an unusable path fails before any work.
    auto summary_os = detail::open_output(dir / cfg.output.summary);
    auto traj_os = detail::open_output(dir / cfg.output.trajectory);

    const MeshPtr mesh = build_mesh(cfg);
    const Field u0 = build_initial(mesh, cfg);
    const auto dictionary = dictionary_for(mesh, cfg, &u0);

    Json summary = {{"format_version", kOutputFormatVersion}, {"provenance", detail::provenance_json(cfg)},
                    {"theta", jnum(theta(cfg.nl))}, {"reaction", reaction_name(cfg.nl)},
                    {"domain", domain_kind(cfg.domain)}, {"h", jnum(mesh->h)}};
    std::vector<std::string> violations;
    const Trajectory* final_traj = nullptr;
    ContinuationReport report;
    Trajectory traj;

    if (cfg.continuation.enabled) {
      ContinuationPlan plan;
      plan.p_sequence = cfg.continuation.p_sequence;
      plan.eps_schedule = cfg.continuation.eps_schedule;
      plan.u0 = u0;
      plan.nl = cfg.nl;
      plan.cfg = cfg.solver;
      plan.checkpoints = cfg.solver.checkpoints;
      plan.dictionary = dictionary;
      plan.flux_tol = cfg.continuation.flux_tol;
      plan.alignment_min = cfg.continuation.alignment_min;
      plan.sign_tol = cfg.continuation.sign_tol;
      plan.energy_tol = cfg.continuation.energy_tol;
      plan.parallel = cfg.continuation.parallel;
      auto cont_os = detail::open_output(dir / cfg.output.continuation);
      report = run_continuation(plan);
      cont_os << canonical_json(continuation_json(report, plan));
      if (!cont_os) throw IoError("write failed for '" + cfg.output.continuation + "'");

      const MemberRecord& last = report.members.back();
      final_traj = &last.trajectory;
      summary["mode"] = "continuation";
      Json verdicts = Json::object();
      for (const auto& v : report.verdicts) {
        verdicts[v.name] = v.holds;
        if (!v.holds) violations.push_back("continuation." + v.name);
      }
      summary["continuation"] = {{"members", report.members.size()},
                                 {"final_p", jnum(last.p)},
                                 {"uniform_grad_bound", jnum(report.uniform_grad_bound)},
                                 {"uniform_dissipation", jnum(report.uniform_dissipation)},
                                 {"d_hat_max", jnum(report.d_hat_max)},
                                 {"verdicts", verdicts}};
      Json statuses = Json::array();
      for (const auto& m : report.members) statuses.push_back(to_string(m.status.kind));
      summary["continuation"]["member_status"] = statuses;
      summary.update(detail::trajectory_summary(cfg, last.trajectory, last.d_hat));
      RunConfig member_cfg = cfg;
      member_cfg.solver.p = last.p;
      summary["audits"] = detail::audits_json(member_cfg, last.trajectory, u0, last.d_hat, violations);
      res.exit_code = kExitOk;
      for (const auto& m : report.members) res.exit_code = std::max(res.exit_code, exit_code(m.status.kind));
    } else {
      summary["mode"] = "single";
      summary["continuation"] = "skipped";
      const double d_hat = estimate_dp(*mesh, cfg.solver.p, cfg.nl, dictionary);
      traj = run(mesh, u0, cfg.solver, cfg.nl, d_hat);
      final_traj = &traj;
      summary.update(detail::trajectory_summary(cfg, traj, d_hat));
      summary["audits"] = detail::audits_json(cfg, traj, u0, d_hat, violations);
      res.exit_code = exit_code(traj.status.kind);
    }
    summary["violations"] = violations;

    write_trajectory_csv(traj_os, *final_traj);
    if (cfg.output.states) detail::write_state_dumps(dir / "states", *final_traj);
    summary_os << canonical_json(summary);
    if (!summary_os || !traj_os) throw IoError("write failed in '" + dir.string() + "'");
    res.summary = std::move(summary);
  } catch (const ConfigError& e) {
    res.exit_code = kExitConfig;
    res.message = e.what();
  } catch (const IoError& e) {
    res.exit_code = kExitIo;
    res.message = e.what();
  } catch (const std::exception& e) {  // inputs the parser cannot see, e.g. a reaction without a Nehari point
    res.exit_code = kExitConfig;
    res.message = e.what();
  }
  return res;
}

}  // namespace onelap
