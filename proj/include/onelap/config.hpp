#pragma once

// Sectioned key=value run descriptions.
//
//   format_version = 1
//   [domain]   kind = interval|annulus|rectangle, length | inner outer dim | width height, resolution
//   [reaction] kind = zero|power|sum_powers|exp_power, q, s, alpha, p0
//   [solver]   p, eps, dt0, dt_min, T_end, U_max, tol_ext, energy_residual_tol, adapt, store_stride,
//              checkpoints, max_steps
//   [initial]  profile = flat|hat|bump|nehari|file and its parameters
//   [continuation] enabled, m_max | p_sequence, eps_schedule, tolerances, parallel
//   [output]   directory, trajectory, summary, continuation, states
//   [audit]    well, l2, gradient, energy, radial, strict, energy_tol, l2_slack, dictionary_size
//
// Every key is consumed or rejected; '#' starts a comment. Defaults: Interval(1) at
// resolution 100, zero reaction, profile flat with value 1, eps = 1e-4 / diameter.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "onelap/format.hpp"
#include "onelap/limit.hpp"
#include "onelap/mesh.hpp"
#include "onelap/model.hpp"
#include "onelap/solver.hpp"

namespace onelap {

constexpr int kConfigFormatVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct InitialSpec {
  std::string profile = "flat";
  double value = 1.0;      // flat
  double amplitude = 1.0;  // hat, bump
  double center = 0.5;     // bump, as a fraction of the domain extent
  double width = 0.25;     // bump, same units
  int index = 0;           // nehari: dictionary entry
  double scale = 1.0;      // nehari: multiple of the Nehari point
  std::string path;        // file
};

struct ContinuationSpec {
  bool enabled = false;
  std::vector<double> p_sequence;
  std::vector<double> eps_schedule;
  double flux_tol = 0.05;
  double alignment_min = 0.95;
  double sign_tol = 0.05;
  double energy_tol = 1e-3;
  bool parallel = false;
};

struct OutputSpec {
  std::string directory = ".";
  std::string trajectory = "trajectory.csv";
  std::string summary = "summary.json";
  std::string continuation = "continuation.json";
  bool states = false;
};

struct AuditSpec {
  bool well = true;
  bool l2 = true;
  bool gradient = true;
  bool energy = true;
  bool radial = true;
  bool strict = false;
  double energy_tol = 1e-3;
  double l2_slack = 1e-8;
  std::size_t dictionary_size = 8;
};

struct RunConfig {
  int format_version = kConfigFormatVersion;
  Domain domain = Interval{1.0};
  Resolution resolution;
  Nonlinearity nl;
  SolverConfig solver;
  InitialSpec initial;
  ContinuationSpec continuation;
  OutputSpec output;
  AuditSpec audit;
  std::map<std::string, std::string> echo;  // "section.key" -> raw value, for provenance
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class KeyTable {
 public:
  void set(const std::string& key, const std::string& value) {
    if (values_.count(key)) throw ConfigError(key, "duplicate key");
    values_[key] = value;
  }
  void override_value(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::optional<std::string> take(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::string require(const std::string& key) {
    auto v = take(key);
    if (!v) throw ConfigError(key, "missing required key");
    return *v;
  }

  double number(const std::string& key, const std::string& text) const {
    double v = 0.0;
    const char* b = text.data();
    const char* e = b + text.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e) {
      if (text == "inf") return kInf;
      throw ConfigError(key, "expected a number, got '" + text + "'");
    }
    return v;
  }

  double real(const std::string& key, double fallback) {
    auto v = take(key);
    return v ? number(key, *v) : fallback;
  }
  double real(const std::string& key) { return number(key, require(key)); }

  long integer(const std::string& key, long fallback) {
    auto v = take(key);
    if (!v) return fallback;
    long out = 0;
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || ptr != v->data() + v->size()) throw ConfigError(key, "expected an integer, got '" + *v + "'");
    return out;
  }

  bool boolean(const std::string& key, bool fallback) {
    auto v = take(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "on" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "off" || *v == "no") return false;
    throw ConfigError(key, "expected true or false, got '" + *v + "'");
  }

  std::vector<double> list(const std::string& key) {
    std::vector<double> out;
    auto v = take(key);
    if (!v) return out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(number(key, item));
    }
    return out;
  }

  void reject_unused() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError(k, "unknown key");
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

inline KeyTable tokenize(const std::string& text) {
  static const std::set<std::string> sections = {"domain", "reaction", "solver", "initial",
                                                 "continuation", "output", "audit"};
  KeyTable table;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw.substr(0, raw.find('#'));
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("", "line " + std::to_string(line_no) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!sections.count(section)) throw ConfigError(section, "unknown section");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("", "line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("", "line " + std::to_string(line_no) + ": empty key");
    table.set(section.empty() ? key : section + "." + key, value);
  }
  return table;
}

inline Domain parse_domain(KeyTable& t, Resolution& res) {
  const std::string kind = t.take("domain.kind").value_or("interval");
  Domain d;
  if (kind == "interval") {
    d = Interval{t.real("domain.length", 1.0)};
  } else if (kind == "annulus") {
    Annulus a{t.real("domain.inner"), t.real("domain.outer"), static_cast<int>(t.integer("domain.dim", 2))};
    if (!(a.inner < a.outer)) throw ConfigError("domain.inner", "annulus needs inner < outer");
    d = a;
  } else if (kind == "rectangle") {
    d = Rectangle{t.real("domain.width"), t.real("domain.height")};
  } else {
    throw ConfigError("domain.kind", "unknown domain kind '" + kind + "'");
  }
  try {
    validate(d);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("domain", e.what());
  }
  auto r = t.list("domain.resolution");
  if (r.empty()) r = {100.0};
  if (r.size() > 2 || (r.size() == 2 && !std::holds_alternative<Rectangle>(d)))
    throw ConfigError("domain.resolution", "expected one value (two for rectangles)");
  for (double v : r)
    if (!(v >= 2.0) || v != std::floor(v)) throw ConfigError("domain.resolution", "resolution must be an integer >= 2");
  res.nx = static_cast<int>(r[0]);
  res.ny = r.size() == 2 ? static_cast<int>(r[1]) : 0;
  return d;
}

inline Nonlinearity parse_reaction(KeyTable& t) {
  const std::string kind = t.take("reaction.kind").value_or("zero");
  Nonlinearity nl;
  if (kind == "zero") {
    nl.kind = ZeroReaction{};
  } else if (kind == "power") {
    nl.kind = PowerReaction{t.real("reaction.q")};
  } else if (kind == "sum_powers") {
    nl.kind = SumPowersReaction{t.real("reaction.q"), t.real("reaction.s")};
  } else if (kind == "exp_power") {
    nl.kind = ExpPowerReaction{t.real("reaction.q"), t.real("reaction.alpha")};
  } else {
    throw ConfigError("reaction.kind", "unknown reaction kind '" + kind + "'");
  }
  nl.p0 = t.real("reaction.p0", nl.p0);
  try {
    validate(nl);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("reaction", e.what());
  }
  return nl;
}

inline void check_exponent(const std::string& key, double p, const RunConfig& cfg) {
  if (!(p > 1.0)) throw ConfigError(key, "p must satisfy p > 1");
  const double th = theta(cfg.nl);
  if (!(p < th)) throw ConfigError(key, "p must satisfy p < theta = " + fmt_g17(th));
  if (std::holds_alternative<Annulus>(cfg.domain) && !(p < cfg.nl.p0))
    throw ConfigError(key, "radial runs need p < p0 = " + fmt_g17(cfg.nl.p0));
}

}  // namespace detail

/// Parses and validates a run description. `overrides` maps "section.key"
/// to a value and replaces (or adds) that entry before validation.
inline RunConfig parse_config(const std::string& text, const std::map<std::string, std::string>& overrides = {}) {
  detail::KeyTable t = detail::tokenize(text);
  for (const auto& [k, v] : overrides) t.override_value(k, v);

  RunConfig cfg;
  cfg.echo = t.values();
  cfg.format_version = static_cast<int>(t.integer("format_version", kConfigFormatVersion));
  if (cfg.format_version != kConfigFormatVersion)
    throw ConfigError("format_version", "unsupported format version " + std::to_string(cfg.format_version));

  cfg.domain = detail::parse_domain(t, cfg.resolution);
  cfg.nl = detail::parse_reaction(t);

  cfg.continuation.enabled = t.boolean("continuation.enabled", false);

  SolverConfig& s = cfg.solver;
  if (cfg.continuation.enabled) {
    s.p = t.real("solver.p", 2.0);
  } else {
    s.p = t.real("solver.p");
    detail::check_exponent("solver.p", s.p, cfg);
  }
  s.eps = t.real("solver.eps", 1e-4 / domain_diameter(cfg.domain));
  s.dt0 = t.real("solver.dt0", 1e-3);
  s.dt_min = t.real("solver.dt_min", 1e-12);
  s.T_end = t.real("solver.T_end", 1.0);
  s.U_max = t.real("solver.U_max", 1e6);
  s.tol_ext = t.real("solver.tol_ext", 1e-8);
  s.energy_residual_tol = t.real("solver.energy_residual_tol", 1e-6);
  s.adapt = t.boolean("solver.adapt", true);
  const long stride = t.integer("solver.store_stride", 10);
  if (stride < 1) throw ConfigError("solver.store_stride", "must be at least 1");
  s.store_stride = static_cast<std::size_t>(stride);
  const long max_steps = t.integer("solver.max_steps", 5'000'000);
  if (max_steps < 1) throw ConfigError("solver.max_steps", "must be at least 1");
  s.max_steps = static_cast<std::size_t>(max_steps);
  s.checkpoints = t.list("solver.checkpoints");
  for (std::size_t i = 0; i < s.checkpoints.size(); ++i) {
    if (!(s.checkpoints[i] > 0.0 && s.checkpoints[i] <= s.T_end))
      throw ConfigError("solver.checkpoints", "checkpoints must lie in (0, T_end]");
    if (i > 0 && !(s.checkpoints[i] > s.checkpoints[i - 1]))
      throw ConfigError("solver.checkpoints", "checkpoints must be strictly increasing");
  }
  if (!(s.eps >= 0.0)) throw ConfigError("solver.eps", "eps must be non-negative");
  if (!(s.dt_min > 0.0 && s.dt_min < s.dt0)) throw ConfigError("solver.dt_min", "need 0 < dt_min < dt0");
  if (!(s.dt0 <= s.T_end)) throw ConfigError("solver.dt0", "need dt0 <= T_end");
  if (!(s.U_max > 0.0)) throw ConfigError("solver.U_max", "must be positive");
  if (!(s.tol_ext >= 0.0)) throw ConfigError("solver.tol_ext", "must be non-negative");
  if (!(s.energy_residual_tol > 0.0)) throw ConfigError("solver.energy_residual_tol", "must be positive");

  InitialSpec& u0 = cfg.initial;
  u0.profile = t.take("initial.profile").value_or("flat");
  if (u0.profile == "flat") {
    u0.value = t.real("initial.value", 1.0);
  } else if (u0.profile == "hat") {
    u0.amplitude = t.real("initial.amplitude", 1.0);
  } else if (u0.profile == "bump") {
    u0.center = t.real("initial.center", 0.5);
    u0.width = t.real("initial.width", 0.25);
    u0.amplitude = t.real("initial.amplitude", 1.0);
    if (!(u0.width > 0.0)) throw ConfigError("initial.width", "must be positive");
  } else if (u0.profile == "nehari") {
    u0.index = static_cast<int>(t.integer("initial.index", 0));
    u0.scale = t.real("initial.scale", 1.0);
    if (u0.index < 0) throw ConfigError("initial.index", "must be non-negative");
  } else if (u0.profile == "file") {
    u0.path = t.require("initial.path");
  } else {
    throw ConfigError("initial.profile", "unknown profile '" + u0.profile + "'");
  }

  ContinuationSpec& c = cfg.continuation;
  if (c.enabled) {
    c.p_sequence = t.list("continuation.p_sequence");
    const long m_max = t.integer("continuation.m_max", 8);
    if (c.p_sequence.empty()) {
      if (m_max < 1) throw ConfigError("continuation.m_max", "must be at least 1");
      for (long m = 1; m <= m_max; ++m) c.p_sequence.push_back(1.0 + std::ldexp(1.0, static_cast<int>(-m)));
    } else if (t.has("continuation.m_max")) {
      throw ConfigError("continuation.m_max", "give either m_max or p_sequence");
    }
    for (std::size_t i = 0; i < c.p_sequence.size(); ++i) {
      detail::check_exponent("continuation.p_sequence", c.p_sequence[i], cfg);
      if (i > 0 && !(c.p_sequence[i] < c.p_sequence[i - 1]))
        throw ConfigError("continuation.p_sequence", "must be strictly decreasing");
    }
    c.eps_schedule = t.list("continuation.eps_schedule");
    if (c.eps_schedule.empty()) {
      for (double p : c.p_sequence) c.eps_schedule.push_back((p - 1.0) * (p - 1.0));
    } else if (c.eps_schedule.size() != c.p_sequence.size()) {
      throw ConfigError("continuation.eps_schedule", "needs one entry per exponent");
    }
    c.flux_tol = t.real("continuation.flux_tol", c.flux_tol);
    c.alignment_min = t.real("continuation.alignment_min", c.alignment_min);
    c.sign_tol = t.real("continuation.sign_tol", c.sign_tol);
    c.energy_tol = t.real("continuation.energy_tol", c.energy_tol);
    c.parallel = t.boolean("continuation.parallel", false);
  }

  OutputSpec& o = cfg.output;
  o.directory = t.take("output.directory").value_or(o.directory);
  o.trajectory = t.take("output.trajectory").value_or(o.trajectory);
  o.summary = t.take("output.summary").value_or(o.summary);
  o.continuation = t.take("output.continuation").value_or(o.continuation);
  o.states = t.boolean("output.states", false);

  AuditSpec& a = cfg.audit;
  a.well = t.boolean("audit.well", true);
  a.l2 = t.boolean("audit.l2", true);
  a.gradient = t.boolean("audit.gradient", true);
  a.energy = t.boolean("audit.energy", true);
  a.radial = t.boolean("audit.radial", true);
  a.strict = t.boolean("audit.strict", false);
  a.energy_tol = t.real("audit.energy_tol", a.energy_tol);
  a.l2_slack = t.real("audit.l2_slack", a.l2_slack);
  const long dict = t.integer("audit.dictionary_size", 8);
  if (dict < 1) throw ConfigError("audit.dictionary_size", "must be at least 1");
  a.dictionary_size = static_cast<std::size_t>(dict);

  t.reject_unused();
  return cfg;
}

}  // namespace onelap
