// onelap: config-driven runner for the p-Laplacian / 1-Laplacian lab.
//
//   onelap run CONFIG [--set section.key=value ...]
//   onelap check-config CONFIG
//   onelap dump-mesh CONFIG [-o FILE]
//   onelap sweep CONFIG --param section.key --values a,b,c [--out DIR] [--jobs N]

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "onelap/experiment.hpp"

namespace {

using namespace onelap;

bool read_file(const std::string& path, std::string& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::ostringstream ss;
  ss << in.rdbuf();
  out = ss.str();
  return true;
}

std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& items) {
  std::map<std::string, std::string> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(item, "override must look like section.key=value");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

// Loads and validates; prints the error and returns nullopt on failure.
std::optional<RunConfig> load(const std::string& path, const std::map<std::string, std::string>& overrides,
                              int& code) {
  std::string text;
  if (!read_file(path, text)) {
    std::cerr << "error: cannot read config '" << path << "'\n";
    code = kExitIo;
    return std::nullopt;
  }
  try {
    return parse_config(text, overrides);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    code = kExitConfig;
    return std::nullopt;
  }
}

int cmd_run(const std::string& path, const std::vector<std::string>& sets) {
  int code = kExitOk;
  std::map<std::string, std::string> overrides;
  try {
    overrides = parse_overrides(sets);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  auto cfg = load(path, overrides, code);
  if (!cfg) return code;
  const ExperimentResult r = run_experiment(*cfg);
  if (!r.message.empty()) std::cerr << "error: " << r.message << '\n';
  if (r.exit_code == kExitOk || r.exit_code == kExitBlowUp || r.exit_code == kExitStepFailure) {
    const auto& s = r.summary;
    std::cout << "status " << s.value("status", std::string("?")) << " at t=" << canonical_json(s["status_time"]);
    std::cout << "T_max " << canonical_json(s["T_max"]);
    const auto& v = s["violations"];
    if (!v.empty()) std::cout << "audit violations: " << v.dump() << '\n';
  }
  return r.exit_code;
}

int cmd_check(const std::string& path) {
  int code = kExitOk;
  auto cfg = load(path, {}, code);
  if (!cfg) return code;
  std::cout << "ok: domain " << domain_kind(cfg->domain) << ", reaction " << reaction_name(cfg->nl)
            << ", theta " << fmt_g17(theta(cfg->nl));
  if (cfg->continuation.enabled)
    std::cout << ", continuation over " << cfg->continuation.p_sequence.size() << " exponents";
  else
    std::cout << ", p " << fmt_g17(cfg->solver.p);
  std::cout << ", eps " << fmt_g17(cfg->solver.eps) << '\n';
  return kExitOk;
}

int cmd_dump_mesh(const std::string& path, const std::string& out_path) {
  int code = kExitOk;
  auto cfg = load(path, {}, code);
  if (!cfg) return code;
  const MeshPtr mesh = build_mesh(*cfg);
  if (out_path.empty() || out_path == "-") {
    write_mesh(std::cout, *mesh);
    return kExitOk;
  }
  std::ofstream os(out_path);
  if (!os) {
    std::cerr << "error: cannot write '" << out_path << "'\n";
    return kExitIo;
  }
  write_mesh(os, *mesh);
  return os ? kExitOk : kExitIo;
}

int cmd_sweep(const std::string& path, const std::string& param, const std::vector<std::string>& values,
              const std::string& out_dir, int jobs) {
  std::string text;
  if (!read_file(path, text)) {
    std::cerr << "error: cannot read config '" << path << "'\n";
    return kExitIo;
  }
  // Validate every variant before running any of them.
  std::vector<RunConfig> variants;
  for (std::size_t i = 0; i < values.size(); ++i) {
    char sub[32];
    std::snprintf(sub, sizeof sub, "run_%03zu", i);
    try {
      RunConfig c = parse_config(text, {{param, values[i]}});
      c.output.directory = (std::filesystem::path(out_dir) / sub).string();
      variants.push_back(std::move(c));
    } catch (const ConfigError& e) {
      std::cerr << "config error in variant " << param << "=" << values[i] << ": " << e.what() << '\n';
      return kExitConfig;
    }
  }

  std::vector<ExperimentResult> results(variants.size());
  const std::size_t width = static_cast<std::size_t>(std::max(1, jobs));
  for (std::size_t start = 0; start < variants.size(); start += width) {
    std::vector<std::future<ExperimentResult>> batch;
    const std::size_t stop = std::min(variants.size(), start + width);
    for (std::size_t i = start; i < stop; ++i)
      batch.push_back(std::async(std::launch::async, [&variants, i] { return run_experiment(variants[i]); }));
    for (std::size_t i = start; i < stop; ++i) results[i] = batch[i - start].get();
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ofstream index(std::filesystem::path(out_dir) / "sweep.csv");
  if (!index) {
    std::cerr << "error: cannot write sweep index in '" << out_dir << "'\n";
    return kExitIo;
  }
  index << "# onelap sweep format_version=" << kOutputFormatVersion << '\n';
  index << "run,param,value,exit_code,status,T_max\n";
  int worst = kExitOk;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const std::string status = r.summary.is_object() ? r.summary.value("status", std::string("error")) : "error";
    std::string tmax = "none";
    if (r.summary.is_object() && r.summary.contains("T_max")) {
      tmax = canonical_json(r.summary["T_max"]);
      tmax.erase(std::remove(tmax.begin(), tmax.end(), '\n'), tmax.end());
      tmax.erase(std::remove(tmax.begin(), tmax.end(), '"'), tmax.end());
    }
    index << i << ',' << param << ',' << values[i] << ',' << r.exit_code << ',' << status << ',' << tmax << '\n';
    if (!r.message.empty()) std::cerr << "variant " << i << ": " << r.message << '\n';
    if (r.exit_code == kExitConfig || r.exit_code == kExitIo) worst = std::max(worst, r.exit_code);
  }
  std::cout << "sweep of " << results.size() << " runs written to " << out_dir << '\n';
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"p-Laplacian continuation lab for the reaction / 1-Laplacian heat equation"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;
  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("config", config, "run description")->required();
  run->add_option("--set", sets, "override section.key=value (repeatable)");

  auto* check = app.add_subcommand("check-config", "validate a run description");
  check->add_option("config", config, "run description")->required();

  std::string mesh_out;
  auto* dump = app.add_subcommand("dump-mesh", "write the mesh of a run description");
  dump->add_option("config", config, "run description")->required();
  dump->add_option("-o,--output", mesh_out, "output file (default stdout)");

  std::string param, out_dir = "sweep_out";
  std::vector<std::string> values;
  int jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "run one experiment per value of a single key");
  sweep->add_option("config", config, "base run description")->required();
  sweep->add_option("--param", param, "section.key to vary")->required();
  sweep->add_option("--values", values, "comma-separated values")->required()->delimiter(',');
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (*run) return cmd_run(config, sets);
  if (*check) return cmd_check(config);
  if (*dump) return cmd_dump_mesh(config, mesh_out);
  if (*sweep) return cmd_sweep(config, param, values, out_dir, jobs);
  return kExitConfig;
}
