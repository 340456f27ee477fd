// Operator entry point: run simulations, launch socket-mode nodes, emit the
// bundled scenario presets, export telemetry to CSV, and audit key ledgers.
// Exit codes are a stable contract: 0 success, 1 usage/input error,
// 2 invariant/audit failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "qkdnet/audit.hpp"
#include "qkdnet/realnode.hpp"
#include "qkdnet/scenario.hpp"
#include "qkdnet/sim.hpp"

namespace fs = std::filesystem;
using namespace qkdnet;

namespace {

int cmd_sim(const std::string& ref, std::optional<uint64_t> seed, std::optional<double> duration,
            std::string out_dir, bool no_bundle) {
  bool is_builtin = builtin_scenario(ref).has_value();
  if (!is_builtin && !fs::exists(ref)) {
    std::fprintf(stderr, "no such scenario: %s (not a preset, and no file at that path)\n",
                 ref.c_str());
    return 1;
  }
  ScenarioLoad loaded = resolve_scenario(ref);
  if (!loaded.scenario) {
    for (const auto& e : loaded.errors) std::fprintf(stderr, "scenario: %s\n", e.c_str());
    return 1;
  }
  Scenario sc = std::move(*loaded.scenario);
  if (seed) sc.seed = *seed;
  if (duration) sc.duration_s = *duration;
  auto errors = sc.validate();
  if (!errors.empty()) {
    for (const auto& e : errors) std::fprintf(stderr, "scenario: %s\n", e.c_str());
    return 1;
  }

  SimReport report = run_sim(sc);
  if (!no_bundle) {
    if (out_dir.empty()) out_dir = "out/" + (sc.name.empty() ? std::string("run") : sc.name);
    if (write_report_bundle(report, out_dir) != Err::None) {
      std::fprintf(stderr, "cannot write report bundle to %s\n", out_dir.c_str());
      return 1;
    }
  }
  std::fputs(summary_text(report).c_str(), stdout);
  if (!no_bundle) std::printf("bundle: %s\n", out_dir.c_str());
  if (!report.invariant_violation.empty()) return 2;
  return 0;
}

int cmd_node(const std::string& config_path) {
  auto opt = load_real_node_config(config_path);
  if (!opt.ok()) {
    std::fprintf(stderr, "cannot load node config %s: %s\n", config_path.c_str(),
                 err_name(opt.error()));
    return 1;
  }
  return run_real_node(opt.value());
}

int cmd_scenario_init(std::string out_dir, std::vector<std::string> names) {
  if (out_dir.empty()) out_dir = "scenarios";
  if (names.empty()) names = builtin_scenario_names();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    std::fprintf(stderr, "cannot create %s\n", out_dir.c_str());
    return 1;
  }
  for (const auto& name : names) {
    auto sc = builtin_scenario(name);
    if (!sc) {
      std::fprintf(stderr, "unknown preset: %s\n", name.c_str());
      return 1;
    }
    fs::path path = fs::path(out_dir) / (name + ".json");
    std::ofstream f(path, std::ios::trunc);
    f << scenario_to_json(*sc);
    if (!f) {
      std::fprintf(stderr, "cannot write %s\n", path.string().c_str());
      return 1;
    }
    std::printf("wrote %s\n", path.string().c_str());
  }
  return 0;
}

int cmd_export(const std::string& in, std::string out_dir) {
  std::vector<fs::path> inputs;
  if (fs::is_directory(in)) {
    if (fs::exists(fs::path(in) / "telemetry.lp")) inputs.push_back(fs::path(in) / "telemetry.lp");
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(fs::path(in) / "telemetry", ec)) {
      if (e.path().extension() == ".lp") inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
    if (out_dir.empty()) out_dir = (fs::path(in) / "csv").string();
  } else if (fs::exists(in)) {
    inputs.push_back(in);
    if (out_dir.empty()) out_dir = "csv";
  }
  if (inputs.empty()) {
    std::fprintf(stderr, "no telemetry found at %s\n", in.c_str());
    return 1;
  }

  std::vector<SeriesPoint> points;
  for (const auto& path : inputs) {
    std::ifstream f(path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto p = parse_line(line);
      if (!p.ok()) {
        std::fprintf(stderr, "%s:%zu: malformed line (%s)\n", path.string().c_str(), lineno,
                     err_name(p.error()));
        return 1;
      }
      points.push_back(std::move(p.value()));
    }
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    std::fprintf(stderr, "cannot create %s\n", out_dir.c_str());
    return 1;
  }
  std::map<std::string, std::vector<const SeriesPoint*>> series;
  for (const auto& p : points) {
    std::string key = p.measurement;
    for (const auto& [tk, tv] : p.tags) key += "." + tk + "-" + tv;
    series[key].push_back(&p);
  }
  for (const auto& [key, pts] : series) {
    std::string name;
    for (char c : key) name += (std::isalnum(uint8_t(c)) || c == '-' || c == '_' || c == '.') ? c : '-';
    std::ofstream f(fs::path(out_dir) / (name + ".csv"), std::ios::trunc);
    f << series_to_csv(pts);
    if (!f) {
      std::fprintf(stderr, "cannot write series %s\n", name.c_str());
      return 1;
    }
  }
  std::printf("wrote %zu series to %s\n", series.size(), out_dir.c_str());
  return 0;
}

int cmd_audit(const std::string& dir) {
  AuditResult r = audit_report_dir(dir);
  std::fputs(audit_text(r).c_str(), stdout);
  return r.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trusted-relay key distribution: simulator, socket runtime, and audit tools"};
  app.require_subcommand(1);

  std::string sim_ref, sim_out;
  std::optional<uint64_t> sim_seed;
  std::optional<double> sim_duration;
  bool sim_no_bundle = false;
  auto* sim = app.add_subcommand("sim", "Run a scenario under the virtual-time simulator");
  sim->add_option("scenario", sim_ref, "Preset name or scenario file path")->required();
  sim->add_option("--seed", sim_seed, "Override the scenario seed");
  sim->add_option("--duration", sim_duration, "Override the run length (virtual seconds)");
  sim->add_option("--out", sim_out, "Report bundle directory (default out/<scenario>)");
  sim->add_flag("--no-bundle", sim_no_bundle, "Print the summary without writing a bundle");

  std::string node_config;
  auto* node = app.add_subcommand("node", "Run one network node over TCP");
  node->add_option("--config", node_config, "Node config JSON")->required();

  std::string init_out;
  std::vector<std::string> init_names;
  auto* init = app.add_subcommand("scenario-init", "Write bundled scenario presets as JSON");
  init->add_option("--out", init_out, "Output directory (default scenarios)");
  init->add_option("names", init_names, "Preset names (default: all)");

  std::string export_in, export_out;
  auto* exp = app.add_subcommand("export", "Convert bundle telemetry to one CSV per series");
  exp->add_option("--in", export_in, "Bundle directory or .lp file")->required();
  exp->add_option("--out", export_out, "CSV output directory");

  std::string audit_dir;
  auto* audit = app.add_subcommand("audit", "Verify key single-use and pool consistency");
  audit->add_option("dir", audit_dir, "Report bundle directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (sim->parsed()) return cmd_sim(sim_ref, sim_seed, sim_duration, sim_out, sim_no_bundle);
  if (node->parsed()) return cmd_node(node_config);
  if (init->parsed()) return cmd_scenario_init(init_out, init_names);
  if (exp->parsed()) return cmd_export(export_in, export_out);
  if (audit->parsed()) return cmd_audit(audit_dir);
  return 1;
}
