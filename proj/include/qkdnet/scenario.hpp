#pragma once

#include "qkdnet/node.hpp"
#include "qkdnet/qkdlink.hpp"

namespace qkdnet {

// Classical-channel outage between two named endpoints over [start_s,
// end_s): messages on that pair are held and released at end_s in send
// order. Quantum feeds are unaffected.
struct OutageWindow {
  std::string a;
  std::string b;
  double start_s = 0.0;
  double end_s = 0.0;

  bool covers(const std::string& x, const std::string& y, double t) const {
    bool same_pair = (a == x && b == y) || (a == y && b == x);
    return same_pair && t >= start_s && t < end_s;
  }
};

struct NodeSpec {
  std::string node_id;
  Role role = Role::TrustedNode;
};

// Full description of one run: topology, link statistics, policy, and the
// scripted environment. A run is a pure function of (scenario, seed).
struct Scenario {
  std::string name;
  double duration_s = 0.0;
  uint64_t seed = 1;
  TransferPolicy policy;
  uint64_t fresh_cap = 0;    // per-link Fresh admission cap (0 = uncapped)
  uint64_t initial_pool = 0; // pre-shared keys per link at t=0
  double poll_period_s = 1.0;
  double report_period_s = 1.0;
  double batch_timeout_s = 30.0;
  double hop_delay_s = 0.02;
  double time_compression = 1.0;  // virtual seconds per wall second (socket mode)
  std::vector<NodeSpec> nodes;    // linear, manager first, edge last
  std::vector<LinkProfile> links; // links[i] joins nodes[i] and nodes[i+1]
  std::vector<DisturbanceWindow> disturbances;
  std::vector<OutageWindow> outages;

  // All problems, not just the first; empty means valid.
  std::vector<std::string> validate() const;
};

struct ScenarioLoad {
  std::optional<Scenario> scenario;        // set iff errors is empty
  std::vector<std::string> errors;
};

// Parses and validates the documented JSON grammar, collecting every error.
ScenarioLoad load_scenario(std::string_view text);
ScenarioLoad load_scenario_file(const std::string& path);

std::string scenario_to_json(const Scenario& sc);

// Bundled presets: "epb_table1" (three-link utility deployment),
// "epb_outage" (same plus two classical outages), "epb_wind" (same plus a
// weather window on link 2 and an error burst on link 1).
std::vector<std::string> builtin_scenario_names();
std::optional<Scenario> builtin_scenario(const std::string& name);

// Resolves `ref` as a builtin name first, then as a file path.
ScenarioLoad resolve_scenario(const std::string& ref);

// Per-node reactor config derived from the scenario (index into sc.nodes).
// Pre-shared keys are derived from the seed, identically in every process.
NodeConfig make_node_config(const Scenario& sc, size_t node_index);

}  // namespace qkdnet
