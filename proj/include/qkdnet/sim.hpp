#pragma once

#include <functional>

#include "qkdnet/scenario.hpp"

namespace qkdnet {

// Everything a run produces, in memory. write_report_bundle() lays it out
// on disk; two runs of the same (scenario, seed) produce byte-identical
// bundles.
struct SimReport {
  std::string scenario_name;
  uint64_t seed = 0;
  double duration_s = 0;
  uint64_t events_processed = 0;

  uint64_t transfers_completed = 0;
  uint64_t nk_delivered = 0;
  uint64_t keys_failed = 0;
  double network_key_rate = 0;  // delivered 256-bit keys per virtual second
  std::vector<TriggerEvent> triggers;

  std::map<std::string, uint64_t> nk_count;          // node -> NK records
  std::map<std::string, std::string> nk_digest_hex;  // node -> content digest
  std::map<uint32_t, Summary> skr_summary;           // per link, from cycle truth
  std::map<uint32_t, Summary> qber_summary;
  NodeCounters counters_total;

  std::string telemetry_lines;  // merged line protocol (ground truth + nodes)
  std::vector<SeriesPoint> all_points;
  std::vector<std::string> keyuse_log;
  std::vector<std::string> wire_log;
  std::map<std::string, Bytes> table_files;  // "<node>_<scope>.qkt" -> bytes

  std::string invariant_violation;  // empty on a clean run
};

// Fault injection: may mutate a frame about to be delivered. Returns true
// if it changed anything (counted).
using FrameTamperer =
    std::function<bool(const std::string& from, const std::string& to, uint64_t deliver_index, Bytes& frame)>;

struct SimOptions {
  // Cross-node table comparisons at checkpoints; disable when injecting
  // faults (per-table invariants still checked).
  bool strict_cross_checks = true;
  double checkpoint_period_s = 10.0;
  FrameTamperer tamperer;
};

SimReport run_sim(const Scenario& sc);
SimReport run_sim(const Scenario& sc, const SimOptions& opt);

// out_dir is created; writes summary.json, summary.txt, telemetry.lp,
// csv/<series>.csv, tables/*.qkt, logs/keyuse.log, logs/wire.log.
Err write_report_bundle(const SimReport& r, const std::string& out_dir);

// The operator-facing run summary (also stored as summary.txt).
std::string summary_text(const SimReport& r);

}  // namespace qkdnet
