#pragma once

// Offline ledger audit over a report bundle: proves the one-time-pad
// single-use discipline from the key-usage logs, scans wire captures for
// network-key cleartext, and checks that every node's network-key pool is
// consistent with the manager's.

#include <cstdint>
#include <string>
#include <vector>

#include "qkdnet/common.hpp"

namespace qkdnet {

struct AuditResult {
  bool malformed = false;          // unparseable logs / missing inputs -> exit 1
  std::vector<std::string> violations;  // reuse, cleartext, divergence -> exit 2
  std::vector<std::string> notes;  // benign findings (e.g. delivery shortfall)
  uint64_t keyuse_events = 0;
  uint64_t wire_lines = 0;
  size_t tables_seen = 0;

  bool ok() const { return !malformed && violations.empty(); }
  // Stable contract: 0 clean, 1 malformed input, 2 ledger violation.
  int exit_code() const { return malformed ? 1 : (violations.empty() ? 0 : 2); }
};

// Audits <dir>/tables/*.qkt plus <dir>/logs/*keyuse*.log and
// <dir>/logs/*wire*.log; works on both single-file (merged) and per-node
// log layouts.
AuditResult audit_report_dir(const std::string& dir);

std::string audit_text(const AuditResult& r);

}  // namespace qkdnet
