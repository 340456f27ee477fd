#pragma once

// Socket runtime for one relay participant: the same Node reactor as the
// simulator, driven by a poll(2) loop over real TCP connections and a
// compressed wall clock. State is checkpointed write-ahead of every socket
// flush, so killing a process never produces pad reuse after resume.

#include <map>
#include <optional>
#include <string>

#include "qkdnet/scenario.hpp"

namespace qkdnet {

struct RealNodeOptions {
  Scenario scenario;          // validated topology shared by all processes
  size_t node_index = 0;      // position in scenario.nodes
  std::string listen_addr;    // "ip:port"; empty when no peer dials this node
  std::map<std::string, std::string> peer_addrs;  // peers this node dials
  std::string out_dir;        // shared bundle root (state/, logs/, tables/, ...)
  double start_epoch_s = 0;   // shared wall-clock origin (unix seconds)
  double grace_s = 2.0;       // wall seconds to drain in-flight frames at end
};

// Parses the runtime config document (scenario reference, node id,
// addresses, output root, shared epoch).
Expected<RealNodeOptions> load_real_node_config(const std::string& path);

// Runs to scenario completion; returns a process exit code.
int run_real_node(const RealNodeOptions& opt);

}  // namespace qkdnet
