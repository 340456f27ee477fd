#include "qkdnet/audit.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "qkdnet/keycore.hpp"

namespace qkdnet {

namespace {

namespace fs = std::filesystem;

std::vector<fs::path> matching_files(const fs::path& dir, std::string_view infix,
                                     std::string_view suffix) {
  std::vector<fs::path> out;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(dir, ec)) {
    if (!e.is_regular_file()) continue;
    std::string name = e.path().filename().string();
    if (name.size() < suffix.size() ||
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    if (!infix.empty() && name.find(infix) == std::string::npos) continue;
    out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool read_lines(const fs::path& p, std::vector<std::string>& lines) {
  std::ifstream f(p);
  if (!f) return false;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return true;
}

// Pulls the value of `key=` from a space-separated log line; empty if absent.
std::string field_of(const std::string& line, const std::string& key) {
  std::string needle = key + "=";
  size_t pos = 0;
  while (true) {
    pos = line.find(needle, pos);
    if (pos == std::string::npos) return {};
    if (pos == 0 || line[pos - 1] == ' ') break;
    pos += needle.size();
  }
  size_t start = pos + needle.size();
  size_t end = line.find(' ', start);
  return line.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

struct KeyuseEvent {
  std::string node;
  std::string scope;
  uint64_t key = 0;
  std::string ev;
};

bool parse_keyuse(const std::string& line, KeyuseEvent& out) {
  // <ts> node=<id> scope=<nk|qkN> key=<id> ev=<event>
  uint64_t ts = 0;
  auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), ts);
  if (ec != std::errc() || p == line.data() || *p != ' ') return false;
  out.node = field_of(line, "node");
  out.scope = field_of(line, "scope");
  out.ev = field_of(line, "ev");
  std::string key = field_of(line, "key");
  if (out.node.empty() || out.scope.empty() || out.ev.empty() || key.empty()) return false;
  auto [kp, kec] = std::from_chars(key.data(), key.data() + key.size(), out.key);
  if (kec != std::errc() || kp != key.data() + key.size()) return false;
  static const std::set<std::string> known{"ingest",     "compromise", "encrypt", "decrypt",
                                           "draw",       "distribute", "store"};
  return known.count(out.ev) > 0;
}

}  // namespace

AuditResult audit_report_dir(const std::string& dir) {
  AuditResult r;
  fs::path root(dir);
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    r.malformed = true;
    r.notes.push_back("not a directory: " + dir);
    return r;
  }

  auto keyuse_files = matching_files(root / "logs", "keyuse", ".log");
  auto wire_files = matching_files(root / "logs", "wire", ".log");
  auto table_files = matching_files(root / "tables", "", ".qkt");
  if (keyuse_files.empty()) {
    r.malformed = true;
    r.notes.push_back("no key-usage logs under " + (root / "logs").string());
    return r;
  }

  // --- single-use ledger ---------------------------------------------------
  // A consume is an encrypt or a decrypt. Per (node, scope, key) at most one
  // consume ever; across the whole network each quantum key is encrypted
  // with at most once and decrypted with at most once.
  std::map<std::tuple<std::string, std::string, uint64_t>, uint64_t> per_node_consumes;
  std::map<std::pair<std::string, uint64_t>, uint64_t> global_encrypts;
  std::map<std::pair<std::string, uint64_t>, uint64_t> global_decrypts;
  std::map<std::pair<std::string, uint64_t>, std::set<std::string>> compromised_by;
  std::map<std::pair<std::string, uint64_t>, std::set<std::string>> consumed_by;

  for (const auto& path : keyuse_files) {
    std::vector<std::string> lines;
    if (!read_lines(path, lines)) {
      r.malformed = true;
      r.notes.push_back("unreadable: " + path.string());
      return r;
    }
    for (const auto& line : lines) {
      KeyuseEvent e;
      if (!parse_keyuse(line, e)) {
        r.malformed = true;
        r.notes.push_back("malformed key-usage line in " + path.filename().string() + ": " + line);
        return r;
      }
      ++r.keyuse_events;
      if (e.ev == "encrypt" || e.ev == "decrypt") {
        ++per_node_consumes[{e.node, e.scope, e.key}];
        consumed_by[{e.scope, e.key}].insert(e.node);
        if (e.ev == "encrypt") ++global_encrypts[{e.scope, e.key}];
        else ++global_decrypts[{e.scope, e.key}];
      } else if (e.ev == "compromise") {
        compromised_by[{e.scope, e.key}].insert(e.node);
      }
    }
  }

  for (const auto& [k, n] : per_node_consumes) {
    if (n > 1) {
      r.violations.push_back("key reuse: node " + std::get<0>(k) + " consumed " + std::get<1>(k) +
                             " key " + std::to_string(std::get<2>(k)) + " " + std::to_string(n) +
                             " times");
    }
  }
  for (const auto& [k, n] : global_encrypts) {
    if (n > 1) {
      r.violations.push_back("key reuse: " + k.first + " key " + std::to_string(k.second) +
                             " encrypted with " + std::to_string(n) + " times");
    }
  }
  for (const auto& [k, n] : global_decrypts) {
    if (n > 1) {
      r.violations.push_back("key reuse: " + k.first + " key " + std::to_string(k.second) +
                             " decrypted with " + std::to_string(n) + " times");
    }
  }
  for (const auto& [k, nodes] : compromised_by) {
    if (auto it = consumed_by.find(k); it != consumed_by.end()) {
      r.violations.push_back("compromised key consumed: " + k.first + " key " +
                             std::to_string(k.second) + " at node " + *it->second.begin());
    }
  }

  // --- table inventory -------------------------------------------------
  // <node>_nk.qkt carries that node's network-key pool; the bits feed both
  // the cleartext scan and the cross-node consistency check.
  std::map<std::string, std::set<std::string>> nk_bits_by_node;  // node -> hex(bits) set
  std::set<std::string> all_nk_hex;
  for (const auto& path : table_files) {
    auto loaded = KeyTable::load(path.string());
    if (!loaded.ok()) {
      r.malformed = true;
      r.notes.push_back("unreadable table: " + path.filename().string() + " (" +
                        err_name(loaded.error()) + ")");
      return r;
    }
    ++r.tables_seen;
    if (!loaded.value().scope().is_network()) continue;
    std::string name = path.filename().string();  // <node>_nk.qkt
    std::string node = name.substr(0, name.find("_nk.qkt"));
    for (const auto& rec : loaded.value().records()) {
      std::string hex = to_hex32(rec.bits);
      nk_bits_by_node[node].insert(hex);
      all_nk_hex.insert(hex);
    }
  }

  // --- cleartext scan ----------------------------------------------------
  // A network key's raw bits must never appear in any transmitted frame;
  // the wire log keeps full frame hex for exactly this check.
  std::string haystack;
  for (const auto& path : wire_files) {
    std::vector<std::string> lines;
    if (!read_lines(path, lines)) {
      r.malformed = true;
      r.notes.push_back("unreadable: " + path.string());
      return r;
    }
    for (const auto& line : lines) {
      ++r.wire_lines;
      std::string bytes = field_of(line, "bytes");
      if (!bytes.empty()) {
        haystack += bytes;
        haystack += '|';  // keys cannot straddle frames
      }
    }
  }
  for (const auto& hex : all_nk_hex) {
    if (haystack.find(hex) != std::string::npos) {
      r.violations.push_back("network key transmitted in cleartext: bits " + hex.substr(0, 16) +
                             "...");
    }
  }

  // --- cross-node consistency ---------------------------------------------
  // Every pool must be a subset of the largest (the manager retains all
  // distributed keys); a smaller pool is a delivery shortfall, not a
  // violation, but differing bits at equal size is divergence.
  if (nk_bits_by_node.size() > 1) {
    std::vector<std::pair<std::string, const std::set<std::string>*>> pools;
    for (const auto& [node, bits] : nk_bits_by_node) pools.emplace_back(node, &bits);
    std::sort(pools.begin(), pools.end(), [](const auto& a, const auto& b) {
      if (a.second->size() != b.second->size()) return a.second->size() > b.second->size();
      return a.first < b.first;
    });
    const auto& [top_node, top] = pools.front();
    for (size_t i = 1; i < pools.size(); ++i) {
      const auto& [node, bits] = pools[i];
      bool subset = std::includes(top->begin(), top->end(), bits->begin(), bits->end());
      if (!subset) {
        r.violations.push_back("network key divergence: " + node + " holds keys absent from " +
                               top_node);
      } else if (bits->size() < top->size()) {
        r.notes.push_back("delivery shortfall: " + node + " holds " +
                          std::to_string(bits->size()) + " of " + std::to_string(top->size()) +
                          " network keys");
      }
    }
  }

  std::sort(r.violations.begin(), r.violations.end());
  return r;
}

std::string audit_text(const AuditResult& r) {
  std::string out;
  out += "audit: " + std::to_string(r.keyuse_events) + " key events, " +
         std::to_string(r.wire_lines) + " wire lines, " + std::to_string(r.tables_seen) +
         " tables\n";
  for (const auto& v : r.violations) out += "VIOLATION: " + v + "\n";
  for (const auto& n : r.notes) out += "note: " + n + "\n";
  out += r.malformed ? "result: malformed input\n" : (r.ok() ? "result: clean\n" : "result: violations found\n");
  return out;
}

}  // namespace qkdnet
