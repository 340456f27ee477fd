#include "qkdnet/scenario.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "qkdnet/sha256.hpp"

namespace qkdnet {

using nlohmann::json;

std::vector<std::string> Scenario::validate() const {
  std::vector<std::string> errs;
  auto bad = [&](const std::string& m) { errs.push_back(m); };

  if (duration_s < 0) bad("duration_s: must be >= 0");
  if (!(policy.threshold > policy.reserve)) bad("policy: threshold must exceed reserve");
  if (fresh_cap != 0 && fresh_cap < policy.threshold) {
    bad("fresh_cap: below policy.threshold, transfers could never trigger");
  }
  if (fresh_cap != 0 && initial_pool > fresh_cap) bad("initial_pool: exceeds fresh_cap");
  if (poll_period_s <= 0) bad("poll_period_s: must be > 0");
  if (report_period_s <= 0) bad("report_period_s: must be > 0");
  if (batch_timeout_s <= 0) bad("batch_timeout_s: must be > 0");
  if (hop_delay_s < 0) bad("hop_delay_s: must be >= 0");
  if (time_compression < 1.0) bad("time_compression: must be >= 1");

  if (nodes.size() < 2) {
    bad("nodes: need at least a manager and an edge node");
  } else {
    if (nodes.front().role != Role::NetworkManager) bad("nodes[0]: role must be nm");
    if (nodes.back().role != Role::EdgeNode) bad("nodes[last]: role must be en");
    for (size_t i = 1; i + 1 < nodes.size(); ++i) {
      if (nodes[i].role != Role::TrustedNode) {
        bad("nodes[" + std::to_string(i) + "]: interior role must be tn");
      }
    }
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].node_id.empty()) bad("nodes[" + std::to_string(i) + "]: id required");
      for (size_t j = i + 1; j < nodes.size(); ++j) {
        if (nodes[i].node_id == nodes[j].node_id) {
          bad("nodes: duplicate id '" + nodes[i].node_id + "'");
        }
      }
    }
  }

  if (nodes.size() >= 2 && links.size() != nodes.size() - 1) {
    bad("links: count must be nodes-1 (linear topology)");
  }
  for (size_t i = 0; i < links.size(); ++i) {
    const auto& l = links[i];
    if (l.link_index != i + 1) {
      bad("links[" + std::to_string(i) + "]: index must be " + std::to_string(i + 1));
    }
    std::string p = l.validate();
    if (!p.empty()) bad("links[" + std::to_string(i) + "]: " + p);
  }

  for (size_t i = 0; i < disturbances.size(); ++i) {
    const auto& d = disturbances[i];
    std::string at = "disturbances[" + std::to_string(i) + "]: ";
    if (d.link_index < 1 || d.link_index > links.size()) bad(at + "unknown link");
    if (!(d.start_s < d.end_s)) bad(at + "start_s must be < end_s");
    if (d.start_s < 0 || d.end_s > duration_s) bad(at + "window outside [0, duration]");
    if (d.skr_scale < 0 || d.skr_scale > 1) bad(at + "skr_scale must be in [0,1]");
    if (d.qber_add_pct < 0) bad(at + "qber_add_pct must be >= 0");
  }

  for (size_t i = 0; i < outages.size(); ++i) {
    const auto& o = outages[i];
    std::string at = "outages[" + std::to_string(i) + "]: ";
    auto known = [&](const std::string& id) {
      for (const auto& n : nodes) {
        if (n.node_id == id) return true;
      }
      return false;
    };
    if (!known(o.a)) bad(at + "unknown node '" + o.a + "'");
    if (!known(o.b)) bad(at + "unknown node '" + o.b + "'");
    if (o.a == o.b) bad(at + "endpoints must differ");
    if (o.start_s > o.end_s) bad(at + "start_s must be <= end_s");
    if (o.start_s < 0 || o.end_s > duration_s) bad(at + "window outside [0, duration]");
  }
  return errs;
}

namespace {

// Rejects keys outside the documented grammar so typos fail loudly.
void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where,
                std::vector<std::string>& errs) {
  if (!obj.is_object()) return;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) errs.push_back(where + ": unknown key '" + it.key() + "'");
  }
}

bool want_number(const json& obj, const char* key, const std::string& where, bool required,
                 std::vector<std::string>& errs, double& out) {
  if (!obj.contains(key)) {
    if (required) errs.push_back(where + "." + key + ": required");
    return false;
  }
  if (!obj[key].is_number()) {
    errs.push_back(where + "." + key + ": must be a number");
    return false;
  }
  out = obj[key].get<double>();
  return true;
}

bool want_string(const json& obj, const char* key, const std::string& where, bool required,
                 std::vector<std::string>& errs, std::string& out) {
  if (!obj.contains(key)) {
    if (required) errs.push_back(where + "." + key + ": required");
    return false;
  }
  if (!obj[key].is_string()) {
    errs.push_back(where + "." + key + ": must be a string");
    return false;
  }
  out = obj[key].get<std::string>();
  return true;
}

}  // namespace

ScenarioLoad load_scenario(std::string_view text) {
  ScenarioLoad out;
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    out.errors.push_back("not valid JSON");
    return out;
  }
  if (!j.is_object()) {
    out.errors.push_back("top level: must be an object");
    return out;
  }
  auto& errs = out.errors;
  check_keys(j,
             {"name", "duration_s", "seed", "policy", "fresh_cap", "initial_pool", "poll_period_s",
              "report_period_s", "batch_timeout_s", "hop_delay_s", "time_compression", "nodes",
              "links", "disturbances", "outages"},
             "top level", errs);

  Scenario sc;
  std::string s;
  double d = 0;
  if (want_string(j, "name", "top level", false, errs, s)) sc.name = s;
  if (want_number(j, "duration_s", "top level", true, errs, d)) sc.duration_s = d;
  if (want_number(j, "seed", "top level", false, errs, d)) sc.seed = j["seed"].get<uint64_t>();
  if (j.contains("policy")) {
    check_keys(j["policy"], {"threshold", "reserve"}, "policy", errs);
    if (want_number(j["policy"], "threshold", "policy", true, errs, d)) {
      sc.policy.threshold = uint64_t(d);
    }
    if (want_number(j["policy"], "reserve", "policy", true, errs, d)) sc.policy.reserve = uint64_t(d);
  }
  if (want_number(j, "fresh_cap", "top level", false, errs, d)) sc.fresh_cap = uint64_t(d);
  if (want_number(j, "initial_pool", "top level", false, errs, d)) sc.initial_pool = uint64_t(d);
  if (want_number(j, "poll_period_s", "top level", false, errs, d)) sc.poll_period_s = d;
  if (want_number(j, "report_period_s", "top level", false, errs, d)) sc.report_period_s = d;
  if (want_number(j, "batch_timeout_s", "top level", false, errs, d)) sc.batch_timeout_s = d;
  if (want_number(j, "hop_delay_s", "top level", false, errs, d)) sc.hop_delay_s = d;
  if (want_number(j, "time_compression", "top level", false, errs, d)) sc.time_compression = d;

  if (!j.contains("nodes")) {
    errs.push_back("nodes: required");
  } else if (!j["nodes"].is_array()) {
    errs.push_back("nodes: must be an array");
  } else {
    size_t i = 0;
    for (const auto& nj : j["nodes"]) {
      std::string where = "nodes[" + std::to_string(i++) + "]";
      check_keys(nj, {"id", "role"}, where, errs);
      NodeSpec spec;
      want_string(nj, "id", where, true, errs, spec.node_id);
      std::string role;
      if (want_string(nj, "role", where, true, errs, role)) {
        auto r = role_from_name(role);
        if (!r.ok()) {
          errs.push_back(where + ".role: must be nm, tn, or en");
        } else {
          spec.role = r.value();
        }
      }
      sc.nodes.push_back(std::move(spec));
    }
  }

  if (!j.contains("links")) {
    errs.push_back("links: required");
  } else if (!j["links"].is_array()) {
    errs.push_back("links: must be an array");
  } else {
    size_t i = 0;
    for (const auto& lj : j["links"]) {
      std::string where = "links[" + std::to_string(i++) + "]";
      check_keys(lj,
                 {"index", "protocol", "length_km", "loss_db", "skr_mean_bps", "skr_std_bps",
                  "qber_mean_pct", "qber_std_pct", "compromise_threshold_pct", "delivery",
                  "cycle_period_s"},
                 where, errs);
      LinkProfile p;
      if (want_number(lj, "index", where, true, errs, d)) p.link_index = uint32_t(d);
      std::string tag;
      if (want_string(lj, "protocol", where, true, errs, tag)) {
        auto t = protocol_from_name(tag);
        if (!t.ok()) {
          errs.push_back(where + ".protocol: must be bbm92, bb84, or sarg04");
        } else {
          p.protocol = t.value();
        }
      }
      if (want_number(lj, "length_km", where, true, errs, d)) p.length_km = d;
      if (want_number(lj, "loss_db", where, true, errs, d)) p.loss_db = d;
      if (want_number(lj, "skr_mean_bps", where, true, errs, d)) p.skr_mean_bps = d;
      if (want_number(lj, "skr_std_bps", where, false, errs, d)) p.skr_std_bps = d;
      if (want_number(lj, "qber_mean_pct", where, true, errs, d)) p.qber_mean_pct = d;
      if (want_number(lj, "qber_std_pct", where, false, errs, d)) p.qber_std_pct = d;
      if (want_number(lj, "compromise_threshold_pct", where, false, errs, d)) {
        p.compromise_threshold_pct = d;
      }
      if (want_string(lj, "delivery", where, true, errs, tag)) {
        auto m = delivery_from_name(tag);
        if (!m.ok()) {
          errs.push_back(where + ".delivery: must be packet_stream, append_file, or rewrite_file");
        } else {
          p.delivery = m.value();
        }
      }
      if (want_number(lj, "cycle_period_s", where, true, errs, d)) p.cycle_period_s = d;
      sc.links.push_back(p);
    }
  }

  if (j.contains("disturbances")) {
    if (!j["disturbances"].is_array()) {
      errs.push_back("disturbances: must be an array");
    } else {
      size_t i = 0;
      for (const auto& dj : j["disturbances"]) {
        std::string where = "disturbances[" + std::to_string(i++) + "]";
        check_keys(dj, {"link", "start_s", "end_s", "qber_add_pct", "skr_scale"}, where, errs);
        DisturbanceWindow w;
        if (want_number(dj, "link", where, true, errs, d)) w.link_index = uint32_t(d);
        if (want_number(dj, "start_s", where, true, errs, d)) w.start_s = d;
        if (want_number(dj, "end_s", where, true, errs, d)) w.end_s = d;
        if (want_number(dj, "qber_add_pct", where, false, errs, d)) w.qber_add_pct = d;
        if (want_number(dj, "skr_scale", where, false, errs, d)) w.skr_scale = d;
        sc.disturbances.push_back(w);
      }
    }
  }

  if (j.contains("outages")) {
    if (!j["outages"].is_array()) {
      errs.push_back("outages: must be an array");
    } else {
      size_t i = 0;
      for (const auto& oj : j["outages"]) {
        std::string where = "outages[" + std::to_string(i++) + "]";
        check_keys(oj, {"a", "b", "start_s", "end_s"}, where, errs);
        OutageWindow w;
        want_string(oj, "a", where, true, errs, w.a);
        want_string(oj, "b", where, true, errs, w.b);
        if (want_number(oj, "start_s", where, true, errs, d)) w.start_s = d;
        if (want_number(oj, "end_s", where, true, errs, d)) w.end_s = d;
        sc.outages.push_back(w);
      }
    }
  }

  if (errs.empty()) {
    auto more = sc.validate();
    errs.insert(errs.end(), more.begin(), more.end());
  }
  if (errs.empty()) out.scenario = std::move(sc);
  return out;
}

ScenarioLoad load_scenario_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    ScenarioLoad out;
    out.errors.push_back("cannot read scenario file: " + path);
    return out;
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return load_scenario(ss.str());
}

std::string scenario_to_json(const Scenario& sc) {
  json j;
  j["name"] = sc.name;
  j["duration_s"] = sc.duration_s;
  j["seed"] = sc.seed;
  j["policy"] = {{"threshold", sc.policy.threshold}, {"reserve", sc.policy.reserve}};
  j["fresh_cap"] = sc.fresh_cap;
  j["initial_pool"] = sc.initial_pool;
  j["poll_period_s"] = sc.poll_period_s;
  j["report_period_s"] = sc.report_period_s;
  j["batch_timeout_s"] = sc.batch_timeout_s;
  j["hop_delay_s"] = sc.hop_delay_s;
  j["time_compression"] = sc.time_compression;
  j["nodes"] = json::array();
  for (const auto& n : sc.nodes) j["nodes"].push_back({{"id", n.node_id}, {"role", role_name(n.role)}});
  j["links"] = json::array();
  for (const auto& l : sc.links) {
    j["links"].push_back({{"index", l.link_index},
                          {"protocol", protocol_name(l.protocol)},
                          {"length_km", l.length_km},
                          {"loss_db", l.loss_db},
                          {"skr_mean_bps", l.skr_mean_bps},
                          {"skr_std_bps", l.skr_std_bps},
                          {"qber_mean_pct", l.qber_mean_pct},
                          {"qber_std_pct", l.qber_std_pct},
                          {"compromise_threshold_pct", l.compromise_threshold_pct},
                          {"delivery", delivery_name(l.delivery)},
                          {"cycle_period_s", l.cycle_period_s}});
  }
  j["disturbances"] = json::array();
  for (const auto& w : sc.disturbances) {
    j["disturbances"].push_back({{"link", w.link_index},
                                 {"start_s", w.start_s},
                                 {"end_s", w.end_s},
                                 {"qber_add_pct", w.qber_add_pct},
                                 {"skr_scale", w.skr_scale}});
  }
  j["outages"] = json::array();
  for (const auto& o : sc.outages) {
    j["outages"].push_back({{"a", o.a}, {"b", o.b}, {"start_s", o.start_s}, {"end_s", o.end_s}});
  }
  return j.dump(2) + "\n";
}

// --- bundled presets ------------------------------------------------------

namespace {

Scenario base_table1() {
  Scenario sc;
  sc.name = "epb_table1";
  sc.duration_s = 600;
  sc.seed = 7;
  sc.policy = TransferPolicy{60, 20};
  sc.fresh_cap = 60;
  sc.initial_pool = 20;
  sc.nodes = {{"nm", Role::NetworkManager},
              {"tn1", Role::TrustedNode},
              {"tn2", Role::TrustedNode},
              {"en", Role::EdgeNode}};
  LinkProfile l1;
  l1.link_index = 1;
  l1.protocol = ProtocolTag::BBM92;
  l1.length_km = 3.4;
  l1.loss_db = 1.3;
  l1.skr_mean_bps = 128;  // one 256-bit key each 2 s cycle, jitterless
  l1.skr_std_bps = 0;
  l1.qber_mean_pct = 2.0;
  l1.qber_std_pct = 0.0;
  l1.compromise_threshold_pct = 13.0;
  l1.delivery = DeliveryMode::PacketStream;
  l1.cycle_period_s = 2.0;
  LinkProfile l2;
  l2.link_index = 2;
  l2.protocol = ProtocolTag::BB84;
  l2.length_km = 10.2;
  l2.loss_db = 3.1;
  l2.skr_mean_bps = 1310;
  l2.skr_std_bps = 150;
  l2.qber_mean_pct = 3.9;
  l2.qber_std_pct = 1.3;
  l2.delivery = DeliveryMode::AppendFile;
  l2.cycle_period_s = 1.0;
  LinkProfile l3;
  l3.link_index = 3;
  l3.protocol = ProtocolTag::SARG04;
  l3.length_km = 8.3;
  l3.loss_db = 2.9;
  l3.skr_mean_bps = 1892;
  l3.skr_std_bps = 126;
  l3.qber_mean_pct = 1.4;
  l3.qber_std_pct = 0.1;
  l3.delivery = DeliveryMode::RewriteFile;
  l3.cycle_period_s = 1.0;
  sc.links = {l1, l2, l3};
  return sc;
}

}  // namespace

std::vector<std::string> builtin_scenario_names() { return {"epb_table1", "epb_outage", "epb_wind"}; }

std::optional<Scenario> builtin_scenario(const std::string& name) {
  if (name == "epb_table1") return base_table1();
  if (name == "epb_outage") {
    Scenario sc = base_table1();
    sc.name = "epb_outage";
    sc.outages = {{"nm", "tn2", 120, 165}, {"nm", "tn1", 300, 340}};
    return sc;
  }
  if (name == "epb_wind") {
    Scenario sc = base_table1();
    sc.name = "epb_wind";
    DisturbanceWindow wind;
    wind.link_index = 2;
    wind.start_s = 200;
    wind.end_s = 320;
    wind.qber_add_pct = 2.6;
    wind.skr_scale = 0.45;
    DisturbanceWindow burst;
    burst.link_index = 1;
    burst.start_s = 240;
    burst.end_s = 280;
    burst.qber_add_pct = 12.5;
    burst.skr_scale = 1.0;
    sc.disturbances = {wind, burst};
    return sc;
  }
  return std::nullopt;
}

ScenarioLoad resolve_scenario(const std::string& ref) {
  if (auto sc = builtin_scenario(ref)) {
    ScenarioLoad out;
    out.scenario = std::move(*sc);
    return out;
  }
  return load_scenario_file(ref);
}

// --- node config ------------------------------------------------------------

namespace {

Psk derive_psk(uint64_t seed, const std::string& a, const std::string& b) {
  const std::string& lo = a < b ? a : b;
  const std::string& hi = a < b ? b : a;
  Bytes material;
  const char* label = "psk|";
  material.insert(material.end(), label, label + 4);
  material.insert(material.end(), lo.begin(), lo.end());
  material.push_back('|');
  material.insert(material.end(), hi.begin(), hi.end());
  put_u64be(material, seed);
  return sha256(material);
}

}  // namespace

NodeConfig make_node_config(const Scenario& sc, size_t node_index) {
  const NodeSpec& spec = sc.nodes.at(node_index);
  NodeConfig cfg;
  cfg.node_id = spec.node_id;
  cfg.role = spec.role;
  cfg.nm_id = sc.nodes.front().node_id;
  cfg.total_links = uint32_t(sc.links.size());
  cfg.policy = sc.policy;
  cfg.fresh_cap = sc.fresh_cap;
  cfg.poll_period_s = sc.poll_period_s;
  cfg.report_period_s = sc.report_period_s;
  cfg.batch_timeout_s = sc.batch_timeout_s;
  cfg.hop_delay_s = sc.hop_delay_s;
  if (node_index > 0) {
    cfg.left_link = sc.links[node_index - 1].link_index;
    cfg.left_peer = sc.nodes[node_index - 1].node_id;
    cfg.psks[cfg.left_peer] = derive_psk(sc.seed, cfg.node_id, cfg.left_peer);
  }
  if (node_index + 1 < sc.nodes.size()) {
    cfg.right_link = sc.links[node_index].link_index;
    cfg.right_peer = sc.nodes[node_index + 1].node_id;
    cfg.psks[cfg.right_peer] = derive_psk(sc.seed, cfg.node_id, cfg.right_peer);
  }
  if (spec.role == Role::NetworkManager) {
    cfg.nk_seed = mix_seed(sc.seed, "network-keys");
    for (const auto& other : sc.nodes) {
      if (other.node_id == cfg.node_id) continue;
      cfg.psks.emplace(other.node_id, derive_psk(sc.seed, cfg.node_id, other.node_id));
    }
  } else if (!cfg.psks.count(cfg.nm_id)) {
    cfg.psks[cfg.nm_id] = derive_psk(sc.seed, cfg.node_id, cfg.nm_id);
  }
  return cfg;
}

}  // namespace qkdnet
