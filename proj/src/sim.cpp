#include "qkdnet/sim.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <queue>

#include "json.hpp"

#include "qkdnet/sha256.hpp"

namespace qkdnet {

namespace {

// Same-instant ordering: outage releases first (held traffic precedes new
// work), then key production, ingestion, reporting, message delivery, and
// finally observation-only events.
enum EvPrio : int {
  kPrioRelease = 0,
  kPrioCycle = 1,
  kPrioPoll = 2,
  kPrioReport = 3,
  kPrioDeliver = 4,
  kPrioSample = 5,
  kPrioCheckpoint = 6,
};

struct Ev {
  TimeNs t = 0;
  int prio = 0;
  uint64_t order = 0;  // insertion tiebreak: deterministic FIFO
  enum Kind { Cycle, Poll, Report, Deliver, Release, Sample, Checkpoint } kind = Cycle;
  uint32_t link = 0;
  uint64_t cycle_index = 0;
  size_t node = 0;
  std::string from;
  std::string to;
  Bytes frame;
  size_t outage = 0;
};

struct EvAfter {
  bool operator()(const Ev& a, const Ev& b) const {
    if (a.t != b.t) return a.t > b.t;
    if (a.prio != b.prio) return a.prio > b.prio;
    return a.order > b.order;
  }
};

class Sim {
 public:
  Sim(const Scenario& sc, const SimOptions& opt) : sc_(sc), opt_(opt) {
    for (size_t i = 0; i < sc_.nodes.size(); ++i) {
      nodes_.push_back(std::make_unique<Node>(make_node_config(sc_, i)));
      by_id_[sc_.nodes[i].node_id] = i;
    }
    for (size_t li = 0; li < sc_.links.size(); ++li) {
      const LinkProfile& p = sc_.links[li];
      media_.push_back(std::make_unique<MemoryMedium>());
      emitters_.emplace_back(p, mix_seed(sc_.seed, "link", p.link_index));
      Node& left = *nodes_[li];
      Node& right = *nodes_[li + 1];
      left.attach_feed(p.link_index, media_.back().get(), p.delivery);
      right.attach_feed(p.link_index, media_.back().get(), p.delivery);
      if (sc_.initial_pool > 0) {
        left.warm_start(p.link_index, sc_.initial_pool, sc_.seed);
        right.warm_start(p.link_index, sc_.initial_pool, sc_.seed);
      }
    }
    schedule_ticks();
  }

  SimReport run() {
    while (!q_.empty() && violation_.empty()) {
      Ev ev = q_.top();
      q_.pop();
      now_ = ev.t;
      dispatch(ev);
      ++events_;
    }
    return finalize();
  }

 private:
  const Scenario& sc_;
  SimOptions opt_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::map<std::string, size_t> by_id_;
  std::vector<std::unique_ptr<MemoryMedium>> media_;
  std::vector<LinkEmitter> emitters_;
  Recorder truth_;
  std::priority_queue<Ev, std::vector<Ev>, EvAfter> q_;
  uint64_t order_ = 0;
  std::map<size_t, std::vector<Ev>> held_;  // outage index -> held deliveries
  TimeNs now_ = 0;
  uint64_t events_ = 0;
  uint64_t deliver_index_ = 0;
  std::string violation_;

  void push(Ev ev) {
    ev.order = ++order_;
    q_.push(std::move(ev));
  }

  void schedule_ticks() {
    const double dur = sc_.duration_s;
    for (const LinkProfile& p : sc_.links) {
      for (uint64_t k = 1; double(k) * p.cycle_period_s <= dur + 1e-9; ++k) {
        Ev ev;
        ev.t = seconds_to_ns(double(k) * p.cycle_period_s);
        ev.prio = kPrioCycle;
        ev.kind = Ev::Cycle;
        ev.link = p.link_index;
        ev.cycle_index = k;
        push(std::move(ev));
      }
    }
    for (size_t n = 0; n < nodes_.size(); ++n) {
      for (uint64_t k = 1; double(k) * sc_.poll_period_s <= dur + 1e-9; ++k) {
        Ev ev;
        ev.t = seconds_to_ns(double(k) * sc_.poll_period_s);
        ev.prio = kPrioPoll;
        ev.kind = Ev::Poll;
        ev.node = n;
        push(std::move(ev));
      }
      for (uint64_t k = 1; double(k) * sc_.report_period_s <= dur + 1e-9; ++k) {
        Ev ev;
        ev.t = seconds_to_ns(double(k) * sc_.report_period_s);
        ev.prio = kPrioReport;
        ev.kind = Ev::Report;
        ev.node = n;
        push(std::move(ev));
      }
    }
    for (uint64_t k = 1; double(k) <= dur + 1e-9; ++k) {
      Ev ev;
      ev.t = seconds_to_ns(double(k));
      ev.prio = kPrioSample;
      ev.kind = Ev::Sample;
      push(std::move(ev));
    }
    for (uint64_t k = 1; double(k) * opt_.checkpoint_period_s <= dur + 1e-9; ++k) {
      Ev ev;
      ev.t = seconds_to_ns(double(k) * opt_.checkpoint_period_s);
      ev.prio = kPrioCheckpoint;
      ev.kind = Ev::Checkpoint;
      push(std::move(ev));
    }
    for (size_t i = 0; i < sc_.outages.size(); ++i) {
      Ev ev;
      ev.t = seconds_to_ns(sc_.outages[i].end_s);
      ev.prio = kPrioRelease;
      ev.kind = Ev::Release;
      ev.outage = i;
      push(std::move(ev));
    }
  }

  void collect_outgoing() {
    TimeNs deliver_at = now_ + seconds_to_ns(sc_.hop_delay_s);
    for (auto& node : nodes_) {
      for (Outgoing& out : node->take_outgoing()) {
        Ev ev;
        ev.t = deliver_at;
        ev.prio = kPrioDeliver;
        ev.kind = Ev::Deliver;
        ev.from = node->id();
        ev.to = std::move(out.to);
        ev.frame = std::move(out.frame);
        push(std::move(ev));
      }
    }
  }

  void dispatch(Ev& ev) {
    switch (ev.kind) {
      case Ev::Cycle: on_cycle(ev); break;
      case Ev::Poll:
        nodes_[ev.node]->on_poll_tick(now_);
        collect_outgoing();
        break;
      case Ev::Report:
        nodes_[ev.node]->on_report_tick(now_);
        collect_outgoing();
        break;
      case Ev::Deliver: on_deliver(ev); break;
      case Ev::Release: on_release(ev); break;
      case Ev::Sample: on_sample(); break;
      case Ev::Checkpoint: run_checks(); break;
    }
  }

  void on_cycle(Ev& ev) {
    size_t li = ev.link - 1;
    double now_s = ns_to_seconds(now_);
    CycleOutput out = emitters_[li].run_cycle(ev.cycle_index, now_s, sc_.disturbances, *media_[li]);
    SeriesPoint p;
    p.measurement = "link_cycle";
    p.tags = {{"link", std::to_string(ev.link)}};
    p.fields = {{"skr_bps", out.skr_bps},
                {"qber_pct", out.qber_pct},
                {"nbits", double(out.nbits)},
                {"flagged", out.qber_pct > sc_.links[li].compromise_threshold_pct ? 1.0 : 0.0}};
    p.timestamp_ns = now_;
    truth_.record(std::move(p));
    nodes_[li]->on_link_cycle(ev.link, out.skr_bps, out.qber_pct, now_);
    nodes_[li + 1]->on_link_cycle(ev.link, out.skr_bps, out.qber_pct, now_);
  }

  void on_deliver(Ev& ev) {
    double now_s = ns_to_seconds(now_);
    for (size_t i = 0; i < sc_.outages.size(); ++i) {
      if (sc_.outages[i].covers(ev.from, ev.to, now_s)) {
        held_[i].push_back(std::move(ev));
        return;
      }
    }
    uint64_t idx = deliver_index_++;
    if (opt_.tamperer) opt_.tamperer(ev.from, ev.to, idx, ev.frame);
    auto it = by_id_.find(ev.to);
    if (it == by_id_.end()) return;
    nodes_[it->second]->on_frame(ev.from, ev.frame, now_);
    collect_outgoing();
  }

  void on_release(Ev& ev) {
    auto it = held_.find(ev.outage);
    if (it == held_.end()) return;
    std::vector<Ev> msgs = std::move(it->second);
    held_.erase(it);
    for (Ev& m : msgs) {
      uint64_t idx = deliver_index_++;
      if (opt_.tamperer) opt_.tamperer(m.from, m.to, idx, m.frame);
      auto to = by_id_.find(m.to);
      if (to == by_id_.end()) continue;
      nodes_[to->second]->on_frame(m.from, m.frame, now_);
      collect_outgoing();
    }
  }

  void on_sample() {
    for (size_t li = 0; li < sc_.links.size(); ++li) {
      uint32_t link = sc_.links[li].link_index;
      for (size_t side = 0; side < 2; ++side) {
        Node& node = *nodes_[li + side];
        const KeyTable* t = node.link_table(link);
        const FeedConsumer* c = node.link_consumer(link);
        if (!t || !c) continue;
        SeriesPoint p;
        p.measurement = "link_pool";
        p.tags = {{"link", std::to_string(link)}, {"end", node.id()}};
        p.fields = {{"available_qk", double(t->available())},
                    {"used_qk", double(t->used())},
                    {"compromised_qk", double(t->compromised())},
                    {"pending", double(c->pending())}};
        p.timestamp_ns = now_;
        truth_.record(std::move(p));
      }
    }
  }

  void fail(const std::string& what) {
    if (violation_.empty()) violation_ = what;
  }

  void run_checks() {
    for (auto& node : nodes_) {
      std::string v = node->nk_table().check_invariants();
      if (!v.empty()) {
        fail("node " + node->id() + " nk table: " + v);
        return;
      }
      for (const LinkProfile& p : sc_.links) {
        const KeyTable* t = node->link_table(p.link_index);
        if (!t) continue;
        v = t->check_invariants();
        if (!v.empty()) {
          fail("node " + node->id() + " qk" + std::to_string(p.link_index) + ": " + v);
          return;
        }
      }
    }
    if (!opt_.strict_cross_checks) return;
    // Both ends of a link must agree on every record both have ingested;
    // transient length skew is admission lag, not divergence.
    for (size_t li = 0; li < sc_.links.size(); ++li) {
      uint32_t link = sc_.links[li].link_index;
      const auto& a = nodes_[li]->link_table(link)->records();
      const auto& b = nodes_[li + 1]->link_table(link)->records();
      size_t n = std::min(a.size(), b.size());
      for (size_t i = 0; i < n; ++i) {
        if (a[i].id != b[i].id || a[i].bits != b[i].bits) {
          fail("link " + std::to_string(link) + " table divergence at id " + std::to_string(i));
          return;
        }
      }
    }
    // Network keys propagate in order, so every node's pool is a prefix
    // match of the manager's.
    const auto& nm = nodes_.front()->nk_table().records();
    for (size_t ni = 1; ni < nodes_.size(); ++ni) {
      const auto& other = nodes_[ni]->nk_table().records();
      if (other.size() > nm.size()) {
        fail("node " + nodes_[ni]->id() + " holds more network keys than the manager");
        return;
      }
      for (size_t i = 0; i < other.size(); ++i) {
        if (other[i].bits != nm[i].bits) {
          fail("network key divergence at " + nodes_[ni]->id() + " id " + std::to_string(i));
          return;
        }
      }
    }
  }

  SimReport finalize() {
    SimReport r;
    r.scenario_name = sc_.name;
    r.seed = sc_.seed;
    r.duration_s = sc_.duration_s;
    r.events_processed = events_;
    r.invariant_violation = violation_;

    Node& nm = *nodes_.front();
    r.transfers_completed = nm.transfers_completed();
    r.nk_delivered = nm.nk_delivered();
    r.keys_failed = nm.keys_failed();
    r.triggers = nm.triggers();
    r.network_key_rate = sc_.duration_s > 0 ? double(r.nk_delivered) / sc_.duration_s : 0.0;

    for (auto& node : nodes_) {
      r.nk_count[node->id()] = node->nk_table().record_count();
      r.nk_digest_hex[node->id()] = to_hex32(node->nk_table().content_digest());
      r.table_files[node->id() + "_nk.qkt"] = node->nk_table().serialize();
      for (const LinkProfile& p : sc_.links) {
        if (const KeyTable* t = node->link_table(p.link_index)) {
          r.table_files[node->id() + "_qk" + std::to_string(p.link_index) + ".qkt"] = t->serialize();
        }
      }
      const NodeCounters& c = node->counters();
      r.counters_total.frames_sent += c.frames_sent;
      r.counters_total.frames_received += c.frames_received;
      r.counters_total.bad_auth += c.bad_auth;
      r.counters_total.stale_seq += c.stale_seq;
      r.counters_total.bad_frames += c.bad_frames;
      r.counters_total.relay_errors_seen += c.relay_errors_seen;
      r.counters_total.batches_timed_out += c.batches_timed_out;
      r.counters_total.hops_dropped += c.hops_dropped;
    }

    for (const LinkProfile& p : sc_.links) {
      std::map<std::string, std::string> tags{{"link", std::to_string(p.link_index)}};
      auto skr = summarize(truth_.field_values("link_cycle", tags, "skr_bps"));
      auto qber = summarize(truth_.field_values("link_cycle", tags, "qber_pct"));
      if (skr.ok()) r.skr_summary[p.link_index] = skr.value();
      if (qber.ok()) r.qber_summary[p.link_index] = qber.value();
    }

    r.telemetry_lines = truth_.export_lines();
    for (auto& node : nodes_) r.telemetry_lines += node->telemetry().export_lines();
    for (const auto& pt : truth_.points()) r.all_points.push_back(pt);
    for (auto& node : nodes_) {
      for (const auto& pt : node->telemetry().points()) r.all_points.push_back(pt);
      const auto& ku = node->keyuse_log();
      r.keyuse_log.insert(r.keyuse_log.end(), ku.begin(), ku.end());
      const auto& wl = node->wire_log();
      r.wire_log.insert(r.wire_log.end(), wl.begin(), wl.end());
    }
    return r;
  }
};

}  // namespace

SimReport run_sim(const Scenario& sc) { return run_sim(sc, SimOptions{}); }

SimReport run_sim(const Scenario& sc, const SimOptions& opt) {
  Sim sim(sc, opt);
  return sim.run();
}

std::string summary_text(const SimReport& r) {
  std::string out;
  out += "scenario: " + r.scenario_name + "  seed: " + fmt_u64(r.seed) + "  duration: " +
         fmt_double(r.duration_s) + " s\n";
  for (const auto& [link, s] : r.skr_summary) {
    const Summary* q = nullptr;
    if (auto it = r.qber_summary.find(link); it != r.qber_summary.end()) q = &it->second;
    out += "link " + std::to_string(link) + ": SKR " + fmt_double(s.mean) + " +/- " +
           fmt_double(s.std) + " bps (n=" + fmt_u64(s.n) + ")";
    if (q) out += " | QBER " + fmt_double(q->mean) + " +/- " + fmt_double(q->std) + " %";
    out += "\n";
  }
  out += "transfers completed: " + fmt_u64(r.transfers_completed) + "  keys delivered: " +
         fmt_u64(r.nk_delivered) + "  keys failed: " + fmt_u64(r.keys_failed) + "\n";
  out += "network key rate: " + fmt_double(r.network_key_rate) + " keys/s\n";
  for (const auto& [node, count] : r.nk_count) {
    out += "  " + node + ": " + fmt_u64(count) + " network keys, digest " +
           r.nk_digest_hex.at(node).substr(0, 16) + "\n";
  }
  if (!r.invariant_violation.empty()) out += "INVARIANT VIOLATION: " + r.invariant_violation + "\n";
  return out;
}

namespace {

Err write_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) return Err::Io;
  f.write(text.data(), std::streamsize(text.size()));
  return f.good() ? Err::None : Err::Io;
}

Err write_file(const std::filesystem::path& path, const Bytes& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) return Err::Io;
  f.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  return f.good() ? Err::None : Err::Io;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    out += (std::isalnum(uint8_t(c)) || c == '-' || c == '_' || c == '.') ? c : '-';
  }
  return out;
}

}  // namespace

Err write_report_bundle(const SimReport& r, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "csv", ec);
  fs::create_directories(fs::path(out_dir) / "tables", ec);
  fs::create_directories(fs::path(out_dir) / "logs", ec);
  if (ec) return Err::Io;

  nlohmann::json j;
  j["scenario"] = r.scenario_name;
  j["seed"] = r.seed;
  j["duration_s"] = r.duration_s;
  j["events_processed"] = r.events_processed;
  j["transfers_completed"] = r.transfers_completed;
  j["nk_delivered"] = r.nk_delivered;
  j["keys_failed"] = r.keys_failed;
  j["network_key_rate_keys_per_s"] = r.network_key_rate;
  j["invariant_violation"] = r.invariant_violation;
  nlohmann::json triggers = nlohmann::json::array();
  for (const auto& t : r.triggers) {
    triggers.push_back({{"time_ns", t.time}, {"batch_id", t.batch_id}, {"h", t.h}});
  }
  j["triggers"] = triggers;
  nlohmann::json links;
  for (const auto& [link, s] : r.skr_summary) {
    nlohmann::json lj{{"skr_mean_bps", s.mean}, {"skr_std_bps", s.std}, {"cycles", s.n}};
    if (auto it = r.qber_summary.find(link); it != r.qber_summary.end()) {
      lj["qber_mean_pct"] = it->second.mean;
      lj["qber_std_pct"] = it->second.std;
    }
    links[std::to_string(link)] = lj;
  }
  j["links"] = links;
  nlohmann::json nk;
  for (const auto& [node, count] : r.nk_count) {
    nk[node] = {{"count", count}, {"digest", r.nk_digest_hex.at(node)}};
  }
  j["network_keys"] = nk;
  j["counters"] = {{"frames_sent", r.counters_total.frames_sent},
                   {"frames_received", r.counters_total.frames_received},
                   {"bad_auth", r.counters_total.bad_auth},
                   {"stale_seq", r.counters_total.stale_seq},
                   {"bad_frames", r.counters_total.bad_frames},
                   {"relay_errors_seen", r.counters_total.relay_errors_seen},
                   {"batches_timed_out", r.counters_total.batches_timed_out},
                   {"hops_dropped", r.counters_total.hops_dropped}};

  Err e = write_file(fs::path(out_dir) / "summary.json", j.dump(2) + "\n");
  if (e != Err::None) return e;
  e = write_file(fs::path(out_dir) / "summary.txt", summary_text(r));
  if (e != Err::None) return e;
  e = write_file(fs::path(out_dir) / "telemetry.lp", r.telemetry_lines);
  if (e != Err::None) return e;

  std::string keyuse;
  for (const auto& line : r.keyuse_log) {
    keyuse += line;
    keyuse += '\n';
  }
  e = write_file(fs::path(out_dir) / "logs" / "keyuse.log", keyuse);
  if (e != Err::None) return e;
  std::string wire;
  for (const auto& line : r.wire_log) {
    wire += line;
    wire += '\n';
  }
  e = write_file(fs::path(out_dir) / "logs" / "wire.log", wire);
  if (e != Err::None) return e;

  for (const auto& [name, bytes] : r.table_files) {
    e = write_file(fs::path(out_dir) / "tables" / name, bytes);
    if (e != Err::None) return e;
  }

  // One CSV per series, keyed the same way the recorder keys series.
  std::map<std::string, std::vector<const SeriesPoint*>> series;
  for (const auto& p : r.all_points) {
    std::string key = p.measurement;
    for (const auto& [tk, tv] : p.tags) key += "." + tk + "-" + tv;
    series[key].push_back(&p);
  }
  for (const auto& [key, pts] : series) {
    e = write_file(fs::path(out_dir) / "csv" / (sanitize(key) + ".csv"), series_to_csv(pts));
    if (e != Err::None) return e;
  }
  return Err::None;
}

}  // namespace qkdnet
