#include "qkdnet/node.hpp"

#include <algorithm>

#include "json.hpp"

#include "qkdnet/sha256.hpp"

namespace qkdnet {

std::optional<uint64_t> nm_trigger(std::span<const uint64_t> counts, const TransferPolicy& policy) {
  if (counts.empty()) return std::nullopt;
  uint64_t m = *std::min_element(counts.begin(), counts.end());
  if (m < policy.threshold) return std::nullopt;
  return m - policy.reserve;
}

namespace {

Bytes32 nk_seed_bytes(uint64_t seed) {
  Bytes buf;
  put_u64be(buf, seed);
  return sha256(buf);
}

ErrorCode error_code_for(Err e) {
  switch (e) {
    case Err::DigestMismatch: return ErrorCode::DigestMismatch;
    case Err::UnknownKeyId: return ErrorCode::UnknownKeyId;
    case Err::KeyAlreadyUsed: return ErrorCode::KeyAlreadyUsed;
    case Err::KeyCompromised: return ErrorCode::KeyAlreadyUsed;
    case Err::KeyExhausted: return ErrorCode::KeyExhausted;
    default: return ErrorCode::Other;
  }
}

}  // namespace

Node::Node(const NodeConfig& cfg) : cfg_(cfg), nk_source_(nk_seed_bytes(cfg.nk_seed)) {}

void Node::attach_feed(uint32_t link, DeliveryMedium* medium, DeliveryMode mode) {
  auto [it, fresh] = links_.try_emplace(link, LinkEnd(link, mode));
  if (fresh) it->second.medium = medium;
}

void Node::warm_start(uint32_t link, size_t count, uint64_t bits_seed) {
  LinkEnd& le = end_of(link);
  SplitMix64 rng(mix_seed(bits_seed, "warm", link));
  Bytes buf;
  buf.reserve(count * kKeyBytes);
  for (size_t i = 0; i < count * kKeyBytes / 8; ++i) put_u64be(buf, rng.next());
  auto recs = le.table.ingest_bits(buf, count * kKeyBits);
  for (const auto& r : recs) log_keyuse(0, le.table.scope(), r.id, "ingest");
}

Node::LinkEnd& Node::end_of(uint32_t link) { return links_.at(link); }

KeyTable* Node::link_table(uint32_t link) {
  auto it = links_.find(link);
  return it == links_.end() ? nullptr : &it->second.table;
}

const KeyTable* Node::link_table(uint32_t link) const {
  auto it = links_.find(link);
  return it == links_.end() ? nullptr : &it->second.table;
}

FeedConsumer* Node::link_consumer(uint32_t link) {
  auto it = links_.find(link);
  return it == links_.end() ? nullptr : &it->second.consumer;
}

std::vector<Outgoing> Node::take_outgoing() {
  std::vector<Outgoing> out;
  out.swap(outbox_);
  return out;
}

void Node::log_keyuse(TimeNs now, TableScope scope, uint64_t key_id, const char* event) {
  keyuse_log_.push_back(std::to_string(now) + " node=" + cfg_.node_id + " scope=" + scope.name() +
                        " key=" + std::to_string(key_id) + " ev=" + event);
}

void Node::send(const std::string& to, WireMessage msg, TimeNs now) {
  auto psk = cfg_.psks.find(to);
  if (psk == cfg_.psks.end()) {
    ++counters_.bad_frames;  // misconfiguration; never silent
    wire_log_.push_back(std::to_string(now) + " tx node=" + cfg_.node_id + " peer=" + to +
                        " err=no_psk");
    return;
  }
  msg.sequence = ++send_seq_[to];
  Bytes frame = encode_wire(msg, psk->second);
  wire_log_.push_back(std::to_string(now) + " tx node=" + cfg_.node_id + " peer=" + to +
                      " type=" + msg_type_name(msg.type()) + " seq=" + std::to_string(msg.sequence) +
                      " bytes=" + to_hex(frame));
  ++counters_.frames_sent;
  outbox_.push_back(Outgoing{to, std::move(frame), msg.type(), msg.sequence});
}

Outgoing Node::make_hello(const std::string& peer) {
  WireMessage msg;
  msg.payload = HelloMsg{cfg_.node_id, cfg_.role};
  send(peer, std::move(msg), 0);
  Outgoing out = std::move(outbox_.back());
  outbox_.pop_back();
  return out;
}

void Node::reset_peer_seq(const std::string& peer) { recv_seq_.erase(peer); }

void Node::on_link_cycle(uint32_t link, double skr_bps, double qber_pct, TimeNs now) {
  (void)now;
  auto it = links_.find(link);
  if (it == links_.end()) return;
  it->second.last_skr_bps = skr_bps;
  it->second.last_qber_pct = qber_pct;
  it->second.has_qber = true;
}

void Node::poll_one_feed(LinkEnd& le, TimeNs now) {
  if (!le.medium) return;
  auto snap = le.medium->snapshot();
  if (!snap.ok()) return;  // transient read failure: retry next poll
  le.consumer.observe(snap.value());
  auto recs = le.consumer.admit(le.table, cfg_.fresh_cap);
  for (const auto& r : recs) {
    log_keyuse(now, le.table.scope(), r.id, "ingest");
    if (r.status == KeyStatus::Compromised) log_keyuse(now, le.table.scope(), r.id, "compromise");
  }
}

void Node::on_poll_tick(TimeNs now) {
  for (auto& [link, le] : links_) poll_one_feed(le, now);
  drain_batches(now);
  expire_batches(now);
  if (cfg_.role == Role::NetworkManager) nm_evaluate_trigger(now);
}

void Node::record_link_stats(TimeNs now) {
  for (auto& [link, le] : links_) {
    SeriesPoint p;
    p.measurement = "link_stats";
    p.tags = {{"node", cfg_.node_id}, {"link", std::to_string(link)}};
    p.fields = {{"available_qk", double(le.table.available())},
                {"used_qk", double(le.table.used())},
                {"compromised_qk", double(le.table.compromised())},
                {"pending", double(le.consumer.pending())},
                {"skr_bps", le.last_skr_bps},
                {"qber_pct", le.last_qber_pct}};
    p.timestamp_ns = now;
    telemetry_.record(std::move(p));
  }
}

void Node::on_report_tick(TimeNs now) {
  SeriesPoint p;
  p.measurement = "node_stats";
  p.tags = {{"node", cfg_.node_id}};
  p.fields = {{"available_nk", double(nk_table_.available())},
              {"used_nk", double(nk_table_.used())}};
  p.timestamp_ns = now;
  telemetry_.record(std::move(p));
  record_link_stats(now);

  if (cfg_.role == Role::NetworkManager) return;  // NM aggregates, never reports
  StatsReportMsg m;
  m.node_id = cfg_.node_id;
  m.timestamp_ns = now;
  m.available_nk = nk_table_.available();
  m.used_nk = nk_table_.used();
  for (auto& [link, le] : links_) {
    LinkStats l;
    l.link_index = uint8_t(link);
    l.available_qk = le.table.available();
    l.used_qk = le.table.used();
    l.skr_bps = le.last_skr_bps;
    l.qber_pct = le.last_qber_pct;
    l.has_qber = le.has_qber;
    m.links.push_back(l);
  }
  WireMessage msg;
  msg.payload = std::move(m);
  send(cfg_.nm_id, std::move(msg), now);
}

void Node::on_frame(const std::string& from, std::span<const uint8_t> frame, TimeNs now) {
  auto psk = cfg_.psks.find(from);
  if (psk == cfg_.psks.end()) {
    ++counters_.bad_frames;
    return;
  }
  auto msg = decode_wire(frame, psk->second, recv_seq_[from]);
  if (!msg.ok()) {
    switch (msg.error()) {
      case Err::BadAuthTag: ++counters_.bad_auth; break;
      case Err::StaleSequence: ++counters_.stale_seq; break;
      default: ++counters_.bad_frames; break;
    }
    wire_log_.push_back(std::to_string(now) + " rx node=" + cfg_.node_id + " peer=" + from +
                        " err=" + err_name(msg.error()));
    return;
  }
  ++counters_.frames_received;
  const WireMessage& m = msg.value();
  struct V {
    Node& n;
    const std::string& from;
    TimeNs now;
    void operator()(const HelloMsg&) const {}
    void operator()(const StatsReportMsg& p) const { n.handle_stats(from, p, now); }
    void operator()(const TransferInitMsg& p) const { n.handle_init(from, p, now); }
    void operator()(const KeyHopMsg& p) const { n.handle_keyhop(from, p, now); }
    void operator()(const TransferCompleteMsg& p) const { n.handle_complete(from, p, now); }
    void operator()(const TransferAckMsg& p) const { n.handle_ack(from, p, now); }
    void operator()(const ErrorMsg& p) const { n.handle_error(from, p, now); }
  };
  std::visit(V{*this, from, now}, m.payload);
}

// --- NM ----------------------------------------------------------------------

void Node::handle_stats(const std::string& from, const StatsReportMsg& m, TimeNs now) {
  (void)now;
  if (cfg_.role != Role::NetworkManager) return;
  SeriesPoint p;
  p.measurement = "nm_view";
  p.tags = {{"node", m.node_id}};
  p.fields = {{"available_nk", double(m.available_nk)}, {"used_nk", double(m.used_nk)}};
  p.timestamp_ns = m.timestamp_ns;
  telemetry_.record(std::move(p));
  for (const auto& l : m.links) {
    reported_avail_[l.link_index][m.node_id] = l.available_qk;
    SeriesPoint lp;
    lp.measurement = "nm_link_view";
    lp.tags = {{"node", m.node_id}, {"link", std::to_string(l.link_index)}};
    lp.fields = {{"available_qk", double(l.available_qk)},
                 {"used_qk", double(l.used_qk)},
                 {"skr_bps", l.skr_bps},
                 {"qber_pct", l.qber_pct}};
    lp.timestamp_ns = m.timestamp_ns;
    telemetry_.record(std::move(lp));
  }
  (void)from;
}

void Node::nm_evaluate_trigger(TimeNs now) {
  if (nm_inflight_) return;
  if (cfg_.total_links == 0) return;
  std::vector<uint64_t> counts;
  for (uint32_t link = 1; link <= cfg_.total_links; ++link) {
    std::optional<uint64_t> c;
    if (auto it = links_.find(link); it != links_.end()) c = it->second.table.available();
    if (auto it = reported_avail_.find(link); it != reported_avail_.end()) {
      for (const auto& [reporter, avail] : it->second) {
        c = c ? std::min(*c, avail) : avail;
      }
    }
    if (!c) return;  // no view of this link yet
    counts.push_back(*c);
  }
  auto h = nm_trigger(counts, cfg_.policy);
  if (h && *h > 0) nm_start_transfer(*h, now);
}

void Node::nm_start_transfer(uint64_t h, TimeNs now) {
  LinkEnd& right = end_of(*cfg_.right_link);
  if (right.table.available() < h) return;  // stale remote view; retry next poll
  while (nk_table_.available() < h) {
    auto drawn = nk_source_.draw_into(nk_table_, h - nk_table_.available());
    for (const auto& r : drawn) log_keyuse(now, nk_table_.scope(), r.id, "draw");
  }
  auto nks = nk_table_.take_fresh(h);
  if (!nks.ok()) return;
  uint64_t batch_id = next_batch_id_++;
  std::vector<KeyHopMsg> hops;
  hops.reserve(h);
  for (uint32_t i = 0; i < h; ++i) {
    const KeyRecord& nk = nks.value()[i];
    log_keyuse(now, nk_table_.scope(), nk.id, "distribute");
    auto enc = right.table.otp_encrypt(nk.bits);
    if (!enc.ok()) return;  // abort: nothing sent, consumed keys stay burned
    log_keyuse(now, right.table.scope(), enc.value().key_id, "encrypt");
    KeyHopMsg hop;
    hop.batch_id = batch_id;
    hop.index = i;
    hop.nk_digest = nk.digest;
    hop.ciphertext = enc.value().ciphertext;
    hop.qk_id = enc.value().key_id;
    hops.push_back(hop);
  }
  triggers_.push_back(TriggerEvent{now, batch_id, h});
  nm_inflight_ = NmBatch{batch_id, h, now + seconds_to_ns(cfg_.batch_timeout_s)};
  SeriesPoint p;
  p.measurement = "transfer";
  p.tags = {{"node", cfg_.node_id}};
  p.fields = {{"batch_id", double(batch_id)}, {"h", double(h)}, {"event", 0.0}};
  p.timestamp_ns = now;
  telemetry_.record(std::move(p));

  WireMessage init;
  init.payload = TransferInitMsg{batch_id, uint32_t(h)};
  send(cfg_.right_peer, std::move(init), now);
  for (auto& hop : hops) {
    WireMessage m;
    m.payload = hop;
    send(cfg_.right_peer, std::move(m), now);
  }
}

void Node::nm_finish_batch(const TransferCompleteMsg& m, TimeNs now) {
  ++transfers_completed_;
  nk_delivered_ += m.received;
  keys_failed_ += m.expected > m.received ? m.expected - m.received : 0;
  SeriesPoint p;
  p.measurement = "transfer";
  p.tags = {{"node", cfg_.node_id}};
  p.fields = {{"batch_id", double(m.batch_id)},
              {"event", 1.0},
              {"received", double(m.received)},
              {"expected", double(m.expected)}};
  p.timestamp_ns = now;
  telemetry_.record(std::move(p));
  if (nm_inflight_ && nm_inflight_->batch_id == m.batch_id) nm_inflight_.reset();
  WireMessage ack;
  ack.payload = TransferAckMsg{m.batch_id, m.received};
  send(cfg_.right_peer, std::move(ack), now);
}

// --- TN / EN relay ------------------------------------------------------------

Node::BatchState& Node::batch_of(uint64_t batch_id, TimeNs now) {
  auto [it, fresh] = batches_.try_emplace(batch_id);
  if (fresh) {
    it->second.batch_id = batch_id;
    it->second.deadline = now + seconds_to_ns(cfg_.batch_timeout_s);
  }
  return it->second;
}

void Node::handle_init(const std::string& from, const TransferInitMsg& m, TimeNs now) {
  (void)from;
  if (cfg_.role == Role::NetworkManager) return;
  BatchState& b = batch_of(m.batch_id, now);
  if (b.got_init) return;  // duplicate
  b.got_init = true;
  b.expected = m.count;
  if (cfg_.role == Role::TrustedNode) {
    WireMessage fwd;
    fwd.payload = m;
    send(cfg_.right_peer, std::move(fwd), now);
  }
  maybe_complete_en(b, now);
}

void Node::handle_keyhop(const std::string& from, const KeyHopMsg& m, TimeNs now) {
  (void)from;
  if (cfg_.role == Role::NetworkManager) return;
  BatchState& b = batch_of(m.batch_id, now);
  if (b.completed) return;
  if (!b.seen.insert(m.index).second) return;  // duplicate hop: idempotent
  b.queue.push_back(m);
  while (drain_one(b, now)) {
  }
  maybe_complete_en(b, now);
}

// One queue step. Hops are relayed strictly in arrival order: if the head
// must wait (left key not ingested yet, or no right key free), everything
// behind it waits too, keeping NK insertion order identical on all nodes.
bool Node::drain_one(BatchState& b, TimeNs now) {
  if (b.completed || b.queue.empty()) return false;
  const KeyHopMsg hop = b.queue.front();
  LinkEnd& left = end_of(*cfg_.left_link);
  if (hop.qk_id >= left.table.next_id()) return false;  // feed lag: wait
  if (cfg_.role == Role::TrustedNode) {
    if (end_of(*cfg_.right_link).table.available() < 1) return false;  // hold
    b.queue.pop_front();
    process_hop_tn(b, hop, now);
  } else {
    b.queue.pop_front();
    process_hop_en(b, hop, now);
  }
  return true;
}

void Node::process_hop_tn(BatchState& b, const KeyHopMsg& hop, TimeNs now) {
  LinkEnd& left = end_of(*cfg_.left_link);
  LinkEnd& right = end_of(*cfg_.right_link);
  auto plain = left.table.otp_decrypt(hop.ciphertext, hop.qk_id);
  if (!plain.ok()) {
    ++b.failed;
    WireMessage err;
    err.payload = ErrorMsg{error_code_for(plain.error()), hop.batch_id, hop.index, err_name(plain.error())};
    send(cfg_.left_peer, std::move(err), now);
    return;
  }
  log_keyuse(now, left.table.scope(), hop.qk_id, "decrypt");
  Bytes32 digest = sha256(plain.value());
  if (digest != hop.nk_digest) {
    ++b.failed;
    WireMessage err;
    err.payload = ErrorMsg{ErrorCode::DigestMismatch, hop.batch_id, hop.index, "nk digest mismatch"};
    send(cfg_.left_peer, std::move(err), now);
    return;  // left key burned; nothing stored or forwarded
  }
  auto stored = nk_table_.ingest_bits(plain.value(), kKeyBits);
  for (const auto& r : stored) log_keyuse(now, nk_table_.scope(), r.id, "store");
  ++b.stored;
  auto enc = right.table.otp_encrypt(plain.value());
  if (!enc.ok()) return;  // unreachable: gate checked availability
  log_keyuse(now, right.table.scope(), enc.value().key_id, "encrypt");
  KeyHopMsg fwd = hop;
  fwd.ciphertext = enc.value().ciphertext;
  fwd.qk_id = enc.value().key_id;
  WireMessage m;
  m.payload = fwd;
  send(cfg_.right_peer, std::move(m), now);
}

void Node::process_hop_en(BatchState& b, const KeyHopMsg& hop, TimeNs now) {
  LinkEnd& left = end_of(*cfg_.left_link);
  auto plain = left.table.otp_decrypt(hop.ciphertext, hop.qk_id);
  if (!plain.ok()) {
    ++b.failed;
    WireMessage err;
    err.payload = ErrorMsg{error_code_for(plain.error()), hop.batch_id, hop.index, err_name(plain.error())};
    send(cfg_.left_peer, std::move(err), now);
    return;
  }
  log_keyuse(now, left.table.scope(), hop.qk_id, "decrypt");
  Bytes32 digest = sha256(plain.value());
  if (digest != hop.nk_digest) {
    ++b.failed;
    WireMessage err;
    err.payload = ErrorMsg{ErrorCode::DigestMismatch, hop.batch_id, hop.index, "nk digest mismatch"};
    send(cfg_.left_peer, std::move(err), now);
    return;
  }
  auto stored = nk_table_.ingest_bits(plain.value(), kKeyBits);
  for (const auto& r : stored) log_keyuse(now, nk_table_.scope(), r.id, "store");
  ++b.stored;
}

void Node::maybe_complete_en(BatchState& b, TimeNs now) {
  if (cfg_.role != Role::EdgeNode || b.completed || !b.got_init) return;
  if (b.stored + b.failed < b.expected) return;
  b.completed = true;
  WireMessage m;
  m.payload = TransferCompleteMsg{b.batch_id, b.stored, b.expected};
  send(cfg_.left_peer, std::move(m), now);
}

void Node::drain_batches(TimeNs now) {
  for (auto& [id, b] : batches_) {
    while (drain_one(b, now)) {
    }
    maybe_complete_en(b, now);
  }
}

void Node::expire_batches(TimeNs now) {
  if (cfg_.role == Role::NetworkManager) {
    if (nm_inflight_ && now >= nm_inflight_->deadline) {
      ++counters_.batches_timed_out;
      SeriesPoint p;
      p.measurement = "transfer";
      p.tags = {{"node", cfg_.node_id}};
      p.fields = {{"batch_id", double(nm_inflight_->batch_id)}, {"event", 2.0}};
      p.timestamp_ns = now;
      telemetry_.record(std::move(p));
      nm_inflight_.reset();
    }
    return;
  }
  for (auto it = batches_.begin(); it != batches_.end();) {
    BatchState& b = it->second;
    if (!b.completed && now >= b.deadline) {
      ++counters_.batches_timed_out;
      for (const auto& hop : b.queue) {
        ++counters_.hops_dropped;
        WireMessage err;
        err.payload = ErrorMsg{ErrorCode::Other, b.batch_id, hop.index, "batch timeout"};
        send(cfg_.left_peer, std::move(err), now);
      }
      b.queue.clear();
      if (cfg_.role == Role::EdgeNode && b.got_init) {
        WireMessage m;
        m.payload = TransferCompleteMsg{b.batch_id, b.stored, b.expected};
        send(cfg_.left_peer, std::move(m), now);
      }
      b.completed = true;
    }
    // Tombstones linger past the deadline so late duplicates stay ignored.
    if (b.completed && now >= b.deadline + 2 * seconds_to_ns(cfg_.batch_timeout_s)) {
      it = batches_.erase(it);
    } else {
      ++it;
    }
  }
}

void Node::handle_complete(const std::string& from, const TransferCompleteMsg& m, TimeNs now) {
  (void)from;
  if (cfg_.role == Role::NetworkManager) {
    nm_finish_batch(m, now);
    return;
  }
  if (cfg_.role == Role::TrustedNode) {
    WireMessage fwd;
    fwd.payload = m;
    send(cfg_.left_peer, std::move(fwd), now);
  }
}

void Node::handle_ack(const std::string& from, const TransferAckMsg& m, TimeNs now) {
  (void)from;
  if (cfg_.role == Role::NetworkManager) return;
  if (cfg_.role == Role::TrustedNode) {
    WireMessage fwd;
    fwd.payload = m;
    send(cfg_.right_peer, std::move(fwd), now);
  }
  batches_.erase(m.batch_id);
}

void Node::handle_error(const std::string& from, const ErrorMsg& m, TimeNs now) {
  (void)from;
  if (cfg_.role == Role::NetworkManager) {
    ++counters_.relay_errors_seen;
    SeriesPoint p;
    p.measurement = "relay_error";
    p.tags = {{"node", cfg_.node_id}};
    p.fields = {{"batch_id", double(m.batch_id)},
                {"index", double(m.index)},
                {"code", double(uint8_t(m.code))}};
    p.timestamp_ns = now;
    telemetry_.record(std::move(p));
    return;
  }
  if (cfg_.role == Role::TrustedNode) {
    WireMessage fwd;
    fwd.payload = m;
    send(cfg_.left_peer, std::move(fwd), now);
  }
}

// --- persistence ---------------------------------------------------------------

Err Node::save_state(const std::string& dir) const {
  std::string base = dir + "/" + cfg_.node_id;
  nlohmann::json j;
  // Tables are embedded so the snapshot is one file: a single atomic rename
  // replaces it, and a kill can never pair new tables with old feed
  // watermarks (which would re-admit consumed pad material on resume).
  j["tables"]["nk"] = to_hex(nk_table_.serialize());
  for (const auto& [link, le] : links_) {
    j["tables"]["qk" + std::to_string(link)] = to_hex(le.table.serialize());
  }
  j["send_seq"] = send_seq_;
  j["recv_seq"] = recv_seq_;
  j["next_batch_id"] = next_batch_id_;
  j["nk_counter"] = nk_source_.counter();
  j["transfers_completed"] = transfers_completed_;
  j["keys_failed"] = keys_failed_;
  j["nk_delivered"] = nk_delivered_;
  nlohmann::json triggers = nlohmann::json::array();
  for (const auto& t : triggers_) {
    triggers.push_back({{"time", t.time}, {"batch_id", t.batch_id}, {"h", t.h}});
  }
  j["triggers"] = triggers;
  nlohmann::json feeds;
  for (const auto& [link, le] : links_) {
    const FeedState& st = le.consumer.state();
    feeds[std::to_string(link)] = {{"mode", int(st.mode)},
                                   {"last_len", st.last_len},
                                   {"last_hash", to_hex32(st.last_hash)},
                                   {"stream_offset", st.stream_offset},
                                   {"lines_seen", le.consumer.lines_seen()}};
  }
  j["feeds"] = feeds;
  std::string text = j.dump(2);
  std::string tmp = base + "_state.tmp";
  FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) return Err::Io;
  size_t written = std::fwrite(text.data(), 1, text.size(), f);
  if (std::fclose(f) != 0 || written != text.size()) return Err::Io;
  return std::rename(tmp.c_str(), (base + "_state.json").c_str()) == 0 ? Err::None : Err::Io;
}

Err Node::load_state(const std::string& dir) {
  std::string base = dir + "/" + cfg_.node_id;
  FILE* f = std::fopen((base + "_state.json").c_str(), "rb");
  if (!f) return Err::Io;
  std::string text;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
  std::fclose(f);
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) return Err::BadFormat;
  if (!j.contains("tables") || !j["tables"].contains("nk")) return Err::BadFormat;
  auto load_table = [&](const std::string& key) -> Expected<KeyTable> {
    auto raw = from_hex(j["tables"].value(key, std::string{}));
    if (!raw.ok()) return raw.error();
    return KeyTable::deserialize(raw.value());
  };
  auto nk = load_table("nk");
  if (!nk.ok()) return nk.error();
  nk_table_ = std::move(nk.value());
  for (auto& [link, le] : links_) {
    auto t = load_table("qk" + std::to_string(link));
    if (!t.ok()) return t.error();
    le.table = std::move(t.value());
  }
  send_seq_ = j.value("send_seq", std::map<std::string, uint64_t>{});
  recv_seq_ = j.value("recv_seq", std::map<std::string, uint64_t>{});
  next_batch_id_ = j.value("next_batch_id", uint64_t{1});
  nk_source_.set_counter(j.value("nk_counter", uint64_t{0}));
  transfers_completed_ = j.value("transfers_completed", uint64_t{0});
  keys_failed_ = j.value("keys_failed", uint64_t{0});
  nk_delivered_ = j.value("nk_delivered", uint64_t{0});
  triggers_.clear();
  for (const auto& t : j.value("triggers", nlohmann::json::array())) {
    triggers_.push_back(TriggerEvent{t.value("time", int64_t{0}), t.value("batch_id", uint64_t{0}),
                                     t.value("h", uint64_t{0})});
  }
  if (j.contains("feeds")) {
    for (auto& [link, le] : links_) {
      auto key = std::to_string(link);
      if (!j["feeds"].contains(key)) continue;
      const auto& fj = j["feeds"][key];
      FeedState st;
      st.mode = DeliveryMode(fj.value("mode", 0));
      st.last_len = fj.value("last_len", uint64_t{0});
      auto hash = from_hex(fj.value("last_hash", std::string{}));
      if (hash.ok() && hash.value().size() == 32) {
        std::copy(hash.value().begin(), hash.value().end(), st.last_hash.begin());
      }
      st.stream_offset = fj.value("stream_offset", uint64_t{0});
      le.consumer.restore_state(st, fj.value("lines_seen", uint64_t{0}));
    }
  }
  return Err::None;
}

}  // namespace qkdnet
