#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>

#include "qkdnet/keycore.hpp"
#include "qkdnet/qkdlink.hpp"
#include "qkdnet/telemetry.hpp"
#include "qkdnet/wire.hpp"

namespace qkdnet {

// Transfer trigger parameters: fire when every link's Fresh count reaches
// threshold, moving min(counts) - reserve keys so reserve stays banked on
// every link.
struct TransferPolicy {
  uint64_t threshold = 60;
  uint64_t reserve = 20;
};

// h = min(counts) - reserve when min(counts) >= threshold, else nothing.
std::optional<uint64_t> nm_trigger(std::span<const uint64_t> counts, const TransferPolicy& policy);

struct NodeConfig {
  std::string node_id;
  Role role = Role::TrustedNode;
  std::optional<uint32_t> left_link;   // link toward the NM
  std::optional<uint32_t> right_link;  // link toward the EN
  std::string left_peer;
  std::string right_peer;
  std::string nm_id = "nm";
  uint32_t total_links = 0;  // trigger waits for a count from every link
  TransferPolicy policy;
  uint64_t fresh_cap = 0;  // per-link-table Fresh admission cap; 0 = uncapped
  double poll_period_s = 1.0;
  double report_period_s = 1.0;
  double batch_timeout_s = 30.0;
  double hop_delay_s = 0.02;
  uint64_t nk_seed = 0;  // network-key source (NM only)
  std::map<std::string, Psk> psks;
};

struct Outgoing {
  std::string to;
  Bytes frame;
  MsgType type = MsgType::Hello;
  uint64_t sequence = 0;
};

struct NodeCounters {
  uint64_t frames_sent = 0;
  uint64_t frames_received = 0;
  uint64_t bad_auth = 0;
  uint64_t stale_seq = 0;
  uint64_t bad_frames = 0;
  uint64_t relay_errors_seen = 0;  // Error messages observed (NM)
  uint64_t batches_timed_out = 0;
  uint64_t hops_dropped = 0;  // queued hops abandoned at batch timeout
};

struct TriggerEvent {
  TimeNs time = 0;
  uint64_t batch_id = 0;
  uint64_t h = 0;
};

// One relay participant: a single-threaded reactor fed timer ticks, link
// feed updates, and authenticated wire frames. Identical logic under the
// simulator's virtual clock and the socket runtime's compressed wall clock;
// the host drains take_outgoing() after every entry point.
class Node {
 public:
  explicit Node(const NodeConfig& cfg);

  const NodeConfig& config() const { return cfg_; }
  const std::string& id() const { return cfg_.node_id; }
  Role role() const { return cfg_.role; }

  // Wires one adjacent link's feed; medium is host-owned. Must be called
  // for every adjacent link before the first poll.
  void attach_feed(uint32_t link, DeliveryMedium* medium, DeliveryMode mode);

  // Seeds `count` deterministic records into one link table (both ends
  // call with the same seed, keeping tables identical).
  void warm_start(uint32_t link, size_t count, uint64_t bits_seed);

  // --- event entry points -------------------------------------------------
  void on_link_cycle(uint32_t link, double skr_bps, double qber_pct, TimeNs now);
  void on_poll_tick(TimeNs now);
  void on_report_tick(TimeNs now);
  void on_frame(const std::string& from, std::span<const uint8_t> frame, TimeNs now);

  std::vector<Outgoing> take_outgoing();

  // Hello frame for connection setup in socket mode.
  Outgoing make_hello(const std::string& peer);

  // Socket mode only: a reconnected peer restarts its sequence numbers.
  void reset_peer_seq(const std::string& peer);

  // --- inspection -----------------------------------------------------------
  KeyTable& nk_table() { return nk_table_; }
  const KeyTable& nk_table() const { return nk_table_; }
  KeyTable* link_table(uint32_t link);
  const KeyTable* link_table(uint32_t link) const;
  FeedConsumer* link_consumer(uint32_t link);
  Recorder& telemetry() { return telemetry_; }
  const Recorder& telemetry() const { return telemetry_; }
  const std::vector<std::string>& keyuse_log() const { return keyuse_log_; }
  const std::vector<std::string>& wire_log() const { return wire_log_; }
  const NodeCounters& counters() const { return counters_; }
  const std::vector<TriggerEvent>& triggers() const { return triggers_; }
  uint64_t transfers_completed() const { return transfers_completed_; }
  uint64_t keys_failed() const { return keys_failed_; }
  uint64_t nk_delivered() const { return nk_delivered_; }
  bool transfer_inflight() const { return nm_inflight_.has_value(); }

  // Socket-mode persistence: tables plus protocol counters in one snapshot
  // file (<node>_state.json), replaced atomically. Written after every
  // handled event so a killed process never forgets a consumed key.
  Err save_state(const std::string& dir) const;
  Err load_state(const std::string& dir);

 private:
  struct LinkEnd {
    uint32_t link = 0;
    KeyTable table;
    FeedConsumer consumer;
    DeliveryMedium* medium = nullptr;
    double last_skr_bps = 0.0;
    double last_qber_pct = 0.0;
    bool has_qber = false;
    LinkEnd(uint32_t n, DeliveryMode mode)
        : link(n), table(TableScope::quantum(n)), consumer(mode) {}
  };

  // Relay bookkeeping shared by TN and EN: hops are processed strictly in
  // queue order so every node stores surviving NKs in the same order.
  struct BatchState {
    uint64_t batch_id = 0;
    uint32_t expected = 0;
    bool got_init = false;
    bool completed = false;
    uint32_t stored = 0;   // NKs stored locally
    uint32_t failed = 0;   // digest/decrypt failures
    TimeNs deadline = 0;
    std::deque<KeyHopMsg> queue;
    std::set<uint32_t> seen;
  };

  struct NmBatch {
    uint64_t batch_id = 0;
    uint64_t h = 0;
    TimeNs deadline = 0;
  };

  NodeConfig cfg_;
  KeyTable nk_table_{TableScope::network()};
  NetworkKeySource nk_source_;
  std::map<uint32_t, LinkEnd> links_;
  Recorder telemetry_;

  std::map<std::string, uint64_t> send_seq_;
  std::map<std::string, uint64_t> recv_seq_;
  std::vector<Outgoing> outbox_;

  // NM state
  std::map<uint32_t, std::map<std::string, uint64_t>> reported_avail_;  // link -> reporter -> count
  std::optional<NmBatch> nm_inflight_;
  uint64_t next_batch_id_ = 1;
  std::vector<TriggerEvent> triggers_;
  uint64_t transfers_completed_ = 0;
  uint64_t keys_failed_ = 0;
  uint64_t nk_delivered_ = 0;

  // TN/EN state
  std::map<uint64_t, BatchState> batches_;

  std::vector<std::string> keyuse_log_;
  std::vector<std::string> wire_log_;
  NodeCounters counters_;

  void send(const std::string& to, WireMessage msg, TimeNs now);
  void log_keyuse(TimeNs now, TableScope scope, uint64_t key_id, const char* event);
  LinkEnd& end_of(uint32_t link);

  void poll_one_feed(LinkEnd& le, TimeNs now);
  void nm_evaluate_trigger(TimeNs now);
  void nm_start_transfer(uint64_t h, TimeNs now);
  void nm_finish_batch(const TransferCompleteMsg& m, TimeNs now);

  void handle_stats(const std::string& from, const StatsReportMsg& m, TimeNs now);
  void handle_init(const std::string& from, const TransferInitMsg& m, TimeNs now);
  void handle_keyhop(const std::string& from, const KeyHopMsg& m, TimeNs now);
  void handle_complete(const std::string& from, const TransferCompleteMsg& m, TimeNs now);
  void handle_ack(const std::string& from, const TransferAckMsg& m, TimeNs now);
  void handle_error(const std::string& from, const ErrorMsg& m, TimeNs now);

  BatchState& batch_of(uint64_t batch_id, TimeNs now);
  void drain_batches(TimeNs now);
  bool drain_one(BatchState& b, TimeNs now);  // true if progressed
  void process_hop_tn(BatchState& b, const KeyHopMsg& hop, TimeNs now);
  void process_hop_en(BatchState& b, const KeyHopMsg& hop, TimeNs now);
  void maybe_complete_en(BatchState& b, TimeNs now);
  void expire_batches(TimeNs now);
  void record_link_stats(TimeNs now);
};

}  // namespace qkdnet
