#pragma once

#include <deque>

#include "qkdnet/bitbuf.hpp"
#include "qkdnet/common.hpp"
#include "qkdnet/keycore.hpp"

namespace qkdnet {

enum class ProtocolTag : uint8_t { BBM92 = 0, BB84 = 1, SARG04 = 2 };
enum class DeliveryMode : uint8_t { PacketStream = 0, AppendFile = 1, RewriteFile = 2 };

const char* protocol_name(ProtocolTag t);
const char* delivery_name(DeliveryMode m);
Expected<ProtocolTag> protocol_from_name(std::string_view s);
Expected<DeliveryMode> delivery_from_name(std::string_view s);

// Statistical description of one link's secret-key output. The quantum
// layer is modeled only at this level: per-cycle rate and error draws.
struct LinkProfile {
  uint32_t link_index = 1;
  ProtocolTag protocol = ProtocolTag::BB84;
  double length_km = 0.0;
  double loss_db = 0.0;
  double skr_mean_bps = 0.0;
  double skr_std_bps = 0.0;
  double qber_mean_pct = 0.0;
  double qber_std_pct = 0.0;
  double compromise_threshold_pct = 13.0;
  DeliveryMode delivery = DeliveryMode::AppendFile;
  double cycle_period_s = 1.0;

  // Empty string when valid, else a description of the first problem.
  std::string validate() const;
};

// Scripted degradation of one link over [start_s, end_s): additive QBER
// and multiplicative rate scaling. Overlapping windows compose.
struct DisturbanceWindow {
  uint32_t link_index = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  double qber_add_pct = 0.0;
  double skr_scale = 1.0;
};

struct CycleOutput {
  Bytes key_bits;      // packed MSB-first
  size_t nbits = 0;
  double qber_pct = 0.0;
  double skr_bps = 0.0;
};

// One secret-key cycle: truncated-Gaussian QBER in [0, 50), non-negative
// Gaussian rate, key bits drawn from rng. Consumes a fixed number of rng
// draws for the scalar samples regardless of parameters.
CycleOutput sample_cycle(const LinkProfile& profile, std::span<const DisturbanceWindow> windows,
                         double now_s, SplitMix64& rng);

// --- QIX-like serial frame ------------------------------------------------
//
// Self-delimiting stand-in for the transmit-only serial key format:
//   magic "QIX" | version 0x01 | key_id u32 BE | key 32B | status u8 |
//   crc32 u32 BE over version..status
// status: 0x00 secure, 0x01 compromised.

constexpr size_t kQixFrameLen = 45;
constexpr uint8_t kQixMagic[3] = {0x51, 0x49, 0x58};

struct QixFrame {
  uint32_t key_id = 0;
  Bytes32 key_bits{};
  bool compromised = false;
};

Bytes encode_qix_frame(const QixFrame& f);
// Expects `data` to begin at a frame boundary; BadMagic and BadCrc are
// non-fatal (the stream scanner resynchronizes on the next magic).
Expected<QixFrame> parse_qix_frame(std::span<const uint8_t> data);

struct StreamScan {
  std::vector<QixFrame> frames;
  size_t consumed = 0;       // bytes the scanner is done with
  size_t skipped_bytes = 0;  // garbage stepped over
  size_t bad_frames = 0;     // crc failures
};
// Consumes complete frames and definite garbage; a trailing partial frame
// or magic prefix is left for the next call.
StreamScan scan_qix_stream(std::span<const uint8_t> data);

// --- delivery medium --------------------------------------------------------
//
// Where a link's emitted key material lives: a byte stream for the serial
// format, a text file for the file formats. One shared instance per link in
// sim mode; per-process instances with identical content in real mode.

class DeliveryMedium {
 public:
  virtual ~DeliveryMedium() = default;
  virtual Err append(std::span<const uint8_t> data) = 0;
  virtual Err replace(std::span<const uint8_t> data) = 0;  // atomic swap
  virtual Expected<Bytes> snapshot() const = 0;
};

class MemoryMedium : public DeliveryMedium {
 public:
  Err append(std::span<const uint8_t> data) override;
  Err replace(std::span<const uint8_t> data) override;
  Expected<Bytes> snapshot() const override { return data_; }

 private:
  Bytes data_;
};

class FileMedium : public DeliveryMedium {
 public:
  explicit FileMedium(std::string path) : path_(std::move(path)) {}
  Err append(std::span<const uint8_t> data) override;
  Err replace(std::span<const uint8_t> data) override;  // tmp + rename
  Expected<Bytes> snapshot() const override;
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// --- emitter ----------------------------------------------------------------

// Plays the device side of one link: samples cycles and writes the vendor
// delivery format. Fully determined by (profile, seed, cycle indices), so a
// restarted process can rebuild it by replaying cycles.
class LinkEmitter {
 public:
  LinkEmitter(const LinkProfile& profile, uint64_t link_seed);

  CycleOutput sample(uint64_t cycle_index, double now_s,
                     std::span<const DisturbanceWindow> windows) const;

  // Chunks the cycle's bits into whole keys and writes them in the
  // profile's delivery format. Failed writes are retried on the next call;
  // generated bits are never dropped.
  Err emit(const CycleOutput& cycle, DeliveryMedium& medium);

  CycleOutput run_cycle(uint64_t cycle_index, double now_s,
                        std::span<const DisturbanceWindow> windows, DeliveryMedium& medium);

  uint64_t keys_emitted() const { return keys_emitted_; }
  uint64_t keys_flagged() const { return keys_flagged_; }
  uint64_t bits_emitted() const { return bits_emitted_; }
  size_t pending_bits() const { return pending_.size_bits(); }

 private:
  LinkProfile profile_;
  uint64_t link_seed_;
  BitBuffer pending_;
  uint32_t next_key_id_ = 0;
  uint64_t keys_emitted_ = 0;
  uint64_t keys_flagged_ = 0;
  uint64_t bits_emitted_ = 0;
  Bytes unflushed_;                      // stream/append payload awaiting a successful write
  std::vector<std::string> all_lines_;   // rewrite mode: full accumulated set
  bool rewrite_dirty_ = false;
};

// --- feed consumer ------------------------------------------------------------

enum class UpdateKind : uint8_t { NoChange = 0, Appended = 1, Rewritten = 2, Packets = 3 };

struct FeedState {
  DeliveryMode mode = DeliveryMode::AppendFile;
  uint64_t last_len = 0;
  Bytes32 last_hash{};  // sha256 of the previously observed content
  uint64_t stream_offset = 0;
};

struct FeedUpdate {
  UpdateKind kind = UpdateKind::NoChange;
  Bytes data;  // appended suffix or full rewritten content
  std::vector<QixFrame> frames;
  size_t skipped_bytes = 0;
  size_t bad_frames = 0;
};

// Classifies the current observation against the previous one and advances
// the state. File modes discriminate append vs rewrite by prefix hash;
// stream mode parses frames past the consumed offset.
FeedUpdate detect_update(FeedState& st, std::span<const uint8_t> current);

struct PendingKey {
  Bytes32 bits{};
  bool compromised = false;
};

// The ingestion watcher for one (node, link) end: turns medium observations
// into table records, identically on both ends of the link. Admission into
// the table is flow-controlled by a Fresh-count cap; surplus waits in FIFO
// order so both ends admit the same keys in the same order.
class FeedConsumer {
 public:
  explicit FeedConsumer(DeliveryMode mode);

  // Parses newly observed material into the pending queue.
  void observe(std::span<const uint8_t> current);

  // Moves pending keys into the table: flagged keys enter as Compromised
  // (exempt from the cap); fresh keys enter while available() < cap.
  // cap == 0 means uncapped. Returns the new records.
  std::vector<KeyRecord> admit(KeyTable& table, size_t fresh_cap);

  size_t pending() const { return pending_.size(); }
  uint64_t keys_seen() const { return keys_seen_; }
  uint64_t keys_admitted() const { return keys_admitted_; }
  uint64_t bad_lines() const { return bad_lines_; }
  uint64_t bad_frames() const { return bad_frames_; }
  uint64_t skipped_bytes() const { return skipped_bytes_; }
  const FeedState& state() const { return state_; }
  void restore_state(const FeedState& st, uint64_t lines_seen);
  uint64_t lines_seen() const { return lines_seen_; }

 private:
  FeedState state_;
  std::deque<PendingKey> pending_;
  std::string partial_line_;
  uint64_t lines_seen_ = 0;  // watermark: keys already taken from this feed
  uint64_t keys_seen_ = 0;
  uint64_t keys_admitted_ = 0;
  uint64_t bad_lines_ = 0;
  uint64_t bad_frames_ = 0;
  uint64_t skipped_bytes_ = 0;

  void take_lines(std::string_view text, uint64_t skip_watermark);
};

}  // namespace qkdnet
