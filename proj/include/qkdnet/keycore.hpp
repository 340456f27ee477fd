#pragma once

#include <functional>

#include "qkdnet/bitbuf.hpp"
#include "qkdnet/common.hpp"

namespace qkdnet {

enum class KeyStatus : uint8_t { Fresh = 0, Used = 1, Compromised = 2 };

const char* key_status_name(KeyStatus s);

// One 256-bit key plus its identity and accounting state. Immutable after
// creation except for status, which only moves Fresh->Used or
// Fresh->Compromised.
struct KeyRecord {
  uint64_t id = 0;
  Bytes32 bits{};
  Bytes32 digest{};  // sha256(bits)
  KeyStatus status = KeyStatus::Fresh;
};

// Table identity: link_index 0 means the network-key pool, otherwise the
// quantum-key pool of that link.
struct TableScope {
  uint32_t link_index = 0;

  static TableScope network() { return TableScope{0}; }
  static TableScope quantum(uint32_t n) { return TableScope{n}; }
  bool is_network() const { return link_index == 0; }
  std::string name() const;
  bool operator==(const TableScope&) const = default;
};

struct OtpResult {
  Bytes32 ciphertext{};
  uint64_t key_id = 0;
};

// Bytewise XOR of two 256-bit blocks. Spans let callers pass raw buffers;
// anything other than exactly 32+32 bytes is a malformed input.
Expected<Bytes32> xor_bytes(std::span<const uint8_t> a, std::span<const uint8_t> b);

// Ordered pool of KeyRecords shared (by construction of the feeds) between
// both ends of a link. Ids are assigned from a per-table monotonic counter,
// so insertion order is the cross-node synchronization primitive.
class KeyTable {
 public:
  explicit KeyTable(TableScope scope) : scope_(scope) {}

  // Splits residual||bits into 256-bit Fresh records; the sub-block
  // remainder is carried to the next ingest. Returns the new records.
  std::vector<KeyRecord> ingest_bits(std::span<const uint8_t> data, size_t nbits);

  size_t available() const { return fresh_count_; }
  size_t used() const { return used_count_; }
  size_t compromised() const { return compromised_count_; }
  size_t record_count() const { return records_.size(); }
  size_t residual_bits() const { return residual_.size_bits(); }
  uint64_t ingested_bits_total() const { return ingested_bits_total_; }
  TableScope scope() const { return scope_; }

  const KeyRecord* find(uint64_t id) const;
  uint64_t next_id() const { return next_id_; }
  const std::vector<KeyRecord>& records() const { return records_; }

  // Consumes the lowest-id Fresh record; selection and the Used mark are
  // one step, and a consumed key is never rolled back.
  Expected<OtpResult> otp_encrypt(const Bytes32& message);

  // Consumes the named record. Replay of an id is a protocol violation and
  // must abort the transfer rather than decrypt.
  Expected<Bytes32> otp_decrypt(const Bytes32& ciphertext, uint64_t key_id);

  // Marks the `count` lowest-id Fresh records Used in one step and returns
  // copies (status already Used). All-or-nothing: KeyExhausted if fewer
  // than `count` are available, with no records touched.
  Expected<std::vector<KeyRecord>> take_fresh(size_t count);

  Err mark_compromised(uint64_t key_id);

  // Digest over (id, bits) of every record: equal on both link ends after
  // quiesced ingestion regardless of per-side usage state.
  Bytes32 content_digest() const;
  // Digest additionally covering status; used for whole-run determinism.
  Bytes32 state_digest() const;

  // Returns a description of the first violated invariant, or empty.
  std::string check_invariants() const;

  // Binary persistence (QKTABLE1). Scope must fit the one-byte tag.
  Bytes serialize() const;
  static Expected<KeyTable> deserialize(std::span<const uint8_t> data);
  Err save(const std::string& path) const;
  static Expected<KeyTable> load(const std::string& path);

 private:
  TableScope scope_;
  std::vector<KeyRecord> records_;  // ids are contiguous: records_[i].id == i
  BitBuffer residual_;
  uint64_t next_id_ = 0;
  uint64_t ingested_bits_total_ = 0;
  size_t fresh_count_ = 0;
  size_t used_count_ = 0;
  size_t compromised_count_ = 0;
  size_t first_fresh_hint_ = 0;

  KeyRecord* find_mut(uint64_t id);
};

// Deterministic stand-in for the hardware randomness source feeding the
// network-key pool: same (seed, counter) always yields the same key.
class NetworkKeySource {
 public:
  explicit NetworkKeySource(const Bytes32& seed) : seed_(seed) {}

  Bytes32 key_at(uint64_t counter) const;
  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }

  // Draws h keys, advances the counter, and ingests them into `table` as
  // Fresh records; returns the new records.
  std::vector<KeyRecord> draw_into(KeyTable& table, size_t h);

 private:
  Bytes32 seed_;
  uint64_t counter_ = 0;
};

}  // namespace qkdnet
