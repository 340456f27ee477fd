#pragma once

#include <variant>

#include "qkdnet/common.hpp"

namespace qkdnet {

// Classical-channel message framing:
//   u32 BE total length (of everything that follows) | version 0x01 |
//   msg_type u8 | sequence u64 BE | payload | auth_tag 32B
// Payload integers are big-endian; byte/string fields are u16-length-
// prefixed. auth_tag = sha256(psk || version..payload); decode refuses the
// frame before looking at the payload when the tag does not verify.

constexpr uint8_t kWireVersion = 0x01;
constexpr size_t kAuthTagLen = 32;
constexpr size_t kMaxWireFrame = 1 << 20;

enum class MsgType : uint8_t {
  Hello = 1,
  StatsReport = 2,
  TransferInit = 3,
  KeyHop = 4,
  TransferAck = 5,
  TransferComplete = 6,
  Error = 7,
};

const char* msg_type_name(MsgType t);

enum class Role : uint8_t { NetworkManager = 0, TrustedNode = 1, EdgeNode = 2 };

const char* role_name(Role r);
Expected<Role> role_from_name(std::string_view s);

struct HelloMsg {
  std::string node_id;
  Role role = Role::TrustedNode;
  bool operator==(const HelloMsg&) const = default;
};

struct LinkStats {
  uint8_t link_index = 0;
  uint64_t available_qk = 0;
  uint64_t used_qk = 0;
  double skr_bps = 0;
  double qber_pct = 0;
  bool has_qber = false;
  bool operator==(const LinkStats&) const = default;
};

struct StatsReportMsg {
  std::string node_id;
  int64_t timestamp_ns = 0;
  uint64_t available_nk = 0;
  uint64_t used_nk = 0;
  std::vector<LinkStats> links;
  bool operator==(const StatsReportMsg&) const = default;
};

struct TransferInitMsg {
  uint64_t batch_id = 0;
  uint32_t count = 0;
  bool operator==(const TransferInitMsg&) const = default;
};

struct KeyHopMsg {
  uint64_t batch_id = 0;
  uint32_t index = 0;
  Bytes32 nk_digest{};
  Bytes32 ciphertext{};
  uint64_t qk_id = 0;
  bool operator==(const KeyHopMsg&) const = default;
};

struct TransferAckMsg {
  uint64_t batch_id = 0;
  uint32_t accepted = 0;
  bool operator==(const TransferAckMsg&) const = default;
};

struct TransferCompleteMsg {
  uint64_t batch_id = 0;
  uint32_t received = 0;
  uint32_t expected = 0;
  bool operator==(const TransferCompleteMsg&) const = default;
};

enum class ErrorCode : uint8_t {
  DigestMismatch = 1,
  UnknownKeyId = 2,
  KeyAlreadyUsed = 3,
  KeyExhausted = 4,
  Other = 255,
};

struct ErrorMsg {
  ErrorCode code = ErrorCode::Other;
  uint64_t batch_id = 0;
  uint32_t index = 0;
  std::string detail;
  bool operator==(const ErrorMsg&) const = default;
};

struct WireMessage {
  uint64_t sequence = 0;
  std::variant<HelloMsg, StatsReportMsg, TransferInitMsg, KeyHopMsg, TransferAckMsg,
               TransferCompleteMsg, ErrorMsg>
      payload;

  MsgType type() const;
  bool operator==(const WireMessage&) const = default;
};

using Psk = Bytes32;

Bytes encode_wire(const WireMessage& msg, const Psk& psk);

// Verifies framing, auth tag, and sequence monotonicity against last_seq
// (strictly greater required); advances last_seq on success.
Expected<WireMessage> decode_wire(std::span<const uint8_t> frame, const Psk& psk, uint64_t& last_seq);

// Splits a byte stream into length-delimited frames. Each returned frame
// keeps its 4-byte length prefix (decode_wire expects the full frame). A
// length outside (0, kMaxWireFrame] sets bad_length so the caller can drop
// the connection.
struct FrameSplit {
  std::vector<Bytes> frames;
  size_t consumed = 0;
  bool bad_length = false;
};
FrameSplit split_frames(std::span<const uint8_t> stream);

}  // namespace qkdnet
