#include "qkdnet/wire.hpp"

#include <cstring>

#include "qkdnet/sha256.hpp"

namespace qkdnet {

const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::Hello: return "hello";
    case MsgType::StatsReport: return "stats_report";
    case MsgType::TransferInit: return "transfer_init";
    case MsgType::KeyHop: return "key_hop";
    case MsgType::TransferAck: return "transfer_ack";
    case MsgType::TransferComplete: return "transfer_complete";
    case MsgType::Error: return "error";
  }
  return "?";
}

const char* role_name(Role r) {
  switch (r) {
    case Role::NetworkManager: return "nm";
    case Role::TrustedNode: return "tn";
    case Role::EdgeNode: return "en";
  }
  return "?";
}

Expected<Role> role_from_name(std::string_view s) {
  if (s == "nm") return Role::NetworkManager;
  if (s == "tn") return Role::TrustedNode;
  if (s == "en") return Role::EdgeNode;
  return Err::BadFormat;
}

MsgType WireMessage::type() const {
  struct V {
    MsgType operator()(const HelloMsg&) const { return MsgType::Hello; }
    MsgType operator()(const StatsReportMsg&) const { return MsgType::StatsReport; }
    MsgType operator()(const TransferInitMsg&) const { return MsgType::TransferInit; }
    MsgType operator()(const KeyHopMsg&) const { return MsgType::KeyHop; }
    MsgType operator()(const TransferAckMsg&) const { return MsgType::TransferAck; }
    MsgType operator()(const TransferCompleteMsg&) const { return MsgType::TransferComplete; }
    MsgType operator()(const ErrorMsg&) const { return MsgType::Error; }
  };
  return std::visit(V{}, payload);
}

namespace {

void put_str(Bytes& out, std::string_view s) {
  if (s.size() > 0xffff) s = s.substr(0, 0xffff);
  put_u16be(out, static_cast<uint16_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

void put_bytes32(Bytes& out, const Bytes32& b) { out.insert(out.end(), b.begin(), b.end()); }

// put_f64: IEEE-754 bits, big-endian.
void put_f64(Bytes& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64be(out, bits);
}

struct Reader {
  std::span<const uint8_t> buf;
  size_t pos = 0;
  bool fail = false;

  bool need(size_t n) {
    if (pos + n > buf.size()) {
      fail = true;
      return false;
    }
    return true;
  }
  uint8_t u8() {
    if (!need(1)) return 0;
    return buf[pos++];
  }
  uint16_t u16() {
    if (!need(2)) return 0;
    uint16_t v = get_u16be(buf.data() + pos);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    if (!need(4)) return 0;
    uint32_t v = get_u32be(buf.data() + pos);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    if (!need(8)) return 0;
    uint64_t v = get_u64be(buf.data() + pos);
    pos += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    uint16_t n = u16();
    if (!need(n)) return {};
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  Bytes32 b32() {
    Bytes32 b{};
    if (!need(32)) return b;
    std::memcpy(b.data(), buf.data() + pos, 32);
    pos += 32;
    return b;
  }
  bool done() const { return !fail && pos == buf.size(); }
};

void encode_payload(Bytes& out, const WireMessage& msg) {
  struct V {
    Bytes& out;
    void operator()(const HelloMsg& m) const {
      put_str(out, m.node_id);
      out.push_back(static_cast<uint8_t>(m.role));
    }
    void operator()(const StatsReportMsg& m) const {
      put_str(out, m.node_id);
      put_u64be(out, static_cast<uint64_t>(m.timestamp_ns));
      put_u64be(out, m.available_nk);
      put_u64be(out, m.used_nk);
      out.push_back(static_cast<uint8_t>(m.links.size()));
      for (const auto& l : m.links) {
        out.push_back(l.link_index);
        put_u64be(out, l.available_qk);
        put_u64be(out, l.used_qk);
        put_f64(out, l.skr_bps);
        out.push_back(l.has_qber ? 1 : 0);
        put_f64(out, l.qber_pct);
      }
    }
    void operator()(const TransferInitMsg& m) const {
      put_u64be(out, m.batch_id);
      put_u32be(out, m.count);
    }
    void operator()(const KeyHopMsg& m) const {
      put_u64be(out, m.batch_id);
      put_u32be(out, m.index);
      put_bytes32(out, m.nk_digest);
      put_bytes32(out, m.ciphertext);
      put_u64be(out, m.qk_id);
    }
    void operator()(const TransferAckMsg& m) const {
      put_u64be(out, m.batch_id);
      put_u32be(out, m.accepted);
    }
    void operator()(const TransferCompleteMsg& m) const {
      put_u64be(out, m.batch_id);
      put_u32be(out, m.received);
      put_u32be(out, m.expected);
    }
    void operator()(const ErrorMsg& m) const {
      out.push_back(static_cast<uint8_t>(m.code));
      put_u64be(out, m.batch_id);
      put_u32be(out, m.index);
      put_str(out, m.detail);
    }
  };
  std::visit(V{out}, msg.payload);
}

Expected<WireMessage> decode_payload(MsgType type, uint64_t seq, std::span<const uint8_t> pay) {
  Reader r{pay};
  WireMessage msg;
  msg.sequence = seq;
  switch (type) {
    case MsgType::Hello: {
      HelloMsg m;
      m.node_id = r.str();
      uint8_t role = r.u8();
      if (role > 2) return Err::BadMessage;
      m.role = static_cast<Role>(role);
      msg.payload = std::move(m);
      break;
    }
    case MsgType::StatsReport: {
      StatsReportMsg m;
      m.node_id = r.str();
      m.timestamp_ns = static_cast<int64_t>(r.u64());
      m.available_nk = r.u64();
      m.used_nk = r.u64();
      uint8_t n = r.u8();
      for (uint8_t i = 0; i < n; ++i) {
        LinkStats l;
        l.link_index = r.u8();
        l.available_qk = r.u64();
        l.used_qk = r.u64();
        l.skr_bps = r.f64();
        l.has_qber = r.u8() != 0;
        l.qber_pct = r.f64();
        m.links.push_back(l);
      }
      msg.payload = std::move(m);
      break;
    }
    case MsgType::TransferInit: {
      TransferInitMsg m;
      m.batch_id = r.u64();
      m.count = r.u32();
      msg.payload = m;
      break;
    }
    case MsgType::KeyHop: {
      KeyHopMsg m;
      m.batch_id = r.u64();
      m.index = r.u32();
      m.nk_digest = r.b32();
      m.ciphertext = r.b32();
      m.qk_id = r.u64();
      msg.payload = m;
      break;
    }
    case MsgType::TransferAck: {
      TransferAckMsg m;
      m.batch_id = r.u64();
      m.accepted = r.u32();
      msg.payload = m;
      break;
    }
    case MsgType::TransferComplete: {
      TransferCompleteMsg m;
      m.batch_id = r.u64();
      m.received = r.u32();
      m.expected = r.u32();
      msg.payload = m;
      break;
    }
    case MsgType::Error: {
      ErrorMsg m;
      uint8_t code = r.u8();
      m.code = static_cast<ErrorCode>(code);
      m.batch_id = r.u64();
      m.index = r.u32();
      m.detail = r.str();
      msg.payload = std::move(m);
      break;
    }
    default:
      return Err::BadMessage;
  }
  if (!r.done()) return Err::BadMessage;
  return msg;
}

Bytes32 compute_auth_tag(const Psk& psk, std::span<const uint8_t> signed_region) {
  Bytes material(psk.begin(), psk.end());
  material.insert(material.end(), signed_region.begin(), signed_region.end());
  return sha256(material);
}

}  // namespace

Bytes encode_wire(const WireMessage& msg, const Psk& psk) {
  Bytes body;
  body.push_back(kWireVersion);
  body.push_back(static_cast<uint8_t>(msg.type()));
  put_u64be(body, msg.sequence);
  encode_payload(body, msg);
  Bytes32 tag = compute_auth_tag(psk, body);
  Bytes out;
  put_u32be(out, static_cast<uint32_t>(body.size() + kAuthTagLen));
  out.insert(out.end(), body.begin(), body.end());
  out.insert(out.end(), tag.begin(), tag.end());
  return out;
}

Expected<WireMessage> decode_wire(std::span<const uint8_t> frame, const Psk& psk, uint64_t& last_seq) {
  // Fixed part past the length prefix: version(1) type(1) seq(8) tag(32).
  if (frame.size() < 4 + 1 + 1 + 8 + kAuthTagLen) return Err::BadLength;
  uint32_t len = get_u32be(frame.data());
  if (len != frame.size() - 4) return Err::BadLength;
  if (len > kMaxWireFrame) return Err::BadLength;
  auto body = frame.subspan(4, len - kAuthTagLen);
  auto tag = frame.subspan(4 + len - kAuthTagLen, kAuthTagLen);
  Bytes32 expect = compute_auth_tag(psk, body);
  if (!std::equal(expect.begin(), expect.end(), tag.begin())) return Err::BadAuthTag;
  if (body[0] != kWireVersion) return Err::BadMessage;
  uint8_t type_raw = body[1];
  if (type_raw < 1 || type_raw > 7) return Err::BadMessage;
  uint64_t seq = get_u64be(body.data() + 2);
  auto msg = decode_payload(static_cast<MsgType>(type_raw), seq, body.subspan(10));
  if (!msg.ok()) return msg.error();
  // Senders start at 1; a fresh receiver holds last_seq = 0.
  if (seq <= last_seq) return Err::StaleSequence;
  last_seq = seq;
  return msg;
}

FrameSplit split_frames(std::span<const uint8_t> stream) {
  FrameSplit out;
  size_t pos = 0;
  while (stream.size() - pos >= 4) {
    uint32_t len = get_u32be(stream.data() + pos);
    if (len == 0 || len > kMaxWireFrame) {
      out.bad_length = true;
      break;
    }
    if (stream.size() - pos < 4 + static_cast<size_t>(len)) break;
    out.frames.emplace_back(stream.begin() + pos, stream.begin() + pos + 4 + len);
    pos += 4 + len;
  }
  out.consumed = pos;
  return out;
}

}  // namespace qkdnet
