#include "qkdnet/common.hpp"

#include "qkdnet/sha256.hpp"

namespace qkdnet {

const char* err_name(Err e) {
  switch (e) {
    case Err::None: return "None";
    case Err::LengthMismatch: return "LengthMismatch";
    case Err::KeyExhausted: return "KeyExhausted";
    case Err::UnknownKeyId: return "UnknownKeyId";
    case Err::KeyAlreadyUsed: return "KeyAlreadyUsed";
    case Err::KeyCompromised: return "KeyCompromised";
    case Err::DigestMismatch: return "DigestMismatch";
    case Err::BadMagic: return "BadMagic";
    case Err::BadCrc: return "BadCrc";
    case Err::BadAuthTag: return "BadAuthTag";
    case Err::BadLength: return "BadLength";
    case Err::BadMessage: return "BadMessage";
    case Err::StaleSequence: return "StaleSequence";
    case Err::OutOfOrder: return "OutOfOrder";
    case Err::Io: return "Io";
    case Err::BadFormat: return "BadFormat";
  }
  return "Unknown";
}

uint64_t mix_seed(uint64_t base, std::string_view label, uint64_t index) {
  // Hash the label so distinct stream names cannot collide by arithmetic.
  Bytes buf;
  put_u64be(buf, base);
  buf.insert(buf.end(), label.begin(), label.end());
  put_u64be(buf, index);
  Bytes32 h = sha256(buf);
  return get_u64be(h.data());
}

static const char* kHexDigits = "0123456789abcdef";

std::string to_hex(std::span<const uint8_t> data) {
  std::string s;
  s.reserve(data.size() * 2);
  for (uint8_t b : data) {
    s.push_back(kHexDigits[b >> 4]);
    s.push_back(kHexDigits[b & 0xf]);
  }
  return s;
}

static int hex_val(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

Expected<Bytes> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) return Err::BadFormat;
  Bytes out;
  out.reserve(hex.size() / 2);
  for (size_t i = 0; i < hex.size(); i += 2) {
    int hi = hex_val(hex[i]), lo = hex_val(hex[i + 1]);
    if (hi < 0 || lo < 0) return Err::BadFormat;
    out.push_back(uint8_t(hi << 4 | lo));
  }
  return out;
}

std::string to_hex32(const Bytes32& b) { return to_hex(std::span<const uint8_t>(b.data(), b.size())); }

Expected<Bytes32> bytes32_from_hex(std::string_view hex) {
  auto v = from_hex(hex);
  if (!v) return v.error();
  if (v.value().size() != 32) return Err::LengthMismatch;
  Bytes32 out;
  std::memcpy(out.data(), v.value().data(), 32);
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string fmt_u64(uint64_t v) {
  char buf[24];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace qkdnet
