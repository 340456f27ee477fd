#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qkdnet {

using Bytes = std::vector<uint8_t>;
using Bytes32 = std::array<uint8_t, 32>;

constexpr size_t kKeyBits = 256;
constexpr size_t kKeyBytes = 32;

// Domain error codes. Functions that can fail in ways the caller must
// branch on return Expected<T> / Err rather than throwing.
enum class Err : uint8_t {
  None = 0,
  LengthMismatch,
  KeyExhausted,
  UnknownKeyId,
  KeyAlreadyUsed,
  KeyCompromised,
  DigestMismatch,
  BadMagic,
  BadCrc,
  BadAuthTag,
  BadLength,
  BadMessage,
  StaleSequence,
  OutOfOrder,
  Io,
  BadFormat,
};

const char* err_name(Err e);

template <typename T>
class Expected {
 public:
  Expected(T v) : val_(std::move(v)), err_(Err::None) {}
  Expected(Err e) : val_(std::nullopt), err_(e) {}

  bool ok() const { return err_ == Err::None; }
  explicit operator bool() const { return ok(); }
  Err error() const { return err_; }

  const T& value() const& {
    if (!ok()) throw std::logic_error(std::string("Expected::value on error: ") + err_name(err_));
    return *val_;
  }
  T& value() & {
    if (!ok()) throw std::logic_error(std::string("Expected::value on error: ") + err_name(err_));
    return *val_;
  }
  T&& take() {
    if (!ok()) throw std::logic_error(std::string("Expected::take on error: ") + err_name(err_));
    return std::move(*val_);
  }

 private:
  std::optional<T> val_;
  Err err_;
};

// --- deterministic PRNG -------------------------------------------------

// splitmix64: tiny, portable, passes BigCrush. Used for all emulator
// randomness so streams are reproducible across platforms and restarts.
struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0,1) with 53 bits of precision
  double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

// Derives independent stream seeds from a base seed and a label, so adding
// a consumer never perturbs existing streams.
uint64_t mix_seed(uint64_t base, std::string_view label, uint64_t index = 0);

// --- hex ----------------------------------------------------------------

std::string to_hex(std::span<const uint8_t> data);
Expected<Bytes> from_hex(std::string_view hex);
std::string to_hex32(const Bytes32& b);
Expected<Bytes32> bytes32_from_hex(std::string_view hex);

// --- big/little endian helpers -------------------------------------------

inline void put_u16be(Bytes& out, uint16_t v) {
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}
inline void put_u32be(Bytes& out, uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(uint8_t(v >> (8 * i)));
}
inline void put_u64be(Bytes& out, uint64_t v) {
  for (int i = 7; i >= 0; --i) out.push_back(uint8_t(v >> (8 * i)));
}
inline uint16_t get_u16be(const uint8_t* p) { return uint16_t(p[0]) << 8 | p[1]; }
inline uint32_t get_u32be(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = v << 8 | p[i];
  return v;
}
inline uint64_t get_u64be(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = v << 8 | p[i];
  return v;
}
inline void put_u16le(Bytes& out, uint16_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
}
inline void put_u64le(Bytes& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}
inline uint16_t get_u16le(const uint8_t* p) { return uint16_t(p[1]) << 8 | p[0]; }
inline uint64_t get_u64le(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = v << 8 | p[i];
  return v;
}

// --- time ----------------------------------------------------------------

// All timing is carried as integer nanoseconds (virtual in sim mode,
// since-run-start in real mode) so event math is exact.
using TimeNs = int64_t;

constexpr TimeNs kNsPerSec = 1'000'000'000;

inline TimeNs seconds_to_ns(double s) { return static_cast<TimeNs>(s * 1e9 + (s >= 0 ? 0.5 : -0.5)); }
inline double ns_to_seconds(TimeNs t) { return static_cast<double>(t) / 1e9; }

// --- number formatting -----------------------------------------------------

// Shortest round-trip representation; stable across runs of the same build.
std::string fmt_double(double v);
std::string fmt_u64(uint64_t v);

}  // namespace qkdnet
