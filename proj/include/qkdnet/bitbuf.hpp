#pragma once

#include "qkdnet/common.hpp"

namespace qkdnet {

// Packed bit sequence, MSB-first within each byte. Appends may end on a
// partial byte; extraction is always in whole 256-bit blocks, so the byte
// alignment of the stored buffer never drifts.
class BitBuffer {
 public:
  void append(std::span<const uint8_t> data, size_t nbits);
  void append_byte_aligned(std::span<const uint8_t> data) { append(data, data.size() * 8); }

  size_t size_bits() const { return nbits_; }
  bool has_block() const { return nbits_ >= kKeyBits; }

  // Removes and returns the first 256 bits. Caller checks has_block().
  Bytes32 pop_block();

  // Raw packed view (last byte may be partial).
  const Bytes& bytes() const { return buf_; }

 private:
  Bytes buf_;
  size_t nbits_ = 0;
};

}  // namespace qkdnet
