#include "qkdnet/bitbuf.hpp"

namespace qkdnet {

void BitBuffer::append(std::span<const uint8_t> data, size_t nbits) {
  if (nbits_ % 8 == 0) {
    // Byte-aligned fast path: copy whole bytes, trim the partial tail.
    size_t nbytes = (nbits + 7) / 8;
    buf_.insert(buf_.end(), data.begin(), data.begin() + nbytes);
    nbits_ += nbits;
    if (nbits % 8 != 0) buf_.back() &= uint8_t(0xff << (8 - nbits % 8));
    return;
  }
  for (size_t i = 0; i < nbits; ++i) {
    bool bit = (data[i / 8] >> (7 - i % 8)) & 1;
    if (nbits_ % 8 == 0) buf_.push_back(0);
    if (bit) buf_[nbits_ / 8] |= uint8_t(1u << (7 - nbits_ % 8));
    ++nbits_;
  }
}

Bytes32 BitBuffer::pop_block() {
  Bytes32 out;
  std::memcpy(out.data(), buf_.data(), kKeyBytes);
  buf_.erase(buf_.begin(), buf_.begin() + kKeyBytes);
  nbits_ -= kKeyBits;
  return out;
}

}  // namespace qkdnet
