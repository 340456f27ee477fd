#include "qkdnet/sha256.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <stdexcept>

namespace qkdnet {

Bytes32 sha256(std::span<const uint8_t> data) {
  Bytes32 out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32) {
    throw std::runtime_error("sha256 failed");
  }
  return out;
}

Bytes32 sha256(const Bytes& a, const Bytes& b) {
  Bytes cat;
  cat.reserve(a.size() + b.size());
  cat.insert(cat.end(), a.begin(), a.end());
  cat.insert(cat.end(), b.begin(), b.end());
  return sha256(cat);
}

uint32_t crc32_ieee(std::span<const uint8_t> data) {
  return static_cast<uint32_t>(::crc32(0L, data.data(), static_cast<uInt>(data.size())));
}

}  // namespace qkdnet
