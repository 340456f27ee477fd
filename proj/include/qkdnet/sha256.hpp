#pragma once

#include "qkdnet/common.hpp"

namespace qkdnet {

Bytes32 sha256(std::span<const uint8_t> data);
Bytes32 sha256(const Bytes& a, const Bytes& b);  // sha256(a || b)

uint32_t crc32_ieee(std::span<const uint8_t> data);

}  // namespace qkdnet
