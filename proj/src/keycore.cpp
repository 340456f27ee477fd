#include "qkdnet/keycore.hpp"

#include <fstream>

#include "qkdnet/sha256.hpp"

namespace qkdnet {

const char* key_status_name(KeyStatus s) {
  switch (s) {
    case KeyStatus::Fresh: return "fresh";
    case KeyStatus::Used: return "used";
    case KeyStatus::Compromised: return "compromised";
  }
  return "?";
}

std::string TableScope::name() const {
  return is_network() ? "nk" : "qk" + std::to_string(link_index);
}

Expected<Bytes32> xor_bytes(std::span<const uint8_t> a, std::span<const uint8_t> b) {
  if (a.size() != kKeyBytes || b.size() != kKeyBytes) return Err::LengthMismatch;
  Bytes32 out;
  for (size_t i = 0; i < kKeyBytes; ++i) out[i] = a[i] ^ b[i];
  return out;
}

std::vector<KeyRecord> KeyTable::ingest_bits(std::span<const uint8_t> data, size_t nbits) {
  residual_.append(data, nbits);
  ingested_bits_total_ += nbits;
  std::vector<KeyRecord> fresh;
  while (residual_.has_block()) {
    KeyRecord rec;
    rec.id = next_id_++;
    rec.bits = residual_.pop_block();
    rec.digest = sha256(rec.bits);
    rec.status = KeyStatus::Fresh;
    records_.push_back(rec);
    ++fresh_count_;
    fresh.push_back(rec);
  }
  return fresh;
}

const KeyRecord* KeyTable::find(uint64_t id) const {
  if (id >= records_.size()) return nullptr;
  return &records_[id];
}

KeyRecord* KeyTable::find_mut(uint64_t id) {
  if (id >= records_.size()) return nullptr;
  return &records_[id];
}

Expected<OtpResult> KeyTable::otp_encrypt(const Bytes32& message) {
  while (first_fresh_hint_ < records_.size() && records_[first_fresh_hint_].status != KeyStatus::Fresh) {
    ++first_fresh_hint_;
  }
  if (first_fresh_hint_ >= records_.size()) return Err::KeyExhausted;
  KeyRecord& rec = records_[first_fresh_hint_];
  OtpResult res;
  res.ciphertext = xor_bytes(message, rec.bits).value();
  res.key_id = rec.id;
  rec.status = KeyStatus::Used;
  --fresh_count_;
  ++used_count_;
  return res;
}

Expected<Bytes32> KeyTable::otp_decrypt(const Bytes32& ciphertext, uint64_t key_id) {
  KeyRecord* rec = find_mut(key_id);
  if (!rec) return Err::UnknownKeyId;
  if (rec->status == KeyStatus::Used) return Err::KeyAlreadyUsed;
  if (rec->status == KeyStatus::Compromised) return Err::KeyCompromised;
  Bytes32 plain = xor_bytes(ciphertext, rec->bits).value();
  rec->status = KeyStatus::Used;
  --fresh_count_;
  ++used_count_;
  return plain;
}

Expected<std::vector<KeyRecord>> KeyTable::take_fresh(size_t count) {
  if (fresh_count_ < count) return Err::KeyExhausted;
  std::vector<KeyRecord> taken;
  taken.reserve(count);
  size_t i = first_fresh_hint_;
  while (taken.size() < count) {
    while (i < records_.size() && records_[i].status != KeyStatus::Fresh) ++i;
    KeyRecord& rec = records_[i];
    rec.status = KeyStatus::Used;
    --fresh_count_;
    ++used_count_;
    taken.push_back(rec);
  }
  first_fresh_hint_ = i;
  return taken;
}

Err KeyTable::mark_compromised(uint64_t key_id) {
  KeyRecord* rec = find_mut(key_id);
  if (!rec) return Err::UnknownKeyId;
  if (rec->status == KeyStatus::Used) return Err::KeyAlreadyUsed;
  if (rec->status == KeyStatus::Compromised) return Err::None;  // idempotent
  rec->status = KeyStatus::Compromised;
  --fresh_count_;
  ++compromised_count_;
  return Err::None;
}

Bytes32 KeyTable::content_digest() const {
  Bytes buf;
  buf.reserve(records_.size() * 40);
  for (const auto& r : records_) {
    put_u64be(buf, r.id);
    buf.insert(buf.end(), r.bits.begin(), r.bits.end());
  }
  return sha256(buf);
}

Bytes32 KeyTable::state_digest() const {
  Bytes buf;
  buf.reserve(records_.size() * 41);
  for (const auto& r : records_) {
    put_u64be(buf, r.id);
    buf.insert(buf.end(), r.bits.begin(), r.bits.end());
    buf.push_back(uint8_t(r.status));
  }
  return sha256(buf);
}

std::string KeyTable::check_invariants() const {
  size_t fresh = 0, used = 0, comp = 0;
  for (size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.id != i) return "ids not strictly increasing from 0 at index " + std::to_string(i);
    if (sha256(r.bits) != r.digest) return "digest mismatch at id " + std::to_string(i);
    switch (r.status) {
      case KeyStatus::Fresh: ++fresh; break;
      case KeyStatus::Used: ++used; break;
      case KeyStatus::Compromised: ++comp; break;
    }
  }
  if (fresh != fresh_count_) return "fresh count drift";
  if (used != used_count_) return "used count drift";
  if (comp != compromised_count_) return "compromised count drift";
  if (residual_.size_bits() >= kKeyBits) return "residual >= 256 bits";
  if (ingested_bits_total_ != kKeyBits * records_.size() + residual_.size_bits()) {
    return "bit conservation violated";
  }
  return {};
}

static constexpr char kTableMagic[8] = {'Q', 'K', 'T', 'A', 'B', 'L', 'E', '1'};

Bytes KeyTable::serialize() const {
  Bytes out;
  out.insert(out.end(), kTableMagic, kTableMagic + 8);
  out.push_back(uint8_t(scope_.link_index));  // 0 = network-key pool
  put_u64le(out, records_.size());
  for (const auto& r : records_) {
    put_u64le(out, r.id);
    out.insert(out.end(), r.bits.begin(), r.bits.end());
    out.insert(out.end(), r.digest.begin(), r.digest.end());
    out.push_back(uint8_t(r.status));
  }
  put_u16le(out, uint16_t(residual_.size_bits()));
  const Bytes& res = residual_.bytes();
  out.insert(out.end(), res.begin(), res.end());
  return out;
}

Expected<KeyTable> KeyTable::deserialize(std::span<const uint8_t> data) {
  if (data.size() < 8 + 1 + 8 + 2) return Err::BadLength;
  if (std::memcmp(data.data(), kTableMagic, 8) != 0) return Err::BadMagic;
  size_t pos = 8;
  TableScope scope{data[pos++]};
  uint64_t count = get_u64le(data.data() + pos);
  pos += 8;
  constexpr size_t kRecBytes = 8 + 32 + 32 + 1;
  if (data.size() < pos + count * kRecBytes + 2) return Err::BadLength;
  KeyTable table(scope);
  table.records_.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    KeyRecord r;
    r.id = get_u64le(data.data() + pos);
    pos += 8;
    std::memcpy(r.bits.data(), data.data() + pos, 32);
    pos += 32;
    std::memcpy(r.digest.data(), data.data() + pos, 32);
    pos += 32;
    uint8_t st = data[pos++];
    if (st > 2) return Err::BadFormat;
    r.status = KeyStatus(st);
    if (r.id != i) return Err::BadFormat;
    if (sha256(r.bits) != r.digest) return Err::DigestMismatch;
    table.records_.push_back(r);
    switch (r.status) {
      case KeyStatus::Fresh: ++table.fresh_count_; break;
      case KeyStatus::Used: ++table.used_count_; break;
      case KeyStatus::Compromised: ++table.compromised_count_; break;
    }
  }
  uint16_t res_bits = get_u16le(data.data() + pos);
  pos += 2;
  if (res_bits >= kKeyBits) return Err::BadFormat;
  size_t res_bytes = (res_bits + 7) / 8;
  if (data.size() != pos + res_bytes) return Err::BadLength;
  table.residual_.append(data.subspan(pos, res_bytes), res_bits);
  table.next_id_ = count;
  table.ingested_bits_total_ = kKeyBits * count + res_bits;
  return table;
}

Err KeyTable::save(const std::string& path) const {
  Bytes data = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) return Err::Io;
  f.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  return f.good() ? Err::None : Err::Io;
}

Expected<KeyTable> KeyTable::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return Err::Io;
  Bytes data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(data);
}

Bytes32 NetworkKeySource::key_at(uint64_t counter) const {
  Bytes buf(seed_.begin(), seed_.end());
  put_u64be(buf, counter);
  return sha256(buf);
}

std::vector<KeyRecord> NetworkKeySource::draw_into(KeyTable& table, size_t h) {
  Bytes bits;
  bits.reserve(h * kKeyBytes);
  for (size_t i = 0; i < h; ++i) {
    Bytes32 k = key_at(counter_ + i);
    bits.insert(bits.end(), k.begin(), k.end());
  }
  counter_ += h;
  return table.ingest_bits(bits, h * kKeyBits);
}

}  // namespace qkdnet
