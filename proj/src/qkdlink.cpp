#include "qkdnet/qkdlink.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "qkdnet/sha256.hpp"

namespace qkdnet {

const char* protocol_name(ProtocolTag t) {
  switch (t) {
    case ProtocolTag::BBM92: return "bbm92";
    case ProtocolTag::BB84: return "bb84";
    case ProtocolTag::SARG04: return "sarg04";
  }
  return "?";
}

const char* delivery_name(DeliveryMode m) {
  switch (m) {
    case DeliveryMode::PacketStream: return "packet_stream";
    case DeliveryMode::AppendFile: return "append_file";
    case DeliveryMode::RewriteFile: return "rewrite_file";
  }
  return "?";
}

Expected<ProtocolTag> protocol_from_name(std::string_view s) {
  if (s == "bbm92") return ProtocolTag::BBM92;
  if (s == "bb84") return ProtocolTag::BB84;
  if (s == "sarg04") return ProtocolTag::SARG04;
  return Err::BadFormat;
}

Expected<DeliveryMode> delivery_from_name(std::string_view s) {
  if (s == "packet_stream") return DeliveryMode::PacketStream;
  if (s == "append_file") return DeliveryMode::AppendFile;
  if (s == "rewrite_file") return DeliveryMode::RewriteFile;
  return Err::BadFormat;
}

std::string LinkProfile::validate() const {
  if (link_index < 1) return "link_index must be >= 1";
  if (!(skr_mean_bps > 0)) return "skr_mean_bps must be > 0";
  if (skr_std_bps < 0) return "skr_std_bps must be >= 0";
  if (qber_mean_pct < 0 || qber_mean_pct >= 50) return "qber_mean_pct must be in [0, 50)";
  if (qber_std_pct < 0) return "qber_std_pct must be >= 0";
  if (loss_db < 0) return "loss_db must be >= 0";
  if (!(cycle_period_s > 0)) return "cycle_period_s must be > 0";
  if (compromise_threshold_pct <= 0) return "compromise_threshold_pct must be > 0";
  return {};
}

// Box-Muller, two uniforms per draw. u1 is shifted into (0,1] for the log.
static double gaussian(SplitMix64& rng, double mean, double std) {
  double u1 = 1.0 - rng.next_unit();
  double u2 = rng.next_unit();
  double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  return mean + std * z;
}

CycleOutput sample_cycle(const LinkProfile& profile, std::span<const DisturbanceWindow> windows,
                         double now_s, SplitMix64& rng) {
  double qber_add = 0.0;
  double skr_scale = 1.0;
  for (const auto& w : windows) {
    if (w.link_index == profile.link_index && now_s >= w.start_s && now_s < w.end_s) {
      qber_add += w.qber_add_pct;
      skr_scale *= w.skr_scale;
    }
  }

  CycleOutput out;
  double q = gaussian(rng, profile.qber_mean_pct + qber_add, profile.qber_std_pct);
  out.qber_pct = std::min(std::max(q, 0.0), std::nextafter(50.0, 0.0));
  double s = gaussian(rng, profile.skr_mean_bps, profile.skr_std_bps);
  out.skr_bps = std::max(0.0, s) * skr_scale;

  out.nbits = size_t(std::llround(out.skr_bps * profile.cycle_period_s));
  out.key_bits.resize((out.nbits + 7) / 8);
  for (size_t i = 0; i < out.key_bits.size(); i += 8) {
    uint64_t w = rng.next();
    for (size_t j = 0; j < 8 && i + j < out.key_bits.size(); ++j) {
      out.key_bits[i + j] = uint8_t(w >> (8 * (7 - j)));
    }
  }
  if (out.nbits % 8 != 0 && !out.key_bits.empty()) {
    out.key_bits.back() &= uint8_t(0xff << (8 - out.nbits % 8));
  }
  return out;
}

// --- QIX frame ---------------------------------------------------------------

Bytes encode_qix_frame(const QixFrame& f) {
  Bytes out;
  out.reserve(kQixFrameLen);
  out.insert(out.end(), kQixMagic, kQixMagic + 3);
  out.push_back(0x01);
  put_u32be(out, f.key_id);
  out.insert(out.end(), f.key_bits.begin(), f.key_bits.end());
  out.push_back(f.compromised ? 0x01 : 0x00);
  uint32_t crc = crc32_ieee(std::span<const uint8_t>(out.data() + 3, out.size() - 3));
  put_u32be(out, crc);
  return out;
}

Expected<QixFrame> parse_qix_frame(std::span<const uint8_t> data) {
  if (data.size() < kQixFrameLen) return Err::BadLength;
  if (std::memcmp(data.data(), kQixMagic, 3) != 0) return Err::BadMagic;
  if (data[3] != 0x01) return Err::BadMagic;  // unknown version, resync
  uint32_t crc = crc32_ieee(data.subspan(3, 38));
  if (crc != get_u32be(data.data() + 41)) return Err::BadCrc;
  QixFrame f;
  f.key_id = get_u32be(data.data() + 4);
  std::memcpy(f.key_bits.data(), data.data() + 8, 32);
  f.compromised = data[40] != 0x00;
  return f;
}

StreamScan scan_qix_stream(std::span<const uint8_t> data) {
  StreamScan out;
  size_t pos = 0;
  const size_t n = data.size();
  while (pos < n) {
    // Advance to the next full or prefix match of the magic.
    size_t m = pos;
    while (m < n) {
      size_t cmp = std::min<size_t>(n - m, 3);
      if (std::memcmp(data.data() + m, kQixMagic, cmp) == 0) break;
      ++m;
    }
    out.skipped_bytes += m - pos;
    pos = m;
    if (pos >= n) break;
    if (n - pos < kQixFrameLen) break;  // partial frame or magic prefix: wait
    auto parsed = parse_qix_frame(data.subspan(pos, kQixFrameLen));
    if (parsed.ok()) {
      out.frames.push_back(parsed.value());
      pos += kQixFrameLen;
    } else if (parsed.error() == Err::BadCrc) {
      ++out.bad_frames;
      ++out.skipped_bytes;
      ++pos;
    } else {  // magic matched but version byte did not: garbage
      ++out.skipped_bytes;
      ++pos;
    }
  }
  out.consumed = pos;
  return out;
}

// --- media ----------------------------------------------------------------

Err MemoryMedium::append(std::span<const uint8_t> data) {
  data_.insert(data_.end(), data.begin(), data.end());
  return Err::None;
}

Err MemoryMedium::replace(std::span<const uint8_t> data) {
  data_.assign(data.begin(), data.end());
  return Err::None;
}

Err FileMedium::append(std::span<const uint8_t> data) {
  std::ofstream f(path_, std::ios::binary | std::ios::app);
  if (!f) return Err::Io;
  f.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  return f.good() ? Err::None : Err::Io;
}

Err FileMedium::replace(std::span<const uint8_t> data) {
  std::string tmp = path_ + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) return Err::Io;
    f.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
    if (!f.good()) return Err::Io;
  }
  return std::rename(tmp.c_str(), path_.c_str()) == 0 ? Err::None : Err::Io;
}

Expected<Bytes> FileMedium::snapshot() const {
  std::ifstream f(path_, std::ios::binary);
  if (!f) return Bytes{};  // not created yet reads as empty
  return Bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// --- emitter ----------------------------------------------------------------

LinkEmitter::LinkEmitter(const LinkProfile& profile, uint64_t link_seed)
    : profile_(profile), link_seed_(link_seed) {}

CycleOutput LinkEmitter::sample(uint64_t cycle_index, double now_s,
                                std::span<const DisturbanceWindow> windows) const {
  SplitMix64 rng(mix_seed(link_seed_, "cycle", cycle_index));
  return sample_cycle(profile_, windows, now_s, rng);
}

Err LinkEmitter::emit(const CycleOutput& cycle, DeliveryMedium& medium) {
  pending_.append(cycle.key_bits, cycle.nbits);
  bits_emitted_ += cycle.nbits;
  bool flagged = cycle.qber_pct > profile_.compromise_threshold_pct;

  while (pending_.has_block()) {
    Bytes32 key = pending_.pop_block();
    ++keys_emitted_;
    if (flagged) ++keys_flagged_;
    switch (profile_.delivery) {
      case DeliveryMode::PacketStream: {
        QixFrame f{next_key_id_++, key, flagged};
        Bytes frame = encode_qix_frame(f);
        unflushed_.insert(unflushed_.end(), frame.begin(), frame.end());
        break;
      }
      case DeliveryMode::AppendFile: {
        std::string line = to_hex32(key);
        line += '\n';
        unflushed_.insert(unflushed_.end(), line.begin(), line.end());
        ++next_key_id_;
        break;
      }
      case DeliveryMode::RewriteFile: {
        all_lines_.push_back(to_hex32(key));
        rewrite_dirty_ = true;
        ++next_key_id_;
        break;
      }
    }
  }

  if (profile_.delivery == DeliveryMode::RewriteFile) {
    if (!rewrite_dirty_) return Err::None;
    std::string text;
    for (const auto& l : all_lines_) {
      text += l;
      text += '\n';
    }
    Err e = medium.replace(std::span<const uint8_t>(
        reinterpret_cast<const uint8_t*>(text.data()), text.size()));
    if (e == Err::None) rewrite_dirty_ = false;
    return e;
  }

  if (unflushed_.empty()) return Err::None;
  Err e = medium.append(unflushed_);
  if (e == Err::None) unflushed_.clear();
  return e;
}

CycleOutput LinkEmitter::run_cycle(uint64_t cycle_index, double now_s,
                                   std::span<const DisturbanceWindow> windows,
                                   DeliveryMedium& medium) {
  CycleOutput out = sample(cycle_index, now_s, windows);
  emit(out, medium);
  return out;
}

// --- feed ----------------------------------------------------------------

FeedUpdate detect_update(FeedState& st, std::span<const uint8_t> current) {
  FeedUpdate up;
  if (st.mode == DeliveryMode::PacketStream) {
    up.kind = UpdateKind::Packets;
    if (current.size() < st.stream_offset) {
      // Stream can only grow; a shrink means the observer was reset.
      st.stream_offset = 0;
    }
    StreamScan scan = scan_qix_stream(current.subspan(st.stream_offset));
    st.stream_offset += scan.consumed;
    up.frames = std::move(scan.frames);
    up.skipped_bytes = scan.skipped_bytes;
    up.bad_frames = scan.bad_frames;
    if (up.frames.empty() && up.bad_frames == 0 && up.skipped_bytes == 0) {
      up.kind = UpdateKind::NoChange;
    }
    return up;
  }

  Bytes32 full_hash = sha256(current);
  if (current.size() == st.last_len && full_hash == st.last_hash) {
    up.kind = UpdateKind::NoChange;
    return up;
  }
  if (current.size() > st.last_len &&
      sha256(current.subspan(0, st.last_len)) == st.last_hash) {
    up.kind = UpdateKind::Appended;
    up.data.assign(current.begin() + std::ptrdiff_t(st.last_len), current.end());
  } else {
    up.kind = UpdateKind::Rewritten;
    up.data.assign(current.begin(), current.end());
  }
  st.last_len = current.size();
  st.last_hash = full_hash;
  return up;
}

FeedConsumer::FeedConsumer(DeliveryMode mode) {
  state_.mode = mode;
  state_.last_hash = sha256(std::span<const uint8_t>{});
}

void FeedConsumer::restore_state(const FeedState& st, uint64_t lines_seen) {
  state_ = st;
  lines_seen_ = lines_seen;
}

void FeedConsumer::take_lines(std::string_view text, uint64_t skip_watermark) {
  uint64_t index = 0;
  size_t pos = 0;
  std::string carry;
  if (skip_watermark == 0 && !partial_line_.empty()) {
    // Append mode: stitch the carried tail onto the new data.
    carry = partial_line_ + std::string(text);
    text = carry;
    partial_line_.clear();
  }
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      partial_line_ = std::string(text.substr(pos));
      break;
    }
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (index++ < skip_watermark) continue;
    if (line.size() != 64) {
      ++bad_lines_;
      continue;
    }
    auto key = bytes32_from_hex(line);
    if (!key) {
      ++bad_lines_;
      continue;
    }
    pending_.push_back(PendingKey{key.value(), false});
    ++keys_seen_;
    ++lines_seen_;
  }
}

void FeedConsumer::observe(std::span<const uint8_t> current) {
  FeedUpdate up = detect_update(state_, current);
  skipped_bytes_ += up.skipped_bytes;
  bad_frames_ += up.bad_frames;
  switch (up.kind) {
    case UpdateKind::NoChange:
      break;
    case UpdateKind::Packets:
      for (const auto& f : up.frames) {
        pending_.push_back(PendingKey{f.key_bits, f.compromised});
        ++keys_seen_;
      }
      break;
    case UpdateKind::Appended:
      take_lines(std::string_view(reinterpret_cast<const char*>(up.data.data()), up.data.size()), 0);
      break;
    case UpdateKind::Rewritten: {
      // Re-parse everything; the watermark drops keys already taken.
      partial_line_.clear();
      uint64_t mark = lines_seen_;
      lines_seen_ = 0;
      take_lines(std::string_view(reinterpret_cast<const char*>(up.data.data()), up.data.size()), mark);
      lines_seen_ += mark;
      break;
    }
  }
}

std::vector<KeyRecord> FeedConsumer::admit(KeyTable& table, size_t fresh_cap) {
  std::vector<KeyRecord> admitted;
  while (!pending_.empty()) {
    const PendingKey& pk = pending_.front();
    if (!pk.compromised && fresh_cap != 0 && table.available() >= fresh_cap) break;
    auto recs = table.ingest_bits(pk.bits, kKeyBits);
    // A whole-key ingest on an empty residual yields exactly one record.
    for (auto& r : recs) {
      if (pk.compromised) {
        table.mark_compromised(r.id);
        r.status = KeyStatus::Compromised;
      }
      admitted.push_back(r);
      ++keys_admitted_;
    }
    pending_.pop_front();
  }
  return admitted;
}

}  // namespace qkdnet
