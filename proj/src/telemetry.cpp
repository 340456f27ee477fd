#include "qkdnet/telemetry.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace qkdnet {

Expected<Summary> summarize(std::span<const double> values) {
  if (values.empty()) return Err::BadLength;
  Summary s;
  s.n = values.size();
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / double(s.n);
  if (s.n >= 2) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / double(s.n - 1));
  }
  return s;
}

std::string series_key(const std::string& measurement, const std::map<std::string, std::string>& tags) {
  std::string k = measurement;
  for (const auto& [tag, val] : tags) {
    k += ',';
    k += tag;
    k += '=';
    k += val;
  }
  return k;
}

Err Recorder::record(SeriesPoint point) {
  std::string key = series_key(point.measurement, point.tags);
  auto it = last_ts_.find(key);
  if (it != last_ts_.end() && point.timestamp_ns < it->second) {
    ++rejected_;
    return Err::OutOfOrder;
  }
  last_ts_[key] = point.timestamp_ns;
  points_.push_back(std::move(point));
  return Err::None;
}

std::vector<const SeriesPoint*> Recorder::series(const std::string& measurement,
                                                 const std::map<std::string, std::string>& tags) const {
  std::vector<const SeriesPoint*> out;
  for (const auto& p : points_) {
    if (p.measurement == measurement && p.tags == tags) out.push_back(&p);
  }
  return out;
}

std::vector<double> Recorder::field_values(const std::string& measurement,
                                           const std::map<std::string, std::string>& tags,
                                           const std::string& field) const {
  std::vector<double> out;
  for (const auto& p : points_) {
    if (p.measurement != measurement || p.tags != tags) continue;
    auto it = p.fields.find(field);
    if (it != p.fields.end()) out.push_back(it->second);
  }
  return out;
}

std::string point_to_line(const SeriesPoint& p) {
  std::string line = p.measurement;
  for (const auto& [tag, val] : p.tags) {
    line += ',';
    line += tag;
    line += '=';
    line += val;
  }
  line += ' ';
  bool first = true;
  for (const auto& [f, v] : p.fields) {
    if (!first) line += ',';
    first = false;
    line += f;
    line += '=';
    line += fmt_double(v);
  }
  line += ' ';
  line += std::to_string(p.timestamp_ns);
  return line;
}

std::string Recorder::export_lines(TimeNs from, TimeNs to) const {
  std::string out;
  for (const auto& p : points_) {
    if (p.timestamp_ns < from || p.timestamp_ns > to) continue;
    out += point_to_line(p);
    out += '\n';
  }
  return out;
}

std::string Recorder::export_lines() const {
  return export_lines(INT64_MIN, INT64_MAX);
}

std::vector<std::pair<std::string, std::map<std::string, std::string>>> Recorder::series_list() const {
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> out;
  std::set<std::string> seen;
  for (const auto& p : points_) {
    std::string key = series_key(p.measurement, p.tags);
    if (seen.insert(key).second) out.emplace_back(p.measurement, p.tags);
  }
  return out;
}

Expected<SeriesPoint> parse_line(std::string_view line) {
  // <measurement>[,tag=val...] <field=val[,field=val...]> <timestamp>
  SeriesPoint p;
  size_t sp1 = line.find(' ');
  if (sp1 == std::string_view::npos) return Err::BadFormat;
  size_t sp2 = line.find(' ', sp1 + 1);
  if (sp2 == std::string_view::npos) return Err::BadFormat;

  std::string_view head = line.substr(0, sp1);
  std::string_view fields = line.substr(sp1 + 1, sp2 - sp1 - 1);
  std::string_view ts = line.substr(sp2 + 1);

  size_t comma = head.find(',');
  p.measurement = std::string(head.substr(0, comma == std::string_view::npos ? head.size() : comma));
  if (p.measurement.empty()) return Err::BadFormat;
  while (comma != std::string_view::npos) {
    head = head.substr(comma + 1);
    comma = head.find(',');
    std::string_view pair = head.substr(0, comma == std::string_view::npos ? head.size() : comma);
    size_t eq = pair.find('=');
    if (eq == std::string_view::npos || eq == 0) return Err::BadFormat;
    p.tags[std::string(pair.substr(0, eq))] = std::string(pair.substr(eq + 1));
  }

  while (!fields.empty()) {
    size_t fcomma = fields.find(',');
    std::string_view pair = fields.substr(0, fcomma == std::string_view::npos ? fields.size() : fcomma);
    size_t eq = pair.find('=');
    if (eq == std::string_view::npos || eq == 0) return Err::BadFormat;
    std::string_view num = pair.substr(eq + 1);
    double v{};
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
    if (ec != std::errc{} || ptr != num.data() + num.size()) return Err::BadFormat;
    p.fields[std::string(pair.substr(0, eq))] = v;
    fields = fcomma == std::string_view::npos ? std::string_view{} : fields.substr(fcomma + 1);
  }
  if (p.fields.empty()) return Err::BadFormat;

  int64_t t{};
  auto [tp, tec] = std::from_chars(ts.data(), ts.data() + ts.size(), t);
  if (tec != std::errc{} || tp != ts.data() + ts.size()) return Err::BadFormat;
  p.timestamp_ns = t;
  return p;
}

std::string series_to_csv(std::span<const SeriesPoint* const> pts) {
  std::set<std::string> field_names;
  for (const auto* p : pts) {
    for (const auto& [f, _] : p->fields) field_names.insert(f);
  }
  std::string out = "timestamp_ns";
  for (const auto& f : field_names) {
    out += ',';
    out += f;
  }
  out += '\n';
  for (const auto* p : pts) {
    out += std::to_string(p->timestamp_ns);
    for (const auto& f : field_names) {
      out += ',';
      auto it = p->fields.find(f);
      if (it != p->fields.end()) out += fmt_double(it->second);
    }
    out += '\n';
  }
  return out;
}

}  // namespace qkdnet
