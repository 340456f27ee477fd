#pragma once

#include <map>
#include <optional>

#include "qkdnet/common.hpp"

namespace qkdnet {

// One sample. Tags identify the series; fields are the measured values.
struct SeriesPoint {
  std::string measurement;
  std::map<std::string, std::string> tags;    // sorted for stable output
  std::map<std::string, double> fields;       // sorted for stable output
  TimeNs timestamp_ns = 0;
};

struct Summary {
  double mean = 0;
  double std = 0;  // sample std (n-1); 0 for n == 1
  size_t n = 0;
};

// mean and sample standard deviation, the reduction used for per-link
// rate/error reporting.
Expected<Summary> summarize(std::span<const double> values);

// Append-only in-memory store with per-series monotonic timestamps.
class Recorder {
 public:
  // Rejects points whose timestamp precedes the series' last one.
  Err record(SeriesPoint point);

  const std::vector<SeriesPoint>& points() const { return points_; }
  size_t rejected_out_of_order() const { return rejected_; }

  // All points of one series (measurement + exact tag set), in order.
  std::vector<const SeriesPoint*> series(const std::string& measurement,
                                         const std::map<std::string, std::string>& tags) const;
  // Values of one field across a series (points missing the field are skipped).
  std::vector<double> field_values(const std::string& measurement,
                                   const std::map<std::string, std::string>& tags,
                                   const std::string& field) const;

  // Line-protocol text for points with timestamp in [from, to]; one line per
  // point, fields in lexicographic order.
  std::string export_lines(TimeNs from, TimeNs to) const;
  std::string export_lines() const;

  // Distinct series in first-seen order, as (measurement, tags) pairs.
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> series_list() const;

 private:
  std::vector<SeriesPoint> points_;
  std::map<std::string, TimeNs> last_ts_;  // keyed by series key
  size_t rejected_ = 0;
};

std::string series_key(const std::string& measurement, const std::map<std::string, std::string>& tags);
std::string point_to_line(const SeriesPoint& p);
Expected<SeriesPoint> parse_line(std::string_view line);

// CSV for one series: header "timestamp_ns,<fields...>" then one row per
// point; fields are the union across the series, lexicographic.
std::string series_to_csv(std::span<const SeriesPoint* const> pts);

}  // namespace qkdnet
