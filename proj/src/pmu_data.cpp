#include "pmuev/pmu_data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>

#include "pmuev/errors.hpp"
#include "text_util.hpp"

namespace pmuev {

using detail::split_csv;
using detail::trim;

std::string_view to_string(EventType type) {
  switch (type) {
    case EventType::LineOutage: return "LineOutage";
    case EventType::XfmrOutage: return "XfmrOutage";
    case EventType::FrequencyEvent: return "FrequencyEvent";
    case EventType::OscillationEvent: return "OscillationEvent";
    case EventType::Normal: return "Normal";
    case EventType::Unknown: return "Unknown";
  }
  return "Unknown";
}

EventType event_type_from_string(std::string_view text) {
  std::string key;
  for (char c : text) {
    if (c == ' ' || c == '_' || c == '-' || c == '\t') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  static const std::map<std::string, EventType, std::less<>> kNames = {
      {"lineoutage", EventType::LineOutage},
      {"line", EventType::LineOutage},
      {"xfmroutage", EventType::XfmrOutage},
      {"xfrmoutage", EventType::XfmrOutage},
      {"transformeroutage", EventType::XfmrOutage},
      {"xfmr", EventType::XfmrOutage},
      {"frequencyevent", EventType::FrequencyEvent},
      {"frequency", EventType::FrequencyEvent},
      {"oscillationevent", EventType::OscillationEvent},
      {"oscillation", EventType::OscillationEvent},
      {"normal", EventType::Normal},
  };
  auto it = kNames.find(key);
  return it == kNames.end() ? EventType::Unknown : it->second;
}

PmuSeries PmuSeries::blank(std::string pmu_id, int sample_rate_hz, Timestamp t0, std::size_t n) {
  PmuSeries s;
  s.pmu_id = std::move(pmu_id);
  s.sample_rate_hz = sample_rate_hz;
  s.t0 = t0;
  s.voltage.assign(n, std::nan(""));
  s.freq_dev.assign(n, std::nan(""));
  s.status.assign(n, 0);
  s.voltage_missing.assign(n, 1);
  s.freq_missing.assign(n, 1);
  return s;
}

Timestamp PmuSeries::time_at(std::int64_t k) const {
  auto ms = std::llround(static_cast<double>(k) * 1000.0 / sample_rate_hz);
  return t0 + std::chrono::milliseconds(ms);
}

std::int64_t PmuSeries::index_at(Timestamp t) const {
  auto dt = (t - t0).count();
  return std::llround(static_cast<double>(dt) * sample_rate_hz / 1000.0);
}

void PmuSeries::validate() const {
  if (sample_rate_hz != 30 && sample_rate_hz != 60) {
    throw FormatError("pmu " + pmu_id + ": sample rate must be 30 or 60 Hz");
  }
  std::size_t n = voltage.size();
  if (freq_dev.size() != n || status.size() != n || voltage_missing.size() != n ||
      freq_missing.size() != n) {
    throw FormatError("pmu " + pmu_id + ": channel lengths differ");
  }
}

namespace {

struct RawRow {
  std::int64_t t_ms;
  double voltage;
  double freq;
  std::uint16_t status;
  std::size_t line;
};

int infer_rate(const std::string& pmu_id, const std::vector<RawRow>& rows) {
  if (rows.size() < 2) {
    throw UnsupportedRateError("pmu " + pmu_id + ": cannot infer sample rate from a single row");
  }
  std::map<std::int64_t, std::size_t> hist;
  for (std::size_t i = 1; i < rows.size(); ++i) ++hist[rows[i].t_ms - rows[i - 1].t_ms];
  auto modal = std::max_element(hist.begin(), hist.end(), [](const auto& a, const auto& b) {
    return a.second < b.second;
  });
  std::int64_t gap = modal->first;
  if (gap == 33 || gap == 34) return 30;
  if (gap == 16 || gap == 17) return 60;
  throw UnsupportedRateError("pmu " + pmu_id + ": modal sample gap of " + std::to_string(gap) +
                             " ms is neither 30 nor 60 frames/s");
}

PmuSeries materialise(const std::string& pmu_id, const std::vector<RawRow>& rows) {
  int rate = infer_rate(pmu_id, rows);
  Timestamp t0{std::chrono::milliseconds(rows.front().t_ms)};
  double step_ms = 1000.0 / rate;
  std::int64_t last = std::llround(static_cast<double>(rows.back().t_ms - rows.front().t_ms) / step_ms);
  PmuSeries s = PmuSeries::blank(pmu_id, rate, t0, static_cast<std::size_t>(last + 1));
  std::int64_t prev = -1;
  for (const RawRow& r : rows) {
    double rel = static_cast<double>(r.t_ms - rows.front().t_ms);
    std::int64_t k = std::llround(rel / step_ms);
    if (std::abs(rel - k * step_ms) > step_ms / 4.0) {
      throw FormatError("line " + std::to_string(r.line) + ": timestamp is off the " +
                        std::to_string(rate) + " Hz grid");
    }
    if (k <= prev) {
      throw FormatError("line " + std::to_string(r.line) + ": two samples map to one grid slot");
    }
    prev = k;
    auto i = static_cast<std::size_t>(k);
    s.voltage[i] = r.voltage;
    s.freq_dev[i] = r.freq;
    s.status[i] = r.status;
    s.voltage_missing[i] = std::isnan(r.voltage) ? 1 : 0;
    s.freq_missing[i] = std::isnan(r.freq) ? 1 : 0;
  }
  return s;
}

}  // namespace

std::vector<PmuSeries> parse_signal_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::getline_stripped(in, line)) throw ParseError(1, "missing header");
  ++line_no;
  auto header = split_csv(line);
  const std::vector<std::string> expected = {"pmu_id", "timestamp_ms", "voltage", "freq_dev", "status"};
  if (header != expected) {
    throw ParseError(line_no, "expected header pmu_id,timestamp_ms,voltage,freq_dev,status");
  }

  std::vector<PmuSeries> out;
  std::vector<std::string> seen;
  std::string current_id;
  std::vector<RawRow> rows;

  auto flush = [&] {
    if (!rows.empty()) out.push_back(materialise(current_id, rows));
    rows.clear();
  };

  while (detail::getline_stripped(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 5) throw ParseError(line_no, "expected 5 fields, got " + std::to_string(f.size()));
    if (f[0].empty()) throw ParseError(line_no, "empty pmu_id");
    auto t = detail::parse_int<std::int64_t>(f[1]);
    auto v = detail::parse_double(f[2]);
    auto fd = detail::parse_double(f[3]);
    auto st = detail::parse_int<std::uint16_t>(f[4]);
    if (!t) throw ParseError(line_no, "bad timestamp_ms '" + f[1] + "'");
    if (!v) throw ParseError(line_no, "bad voltage '" + f[2] + "'");
    if (!fd) throw ParseError(line_no, "bad freq_dev '" + f[3] + "'");
    if (!st) throw ParseError(line_no, "bad status '" + f[4] + "'");

    if (f[0] != current_id) {
      flush();
      if (std::find(seen.begin(), seen.end(), f[0]) != seen.end()) {
        throw FormatError("line " + std::to_string(line_no) + ": rows for pmu " + f[0] +
                          " are not contiguous");
      }
      current_id = f[0];
      seen.push_back(current_id);
    } else if (!rows.empty() && *t <= rows.back().t_ms) {
      throw FormatError("line " + std::to_string(line_no) + ": timestamps for pmu " + f[0] +
                        " are not increasing");
    }
    rows.push_back(RawRow{*t, *v, *fd, *st, line_no});
  }
  flush();
  return out;
}

void write_signal_csv(std::ostream& out, std::span<const PmuSeries> series) {
  out << "pmu_id,timestamp_ms,voltage,freq_dev,status\n";
  for (const PmuSeries& s : series) {
    std::string id = detail::quote_csv(s.pmu_id);
    for (std::size_t k = 0; k < s.size(); ++k) {
      double v = s.voltage_missing[k] ? std::nan("") : s.voltage[k];
      double f = s.freq_missing[k] ? std::nan("") : s.freq_dev[k];
      out << id << ',' << s.time_at(static_cast<std::int64_t>(k)).time_since_epoch().count() << ','
          << detail::format_double(v) << ',' << detail::format_double(f) << ',' << s.status[k] << '\n';
    }
  }
}

std::optional<Timestamp> parse_iso8601(std::string_view text) {
  text = trim(text);
  if (!text.empty() && (text.back() == 'Z' || text.back() == 'z')) text.remove_suffix(1);
  auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    if (pos + len > text.size()) return std::nullopt;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (!std::isdigit(static_cast<unsigned char>(text[i]))) return std::nullopt;
    }
    return detail::parse_int<int>(text.substr(pos, len));
  };
  // YYYY-MM-DDTHH:MM is the minimum.
  if (text.size() < 16 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':') {
    return std::nullopt;
  }
  auto y = num(0, 4), mo = num(5, 2), d = num(8, 2), h = num(11, 2), mi = num(14, 2);
  if (!y || !mo || !d || !h || !mi) return std::nullopt;
  int sec = 0;
  int ms = 0;
  std::size_t pos = 16;
  if (pos < text.size()) {
    if (text[pos] != ':') return std::nullopt;
    auto s = num(pos + 1, 2);
    if (!s) return std::nullopt;
    sec = *s;
    pos += 3;
    if (pos < text.size()) {
      if (text[pos] != '.') return std::nullopt;
      std::size_t digits = text.size() - pos - 1;
      if (digits == 0 || digits > 9) return std::nullopt;
      auto frac = num(pos + 1, digits);
      if (!frac) return std::nullopt;
      double scaled = *frac * std::pow(10.0, 3.0 - static_cast<double>(digits));
      ms = static_cast<int>(std::floor(scaled));
    }
  }
  using namespace std::chrono;
  year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)}, day{static_cast<unsigned>(*d)}};
  if (!ymd.ok() || *h > 23 || *mi > 59 || sec > 60) return std::nullopt;
  return Timestamp{sys_days{ymd}.time_since_epoch() + hours{*h} + minutes{*mi} + seconds{sec} +
                   milliseconds{ms}};
}

std::string format_iso8601(Timestamp t) {
  using namespace std::chrono;
  auto day_point = floor<days>(t);
  year_month_day ymd{day_point};
  auto rem = t - day_point;
  auto h = duration_cast<hours>(rem);
  rem -= h;
  auto mi = duration_cast<minutes>(rem);
  rem -= mi;
  auto s = duration_cast<seconds>(rem);
  rem -= s;
  char buf[40];
  int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                        static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                        static_cast<int>(h.count()), static_cast<int>(mi.count()),
                        static_cast<int>(s.count()));
  std::string out(buf, static_cast<std::size_t>(n));
  if (rem.count() != 0) {
    std::snprintf(buf, sizeof buf, ".%03d", static_cast<int>(rem.count()));
    out += buf;
  }
  out += 'Z';
  return out;
}

Timestamp floor_to_minute(Timestamp t) { return std::chrono::floor<std::chrono::minutes>(t); }

std::vector<EventLogEntry> parse_event_log(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::getline_stripped(in, line)) throw ParseError(1, "missing header");
  ++line_no;
  const std::vector<std::string> expected = {"interconnection", "start_iso", "end_iso", "event_type", "cause"};
  if (split_csv(line) != expected) {
    throw ParseError(line_no, "expected header interconnection,start_iso,end_iso,event_type,cause");
  }
  std::vector<EventLogEntry> out;
  while (detail::getline_stripped(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 5) throw ParseError(line_no, "expected 5 fields, got " + std::to_string(f.size()));
    auto start = parse_iso8601(f[1]);
    if (!start) throw ParseError(line_no, "bad start timestamp '" + f[1] + "'");
    auto end = parse_iso8601(f[2]);
    if (!end) throw ParseError(line_no, "bad end timestamp '" + f[2] + "'");
    if (*end < *start) throw ParseError(line_no, "end precedes start");
    out.push_back(EventLogEntry{f[0], *start, *end, event_type_from_string(f[3]), f[4]});
  }
  return out;
}

void write_event_log(std::ostream& out, std::span<const EventLogEntry> entries) {
  out << "interconnection,start_iso,end_iso,event_type,cause\n";
  for (const auto& e : entries) {
    out << detail::quote_csv(e.interconnection) << ',' << format_iso8601(e.start) << ','
        << format_iso8601(e.end) << ',' << to_string(e.event_type) << ',' << detail::quote_csv(e.cause)
        << '\n';
  }
}

PmuSeries slice_context(const PmuSeries& series, Timestamp start) {
  const Timestamp t0 = start - kPreEventSpan;
  const auto n = static_cast<std::int64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(kPreEventSpan + kPostEventSpan).count() *
      series.sample_rate_hz);
  const std::int64_t offset = series.index_at(t0);
  const auto src_n = static_cast<std::int64_t>(series.size());
  if (offset + n <= 0 || offset >= src_n) {
    throw OutOfRangeError("pmu " + series.pmu_id + ": context window [" + format_iso8601(t0) + ", +180 s)" +
                          " does not overlap the series");
  }
  PmuSeries out = PmuSeries::blank(series.pmu_id, series.sample_rate_hz, t0, static_cast<std::size_t>(n));
  const std::int64_t lo = std::max<std::int64_t>(0, -offset);
  const std::int64_t hi = std::min<std::int64_t>(n, src_n - offset);
  for (std::int64_t k = lo; k < hi; ++k) {
    auto d = static_cast<std::size_t>(k);
    auto s = static_cast<std::size_t>(k + offset);
    out.voltage[d] = series.voltage[s];
    out.freq_dev[d] = series.freq_dev[s];
    out.status[d] = series.status[s];
    out.voltage_missing[d] = series.voltage_missing[s];
    out.freq_missing[d] = series.freq_missing[s];
  }
  return out;
}

}  // namespace pmuev
