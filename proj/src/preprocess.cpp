#include "pmuev/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include "pmuev/errors.hpp"
#include "text_util.hpp"

namespace pmuev {

namespace {

double median_inplace(std::vector<double>& v) {
  const std::size_t n = v.size();
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  double hi = *mid;
  if (n % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

struct RobustCenter {
  double median = 0.0;
  double mad = 0.0;
};

RobustCenter robust_center(std::vector<double> values) {
  RobustCenter rc;
  rc.median = median_inplace(values);
  for (double& x : values) x = std::abs(x - rc.median);
  rc.mad = median_inplace(values);
  return rc;
}

bool is_missing(std::span<const std::uint8_t> mask, std::size_t i) {
  return !mask.empty() && mask[i] != 0;
}

}  // namespace

std::vector<double> modified_zscore(std::span<const double> x, std::span<const std::uint8_t> missing) {
  if (!missing.empty() && missing.size() != x.size()) {
    throw InvalidParameterError("modified_zscore: mask length differs from data length");
  }
  std::vector<double> valid;
  valid.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!is_missing(missing, i) && std::isfinite(x[i])) valid.push_back(x[i]);
  }
  if (valid.size() < 3) {
    throw InsufficientDataError("modified_zscore: need at least 3 valid samples, got " +
                                std::to_string(valid.size()));
  }
  RobustCenter rc = robust_center(std::move(valid));
  std::vector<double> score(x.size(), 0.0);
  if (rc.mad == 0.0) return score;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!is_missing(missing, i) && std::isfinite(x[i])) score[i] = 0.6745 * (x[i] - rc.median) / rc.mad;
  }
  return score;
}

namespace {

// Indices of the largest extremity for one channel of one PMU. Empty when the
// voter abstains.
std::vector<std::size_t> extremum_set(const PmuSeries& s, Channel c, OnsetTransform transform) {
  auto x = s.values(c);
  auto mask = s.missing(c);
  const std::size_t n = x.size();
  std::vector<double> series(n, 0.0);
  std::vector<std::uint8_t> miss(n, 0);
  if (transform == OnsetTransform::Level) {
    for (std::size_t k = 0; k < n; ++k) {
      series[k] = x[k];
      miss[k] = (mask[k] || !std::isfinite(x[k])) ? 1 : 0;
    }
  } else {
    if (n > 0) miss[0] = 1;
    for (std::size_t k = 1; k < n; ++k) {
      bool bad = mask[k] || mask[k - 1] || !std::isfinite(x[k]) || !std::isfinite(x[k - 1]);
      miss[k] = bad ? 1 : 0;
      series[k] = bad ? 0.0 : x[k] - x[k - 1];
    }
  }

  std::vector<double> extremity;
  try {
    extremity = modified_zscore(series, miss);
  } catch (const InsufficientDataError&) {
    return {};
  }
  for (double& e : extremity) e = std::abs(e);
  double top = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!miss[k]) top = std::max(top, extremity[k]);
  }
  if (top == 0.0) {
    // Zero MAD: rank by raw distance from the median instead.
    std::vector<double> valid;
    for (std::size_t k = 0; k < n; ++k) {
      if (!miss[k]) valid.push_back(series[k]);
    }
    double med = median_inplace(valid);
    for (std::size_t k = 0; k < n; ++k) {
      extremity[k] = miss[k] ? 0.0 : std::abs(series[k] - med);
      top = std::max(top, extremity[k]);
    }
    if (top == 0.0) return {};
  }
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < n; ++k) {
    if (!miss[k] && extremity[k] == top) out.push_back(k);
  }
  return out;
}

}  // namespace

OnsetEstimate locate_onset_detailed(std::span<const PmuSeries> contexts, ChannelSelector selector) {
  if (contexts.empty()) throw InvalidParameterError("locate_onset: no context segments");
  const PmuSeries& ref = contexts.front();
  for (const PmuSeries& s : contexts) {
    s.validate();
    if (s.size() != ref.size() || s.t0 != ref.t0 || s.sample_rate_hz != ref.sample_rate_hz) {
      throw InvalidParameterError("locate_onset: contexts must share span and grid (pmu " + s.pmu_id + ")");
    }
  }
  std::vector<Channel> channels;
  if (selector.channel != OnsetChannel::Frequency) channels.push_back(Channel::Voltage);
  if (selector.channel != OnsetChannel::Voltage) channels.push_back(Channel::Frequency);

  std::vector<std::size_t> votes(ref.size(), 0);
  std::size_t voters = 0;
  for (const PmuSeries& s : contexts) {
    for (Channel c : channels) {
      auto set = extremum_set(s, c, selector.transform);
      if (set.empty()) continue;
      ++voters;
      for (std::size_t k : set) ++votes[k];
    }
  }
  if (voters == 0) throw NoOnsetError("locate_onset: no PMU produced a usable score");
  auto best = std::max_element(votes.begin(), votes.end());  // first maximum = earliest
  OnsetEstimate est;
  est.index = best - votes.begin();
  est.time = ref.time_at(est.index);
  est.votes = *best;
  est.voters = voters;
  return est;
}

Timestamp locate_onset(std::span<const PmuSeries> contexts, ChannelSelector selector) {
  return locate_onset_detailed(contexts, selector).time;
}

CandidateWindow extract_window(const PmuSeries& context, Timestamp onset, ExtractOptions options) {
  context.validate();
  const auto span_ms = std::llround(static_cast<double>(context.size()) * 1000.0 / context.sample_rate_hz);
  const auto offset_ms = (onset - context.t0).count();
  if (offset_ms < 0 || offset_ms >= span_ms) {
    throw OutOfRangeError("extract_window: onset " + format_iso8601(onset) + " outside the context of pmu " +
                          context.pmu_id);
  }
  const std::int64_t frame = offset_ms / kFrameSpan.count();
  const auto raw_len = static_cast<std::size_t>(2 * context.sample_rate_hz);
  const auto first = static_cast<std::size_t>(frame) * raw_len;

  CandidateWindow w;
  w.pmu_id = context.pmu_id;
  w.onset = onset;
  w.frame_start = context.t0 + kFrameSpan * frame;
  w.source_rate_hz = context.sample_rate_hz;

  auto fetch = [&](std::size_t i, double& v, double& f, std::uint8_t& vm, std::uint8_t& fm, std::uint16_t& st) {
    if (i < context.size()) {
      v = context.voltage[i];
      f = context.freq_dev[i];
      vm = context.voltage_missing[i];
      fm = context.freq_missing[i];
      st = context.status[i];
    } else {
      v = f = std::nan("");
      vm = fm = 1;
      st = 0;
    }
  };

  if (context.sample_rate_hz == 60 || !options.resample_to_canonical) {
    w.v.resize(raw_len);
    w.f.resize(raw_len);
    w.v_missing.resize(raw_len);
    w.f_missing.resize(raw_len);
    w.status.resize(raw_len);
    for (std::size_t i = 0; i < raw_len; ++i) {
      fetch(first + i, w.v[i], w.f[i], w.v_missing[i], w.f_missing[i], w.status[i]);
    }
    return w;
  }

  // 30 Hz: output sample j sits at j/60 s. Even j coincide with raw samples,
  // odd j are midpoints; the last midpoint borrows the next frame's first
  // sample when the context has one, otherwise holds.
  const std::size_t out_len = 2 * raw_len;
  w.v.resize(out_len);
  w.f.resize(out_len);
  w.v_missing.resize(out_len);
  w.f_missing.resize(out_len);
  w.status.resize(out_len);
  for (std::size_t i = 0; i < raw_len; ++i) {
    double v0, f0, v1, f1;
    std::uint8_t vm0, fm0, vm1, fm1;
    std::uint16_t s0, s1;
    fetch(first + i, v0, f0, vm0, fm0, s0);
    bool has_next = first + i + 1 < context.size();
    if (has_next) {
      fetch(first + i + 1, v1, f1, vm1, fm1, s1);
    } else {
      v1 = v0, f1 = f0, vm1 = vm0, fm1 = fm0, s1 = s0;
    }
    w.v[2 * i] = v0;
    w.f[2 * i] = f0;
    w.v_missing[2 * i] = vm0;
    w.f_missing[2 * i] = fm0;
    w.status[2 * i] = s0;
    w.v[2 * i + 1] = 0.5 * (v0 + v1);
    w.f[2 * i + 1] = 0.5 * (f0 + f1);
    w.v_missing[2 * i + 1] = (vm0 || vm1) ? 1 : 0;
    w.f_missing[2 * i + 1] = (fm0 || fm1) ? 1 : 0;
    w.status[2 * i + 1] = static_cast<std::uint16_t>(s0 | s1);
  }
  return w;
}

bool interpolate_flagged(std::span<double> values, std::span<const std::uint8_t> bad) {
  const std::size_t n = values.size();
  std::ptrdiff_t prev_good = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (bad[i]) continue;
    if (prev_good < 0) {
      for (std::size_t j = 0; j < i; ++j) values[j] = values[i];
    } else if (static_cast<std::size_t>(prev_good) + 1 < i) {
      double a = values[static_cast<std::size_t>(prev_good)];
      double b = values[i];
      double span = static_cast<double>(i - static_cast<std::size_t>(prev_good));
      for (std::size_t j = static_cast<std::size_t>(prev_good) + 1; j < i; ++j) {
        double t = static_cast<double>(j - static_cast<std::size_t>(prev_good)) / span;
        values[j] = a + (b - a) * t;
      }
    }
    prev_good = static_cast<std::ptrdiff_t>(i);
  }
  if (prev_good < 0) return false;
  for (std::size_t j = static_cast<std::size_t>(prev_good) + 1; j < n; ++j) {
    values[j] = values[static_cast<std::size_t>(prev_good)];
  }
  return true;
}

GateResult quality_gate(const CandidateWindow& c, const QualityGateConfig& config) {
  const std::size_t n = c.size();
  GateResult result;
  result.flagged.assign(n, 0);
  if (n == 0) {
    result.outcome = Rejection{1.0, "empty window"};
    return result;
  }

  auto screen = [&](const std::vector<double>& x, const std::vector<std::uint8_t>& miss, bool is_voltage) {
    std::vector<std::uint8_t> bad(n, 0);
    std::vector<double> good;
    for (std::size_t i = 0; i < n; ++i) {
      bad[i] = (miss[i] || !std::isfinite(x[i]) || !decode_status(c.status[i]).usable) ? 1 : 0;
      if (!bad[i]) good.push_back(x[i]);
    }
    if (good.empty()) return bad;
    RobustCenter rc = robust_center(good);
    double floor = is_voltage ? config.voltage_scale_floor * std::abs(rc.median) : config.frequency_scale_floor_hz;
    double scale = std::max(1.4826 * rc.mad, floor);
    for (std::size_t i = 0; i < n; ++i) {
      if (!bad[i] && std::abs(x[i] - rc.median) > config.outlier_sigmas * scale) bad[i] = 1;
    }
    return bad;
  };

  auto bad_v = screen(c.v, c.v_missing, true);
  auto bad_f = screen(c.f, c.f_missing, false);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < n; ++i) {
    result.flagged[i] = (bad_v[i] || bad_f[i]) ? 1 : 0;
    bad += result.flagged[i];
  }
  const double fraction = static_cast<double>(bad) / static_cast<double>(n);
  if (static_cast<double>(bad) > config.max_bad_fraction * static_cast<double>(n) + 1e-9) {
    result.outcome = Rejection{fraction, std::to_string(bad) + " of " + std::to_string(n) +
                                             " samples missing or bad (limit " +
                                             detail::format_double(config.max_bad_fraction) + ")"};
    return result;
  }

  EventWindow w;
  w.event_id = c.event_id;
  w.pmu_id = c.pmu_id;
  w.label = c.label;
  w.onset = c.onset;
  w.samples_v = c.v;
  w.samples_f = c.f;
  w.quality = fraction;
  if (!interpolate_flagged(w.samples_v, bad_v) || !interpolate_flagged(w.samples_f, bad_f)) {
    result.outcome = Rejection{1.0, "no usable samples"};
    return result;
  }
  result.outcome = std::move(w);
  return result;
}

QualityStats compute_quality_stats(std::span<const PmuSeries> series) {
  constexpr std::int64_t kDayMs = 86'400'000;
  QualityStats stats;
  for (const PmuSeries& s : series) {
    s.validate();
    std::map<std::int64_t, QualityCell> cells;
    std::int64_t run_day = 0;
    std::size_t run = 0;
    auto close_run = [&] {
      if (run > 0) cells[run_day].gap_runs.push_back(run);
      run = 0;
    };
    for (std::size_t k = 0; k < s.size(); ++k) {
      auto ms = s.time_at(static_cast<std::int64_t>(k)).time_since_epoch().count();
      std::int64_t day = ms >= 0 ? ms / kDayMs : -((-ms + kDayMs - 1) / kDayMs);
      QualityCell& cell = cells[day];
      if (cell.samples == 0) {
        cell.pmu_id = s.pmu_id;
        cell.day = day;
      }
      ++cell.samples;
      bool issue = s.voltage_missing[k] || s.freq_missing[k] || s.status[k] != 0;
      if (run > 0 && day != run_day) close_run();
      if (issue) {
        ++cell.missing;
        if (run == 0) run_day = day;
        ++run;
      } else {
        close_run();
      }
    }
    close_run();
    for (auto& [day, cell] : cells) stats.cells.push_back(std::move(cell));
  }
  return stats;
}

namespace {

void check_grid(std::span<const double> ks) {
  if (!std::is_sorted(ks.begin(), ks.end())) throw InvalidParameterError("survival grid must be ascending");
}

}  // namespace

std::vector<SurvivalPoint> survival_function(const QualityStats& stats, std::span<const double> ks) {
  if (stats.cells.empty()) throw InvalidParameterError("survival_function: no quality cells");
  check_grid(ks);
  std::vector<double> fractions;
  fractions.reserve(stats.cells.size());
  for (const auto& c : stats.cells) fractions.push_back(c.missing_fraction());
  std::sort(fractions.begin(), fractions.end());
  std::vector<SurvivalPoint> out;
  for (double k : ks) {
    auto above = fractions.end() - std::upper_bound(fractions.begin(), fractions.end(), k);
    out.push_back({k, static_cast<double>(above) / static_cast<double>(fractions.size())});
  }
  return out;
}

std::vector<SurvivalPoint> gap_survival_function(const QualityStats& stats, std::span<const double> ks) {
  if (stats.cells.empty()) throw InvalidParameterError("gap_survival_function: no quality cells");
  check_grid(ks);
  std::vector<double> runs;
  for (const auto& c : stats.cells) {
    for (auto r : c.gap_runs) runs.push_back(static_cast<double>(r));
  }
  std::sort(runs.begin(), runs.end());
  std::vector<SurvivalPoint> out;
  for (double k : ks) {
    double s = 0.0;
    if (!runs.empty()) {
      auto above = runs.end() - std::upper_bound(runs.begin(), runs.end(), k);
      s = static_cast<double>(above) / static_cast<double>(runs.size());
    }
    out.push_back({k, s});
  }
  return out;
}

void write_windows_csv(std::ostream& out, std::span<const EventWindow> windows) {
  out << "event_id,pmu_id,label,onset_ms";
  for (std::size_t i = 0; i < kWindowSamples; ++i) out << ",v" << i;
  for (std::size_t i = 0; i < kWindowSamples; ++i) out << ",f" << i;
  out << ",quality\n";
  for (const EventWindow& w : windows) {
    if (w.samples_v.size() != kWindowSamples || w.samples_f.size() != kWindowSamples) {
      throw ShapeError("write_windows_csv: window " + std::to_string(w.event_id) + "/" + w.pmu_id +
                       " does not have 120 samples per channel");
    }
    out << w.event_id << ',' << detail::quote_csv(w.pmu_id) << ',' << to_string(w.label) << ','
        << w.onset.time_since_epoch().count();
    for (double v : w.samples_v) out << ',' << detail::format_double(v);
    for (double f : w.samples_f) out << ',' << detail::format_double(f);
    out << ',' << detail::format_double(w.quality) << '\n';
  }
}

std::vector<EventWindow> read_windows_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::getline_stripped(in, line)) throw ParseError(1, "missing header");
  ++line_no;
  const std::size_t expected_fields = 4 + 2 * kWindowSamples + 1;
  auto header = detail::split_csv(line);
  if (header.size() != expected_fields || header[0] != "event_id" || header[3] != "onset_ms") {
    throw ParseError(line_no, "not a window CSV header");
  }
  std::vector<EventWindow> out;
  while (detail::getline_stripped(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto f = detail::split_csv(line);
    if (f.size() != expected_fields) {
      throw ParseError(line_no, "expected " + std::to_string(expected_fields) + " fields");
    }
    EventWindow w;
    auto id = detail::parse_int<std::int64_t>(f[0]);
    auto onset = detail::parse_int<std::int64_t>(f[3]);
    if (!id || !onset) throw ParseError(line_no, "bad event_id or onset_ms");
    w.event_id = *id;
    w.pmu_id = f[1];
    w.label = event_type_from_string(f[2]);
    w.onset = Timestamp{std::chrono::milliseconds(*onset)};
    w.samples_v.resize(kWindowSamples);
    w.samples_f.resize(kWindowSamples);
    for (std::size_t i = 0; i < kWindowSamples; ++i) {
      auto v = detail::parse_double(f[4 + i]);
      auto fr = detail::parse_double(f[4 + kWindowSamples + i]);
      if (!v || !fr || !std::isfinite(*v) || !std::isfinite(*fr)) {
        throw ParseError(line_no, "non-finite or malformed sample value");
      }
      w.samples_v[i] = *v;
      w.samples_f[i] = *fr;
    }
    auto q = detail::parse_double(f.back());
    if (!q) throw ParseError(line_no, "bad quality");
    w.quality = *q;
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace pmuev
