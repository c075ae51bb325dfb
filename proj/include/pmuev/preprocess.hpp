#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pmuev/pmu_data.hpp"

namespace pmuev {

inline constexpr std::size_t kWindowSamples = 120;
inline constexpr std::chrono::milliseconds kFrameSpan{2000};

// A cleaned 2-second, 2-channel segment: the unit of classification.
struct EventWindow {
  std::int64_t event_id = 0;
  std::string pmu_id;
  EventType label = EventType::Unknown;
  Timestamp onset{};
  std::vector<double> samples_v;
  std::vector<double> samples_f;
  double quality = 0.0;  // fraction of samples that were interpolated

  std::size_t size() const { return samples_v.size(); }
};

// A frame as cut from the context, before cleaning. Carries masks and status
// words so the quality gate can decide what is usable.
struct CandidateWindow {
  std::int64_t event_id = 0;
  std::string pmu_id;
  EventType label = EventType::Unknown;
  Timestamp onset{};
  Timestamp frame_start{};
  int source_rate_hz = 60;
  std::vector<double> v;
  std::vector<double> f;
  std::vector<std::uint8_t> v_missing;
  std::vector<std::uint8_t> f_missing;
  std::vector<std::uint16_t> status;

  std::size_t size() const { return v.size(); }
};

// 0.6745 * (x - median) / MAD over the non-missing entries. Missing entries
// score 0, and every score is 0 when MAD is 0. Needs 3 valid samples.
std::vector<double> modified_zscore(std::span<const double> x, std::span<const std::uint8_t> missing = {});

enum class OnsetChannel : std::uint8_t { Voltage, Frequency, Both };

// Level scores the raw channel; Increment scores first differences
// x[k] - x[k-1] (attributed to sample k), which peaks at a normal-to-event
// transition instead of anywhere inside a sustained excursion.
enum class OnsetTransform : std::uint8_t { Level, Increment };

struct ChannelSelector {
  OnsetChannel channel = OnsetChannel::Both;
  OnsetTransform transform = OnsetTransform::Increment;
};

struct OnsetEstimate {
  std::int64_t index = 0;  // grid index inside the contexts
  Timestamp time{};
  std::size_t votes = 0;   // voters whose extremum set contains index
  std::size_t voters = 0;  // (pmu, channel) pairs that produced an extremum set
};

// Each (PMU, channel) voter scores its samples with the modified z-score and
// nominates every index attaining the largest |score| (if its MAD is 0, the
// largest |x - median|; an all-flat voter abstains). The index nominated by the
// most voters wins, earliest first on ties.
OnsetEstimate locate_onset_detailed(std::span<const PmuSeries> contexts, ChannelSelector selector = {});
Timestamp locate_onset(std::span<const PmuSeries> contexts, ChannelSelector selector = {});

struct ExtractOptions {
  // 30 Hz frames (60 samples) are resampled onto the 60 Hz grid so every
  // window has 120 samples.
  bool resample_to_canonical = true;
};

// Cuts the half-open 2 s frame [t0 + 2j s, t0 + 2(j+1) s) that contains onset.
CandidateWindow extract_window(const PmuSeries& context, Timestamp onset, ExtractOptions options = {});

struct QualityGateConfig {
  double max_bad_fraction = 0.05;
  double outlier_sigmas = 10.0;
  // Lower bounds on the robust scale: relative to |median| for voltage,
  // absolute Hz for frequency deviation.
  double voltage_scale_floor = 0.025;
  double frequency_scale_floor_hz = 0.05;
};

struct Rejection {
  double bad_fraction = 0.0;
  std::string reason;
};

struct GateResult {
  std::variant<EventWindow, Rejection> outcome;
  std::vector<std::uint8_t> flagged;  // per sample: 1 if judged bad on either channel

  bool accepted() const { return std::holds_alternative<EventWindow>(outcome); }
  const EventWindow& window() const { return std::get<EventWindow>(outcome); }
  const Rejection& rejection() const { return std::get<Rejection>(outcome); }
};

GateResult quality_gate(const CandidateWindow& candidate, const QualityGateConfig& config = {});

// Linear interpolation over flagged positions; leading/trailing runs hold the
// nearest good value. Returns false if no position is good.
bool interpolate_flagged(std::span<double> values, std::span<const std::uint8_t> bad);

// Data-quality issues per (pmu, UTC day). A sample is an issue when either
// channel is missing or its status word is nonzero.
struct QualityCell {
  std::string pmu_id;
  std::int64_t day = 0;  // days since 1970-01-01
  std::size_t samples = 0;
  std::size_t missing = 0;
  std::vector<std::size_t> gap_runs;

  double missing_fraction() const { return samples == 0 ? 0.0 : static_cast<double>(missing) / samples; }
};

struct QualityStats {
  std::vector<QualityCell> cells;
};

QualityStats compute_quality_stats(std::span<const PmuSeries> series);

struct SurvivalPoint {
  double k = 0.0;
  double survival = 0.0;
};

// S(k) = fraction of (pmu, day) cells whose missing fraction exceeds k.
std::vector<SurvivalPoint> survival_function(const QualityStats& stats, std::span<const double> ks);
// S(k) = fraction of gap runs (over all cells) longer than k samples.
std::vector<SurvivalPoint> gap_survival_function(const QualityStats& stats, std::span<const double> ks);

// Window CSV: event_id,pmu_id,label,onset_ms,v0..v119,f0..f119,quality.
void write_windows_csv(std::ostream& out, std::span<const EventWindow> windows);
std::vector<EventWindow> read_windows_csv(std::istream& in);

}  // namespace pmuev
