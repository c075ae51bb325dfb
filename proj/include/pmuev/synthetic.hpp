#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pmuev/mtf.hpp"
#include "pmuev/pmu_data.hpp"
#include "pmuev/preprocess.hpp"

namespace pmuev {

// One synthetic event on a fleet of synchronized PMUs. Unset magnitudes are
// drawn from the default ranges using `seed`.
struct ScenarioSpec {
  EventType event_type = EventType::LineOutage;
  std::size_t pmu_count = 43;
  int sample_rate_hz = 60;
  double noise_sigma = 0.001;  // pu for voltage, Hz for frequency

  std::optional<double> step_depth;             // pu, outages: [0.02, 0.10]
  std::optional<double> recovery_fraction;      // transformer outage: [0.5, 0.8]
  std::optional<double> dip_depth_hz;           // frequency event: [0.04, 0.12]
  std::optional<double> oscillation_hz;         // [0.2, 2]
  std::optional<double> damping_ratio;          // [0.05, 0.2]
  std::optional<double> oscillation_amplitude;  // pu voltage: [0.01, 0.03]
  // false pins every PMU's scaling factor to 1.
  bool vary_pmu_response = true;

  // Minute the event falls in; must be minute-aligned.
  Timestamp base_minute = Timestamp{std::chrono::milliseconds{1609459200000}};  // 2021-01-01T00:00Z
  // Onset in samples after base_minute, in [0, 120 s * rate); default uniform in the first minute.
  std::optional<std::int64_t> onset_index;

  std::uint64_t seed = 0;
  std::int64_t event_id = 0;
  std::string interconnection = "B";

  void validate() const;  // InvalidParameterError
};

struct SyntheticEvent {
  std::int64_t event_id = 0;
  EventType event_type = EventType::Unknown;
  std::vector<PmuSeries> series;  // span [base_minute - 70 s, base_minute + 190 s)
  EventLogEntry log;              // start truncated to the minute
  Timestamp onset{};              // exact ground truth
  std::int64_t onset_index = 0;   // index of onset inside each series
};

// Series start relative to base_minute and their total span.
inline constexpr std::chrono::seconds kSeriesLead{70};
inline constexpr std::chrono::seconds kSeriesSpan{260};

SyntheticEvent generate_event(const ScenarioSpec& spec);

struct DefectSpec {
  double missing_fraction = 0.0;  // of each series, in [0, 1)
  std::size_t min_run = 1;        // run lengths ~ uniform [min_run, max_run]
  std::size_t max_run = 1;
  double spike_probability = 0.0;  // per sample, voltage only
  double spike_factor = 10.0;      // spike value = nominal * factor
  double status_probability = 0.0; // per sample; nonzero flag in [1, 0x3F]

  void validate() const;  // InvalidParameterError
};

// Missing runs are separated by at least one present sample. The series is
// returned modified; the input is left untouched.
PmuSeries inject_defects(const PmuSeries& series, const DefectSpec& spec, std::mt19937_64& rng);

struct DatasetOptions {
  std::size_t events_per_class = 50;
  std::vector<EventType> classes{EventType::LineOutage, EventType::XfmrOutage, EventType::FrequencyEvent,
                                 EventType::OscillationEvent, EventType::Normal};
  ScenarioSpec scenario;  // fleet size, rate and noise; per-event fields are overwritten
  std::optional<DefectSpec> defects;
  std::uint64_t seed = 7;
  std::size_t mtf_bins = kDefaultQuantileBins;
  bool encode = true;
  QualityGateConfig gate;
};

struct EventRecord {
  std::int64_t event_id = 0;
  EventType event_type = EventType::Unknown;
  EventLogEntry log;
  Timestamp true_onset{};
  Timestamp located_onset{};  // frame anchor for normal events
};

struct SyntheticDataset {
  std::vector<EventWindow> windows;
  std::vector<MtfGraph> graphs;  // parallel to windows when encoded
  std::vector<EventRecord> events;
  std::size_t candidates = 0;
  std::size_t rejected = 0;
};

// Event `id` of the dataset described by `options`, full series with defects
// applied. build_dataset slices exactly these series.
SyntheticEvent dataset_event(const DatasetOptions& options, std::int64_t id);

// generate -> slice -> locate onset -> extract -> quality gate -> encode.
// Events are numbered 0.. with the classes interleaved. Normal events take one
// uniformly random frame of their context instead of an onset frame.
SyntheticDataset build_dataset(const DatasetOptions& options);

// Per-event seed derived from the dataset seed.
std::uint64_t event_seed(std::uint64_t seed, std::int64_t event_id);

std::vector<MtfGraph> encode_windows(std::span<const EventWindow> windows, std::size_t q = kDefaultQuantileBins);

}  // namespace pmuev
