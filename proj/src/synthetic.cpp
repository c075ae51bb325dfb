#include "pmuev/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <numbers>
#include <numeric>

#include "pmuev/errors.hpp"

namespace pmuev {

namespace {

using std::chrono::hours;
using std::chrono::milliseconds;
using std::chrono::minutes;

double draw(std::mt19937_64& rng, const std::optional<double>& fixed, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  const double v = u(rng);  // always consumed so overrides do not shift later draws
  return fixed ? *fixed : v;
}

std::string_view cause_for(EventType t) {
  switch (t) {
    case EventType::LineOutage: return "line trip";
    case EventType::XfmrOutage: return "transformer trip";
    case EventType::FrequencyEvent: return "generation loss";
    case EventType::OscillationEvent: return "inter-area oscillation";
    case EventType::Normal: return "ambient";
    default: return "unknown";
  }
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid))) / 2.0;
  }
  return m;
}

}  // namespace

void ScenarioSpec::validate() const {
  if (pmu_count == 0) throw InvalidParameterError("scenario: pmu_count must be positive");
  if (sample_rate_hz != 30 && sample_rate_hz != 60) {
    throw InvalidParameterError("scenario: sample rate must be 30 or 60 Hz");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw InvalidParameterError("scenario: noise sigma must be >= 0");
  if (base_minute != floor_to_minute(base_minute)) throw InvalidParameterError("scenario: base_minute is not minute-aligned");
  if (onset_index && (*onset_index < 0 || *onset_index >= 120LL * sample_rate_hz)) {
    throw InvalidParameterError("scenario: onset index must lie within 120 s after base_minute");
  }
  if (recovery_fraction && (*recovery_fraction < 0.0 || *recovery_fraction > 1.0)) {
    throw InvalidParameterError("scenario: recovery fraction must lie in [0, 1]");
  }
  if (oscillation_hz && !(*oscillation_hz > 0.0)) throw InvalidParameterError("scenario: oscillation frequency must be > 0");
  if (damping_ratio && !(*damping_ratio >= 0.0 && *damping_ratio < 1.0)) {
    throw InvalidParameterError("scenario: damping ratio must lie in [0, 1)");
  }
  if (event_type == EventType::Unknown) throw InvalidParameterError("scenario: event type is Unknown");
}

SyntheticEvent generate_event(const ScenarioSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const int rate = spec.sample_rate_hz;
  const auto n = static_cast<std::size_t>(kSeriesSpan.count() * rate);
  const Timestamp t0 = spec.base_minute - kSeriesLead;

  std::uniform_int_distribution<std::int64_t> pick_onset(0, 60LL * rate - 1);
  const std::int64_t rel = pick_onset(rng);
  const std::int64_t onset_idx = kSeriesLead.count() * rate + (spec.onset_index ? *spec.onset_index : rel);

  const double depth = draw(rng, spec.step_depth, 0.02, 0.10);
  const double recovery = draw(rng, spec.recovery_fraction, 0.5, 0.8);
  const double recovery_tau = draw(rng, std::nullopt, 0.15, 0.4);
  const double kick = draw(rng, std::nullopt, 0.005, 0.02);
  const double kick_tau = draw(rng, std::nullopt, 0.3, 1.0);
  const double dip = draw(rng, spec.dip_depth_hz, 0.04, 0.12);
  const double dip_tau = draw(rng, std::nullopt, 0.3, 1.0);
  const double osc_hz = draw(rng, spec.oscillation_hz, 0.2, 2.0);
  const double zeta = draw(rng, spec.damping_ratio, 0.05, 0.2);
  const double osc_v = draw(rng, spec.oscillation_amplitude, 0.01, 0.03);
  const double osc_f = draw(rng, std::nullopt, 0.01, 0.04);
  const double omega = 2.0 * std::numbers::pi * osc_hz;

  SyntheticEvent ev;
  ev.event_id = spec.event_id;
  ev.event_type = spec.event_type;
  ev.onset_index = onset_idx;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t j = 0; j < spec.pmu_count; ++j) {
    const double reach = spec.vary_pmu_response ? 0.5 + 0.5 * unit(rng) : 1.0;
    const double share = spec.vary_pmu_response ? 0.95 + 0.1 * unit(rng) : 1.0;
    const double nominal = spec.vary_pmu_response ? 0.98 + 0.06 * unit(rng) : 1.0;
    char id[16];
    std::snprintf(id, sizeof id, "PMU%02zu", j + 1);
    PmuSeries s;
    s.pmu_id = id;
    s.sample_rate_hz = rate;
    s.t0 = t0;
    s.voltage.resize(n);
    s.freq_dev.resize(n);
    s.status.assign(n, 0);
    s.voltage_missing.assign(n, 0);
    s.freq_missing.assign(n, 0);
    for (std::size_t k = 0; k < n; ++k) {
      const double t = static_cast<double>(static_cast<std::int64_t>(k) - onset_idx) / rate;
      double dv = 0.0, df = 0.0;
      if (t >= 0.0) {
        switch (spec.event_type) {
          case EventType::LineOutage:
            dv = -depth * reach;
            df = kick * reach * std::exp(-t / kick_tau);
            break;
          case EventType::XfmrOutage:
            dv = -depth * reach * (1.0 - recovery * (1.0 - std::exp(-t / recovery_tau)));
            break;
          case EventType::FrequencyEvent:
            df = -dip * share * (0.3 + 0.7 * (1.0 - std::exp(-t / dip_tau)));
            break;
          case EventType::OscillationEvent: {
            const double env = std::exp(-zeta * omega * t) * std::cos(omega * t);
            dv = osc_v * reach * env;
            df = osc_f * share * env;
            break;
          }
          default:
            break;
        }
      }
      s.voltage[k] = nominal + dv + spec.noise_sigma * noise(rng);
      s.freq_dev[k] = df + spec.noise_sigma * noise(rng);
    }
    ev.series.push_back(std::move(s));
  }

  ev.onset = ev.series.front().time_at(onset_idx);
  ev.log.interconnection = spec.interconnection;
  ev.log.start = floor_to_minute(ev.onset);
  ev.log.end = ev.log.start + minutes(2);
  ev.log.event_type = spec.event_type;
  ev.log.cause = std::string(cause_for(spec.event_type));
  return ev;
}

void DefectSpec::validate() const {
  if (!(missing_fraction >= 0.0 && missing_fraction < 1.0)) {
    throw InvalidParameterError("defects: missing fraction must lie in [0, 1)");
  }
  if (min_run == 0 || max_run < min_run) throw InvalidParameterError("defects: need 1 <= min_run <= max_run");
  if (!(spike_probability >= 0.0 && spike_probability <= 1.0)) {
    throw InvalidParameterError("defects: spike probability must lie in [0, 1]");
  }
  if (!(status_probability >= 0.0 && status_probability <= 1.0)) {
    throw InvalidParameterError("defects: status probability must lie in [0, 1]");
  }
  if (!std::isfinite(spike_factor)) throw InvalidParameterError("defects: spike factor must be finite");
}

PmuSeries inject_defects(const PmuSeries& series, const DefectSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  PmuSeries out = series;
  const std::size_t n = out.size();
  if (n == 0) return out;

  const auto target = static_cast<std::size_t>(std::llround(spec.missing_fraction * static_cast<double>(n)));
  if (target > 0) {
    std::uniform_int_distribution<std::size_t> len(spec.min_run, spec.max_run);
    std::vector<std::size_t> runs;
    std::size_t total = 0;
    while (total < target) {
      const std::size_t l = std::min(len(rng), target - total);
      runs.push_back(l);
      total += l;
    }
    const std::size_t r = runs.size();
    if (target + (r - 1) > n) {
      throw DefectPlacementError("defects: " + std::to_string(r) + " runs totalling " + std::to_string(target) +
                                 " samples do not fit in " + std::to_string(n) + " samples without touching");
    }
    // Spread the spare samples over r+1 slots (a uniform weak composition),
    // reserving one sample between consecutive runs.
    const std::size_t spare = n - target - (r - 1);
    std::vector<std::size_t> cuts(spare + r);
    std::iota(cuts.begin(), cuts.end(), 0);
    std::vector<std::size_t> chosen;
    std::sample(cuts.begin(), cuts.end(), std::back_inserter(chosen), r, rng);
    std::sort(chosen.begin(), chosen.end());
    std::shuffle(runs.begin(), runs.end(), rng);
    std::size_t pos = 0, prev = 0;
    for (std::size_t i = 0; i < r; ++i) {
      const std::size_t gap = chosen[i] - prev - (i == 0 ? 0 : 1);
      prev = chosen[i];
      pos += gap + (i == 0 ? 0 : 1);
      for (std::size_t k = pos; k < pos + runs[i]; ++k) {
        out.voltage[k] = out.freq_dev[k] = std::nan("");
        out.voltage_missing[k] = out.freq_missing[k] = 1;
      }
      pos += runs[i];
    }
  }

  if (spec.spike_probability > 0.0) {
    std::vector<double> present;
    for (std::size_t k = 0; k < n; ++k) {
      if (!series.voltage_missing[k] && std::isfinite(series.voltage[k])) present.push_back(series.voltage[k]);
    }
    const double nominal = median_of(std::move(present));
    std::bernoulli_distribution hit(spec.spike_probability);
    for (std::size_t k = 0; k < n; ++k) {
      if (hit(rng) && !out.voltage_missing[k]) out.voltage[k] = nominal * spec.spike_factor;
    }
  }

  if (spec.status_probability > 0.0) {
    std::bernoulli_distribution hit(spec.status_probability);
    std::uniform_int_distribution<int> flag(1, 0x3F);
    for (std::size_t k = 0; k < n; ++k) {
      if (hit(rng)) out.status[k] = static_cast<std::uint16_t>(flag(rng));
    }
  }
  return out;
}

std::uint64_t event_seed(std::uint64_t seed, std::int64_t event_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(event_id), static_cast<std::uint32_t>(static_cast<std::uint64_t>(event_id) >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

std::vector<MtfGraph> encode_windows(std::span<const EventWindow> windows, std::size_t q) {
  std::vector<MtfGraph> graphs;
  graphs.reserve(windows.size());
  for (const auto& w : windows) graphs.push_back(encode_window(w, q));
  return graphs;
}

SyntheticEvent dataset_event(const DatasetOptions& options, std::int64_t id) {
  if (options.classes.empty()) throw InvalidParameterError("dataset: no classes requested");
  if (id < 0) throw InvalidParameterError("dataset: negative event id");
  ScenarioSpec spec = options.scenario;
  spec.event_type = options.classes[static_cast<std::size_t>(id) % options.classes.size()];
  spec.event_id = id;
  spec.seed = event_seed(options.seed, id);
  spec.base_minute = options.scenario.base_minute + hours(id);
  SyntheticEvent ev = generate_event(spec);
  if (options.defects) {
    std::mt19937_64 rng(event_seed(options.seed ^ 0xD1B54A32D192ED03ULL, id));
    for (auto& s : ev.series) s = inject_defects(s, *options.defects, rng);
  }
  return ev;
}

SyntheticDataset build_dataset(const DatasetOptions& options) {
  if (options.events_per_class == 0) throw InvalidParameterError("dataset: events_per_class must be >= 1");
  if (options.classes.empty()) throw InvalidParameterError("dataset: no classes requested");
  if (options.defects) options.defects->validate();
  SyntheticDataset ds;
  const std::size_t total = options.events_per_class * options.classes.size();
  for (std::size_t i = 0; i < total; ++i) {
    const auto id = static_cast<std::int64_t>(i);
    SyntheticEvent ev = dataset_event(options, id);
    std::vector<PmuSeries> contexts;
    contexts.reserve(ev.series.size());
    for (const auto& s : ev.series) contexts.push_back(slice_context(s, ev.log.start));
    ev.series.clear();

    EventRecord rec{id, ev.event_type, ev.log, ev.onset, {}};
    if (ev.event_type == EventType::Normal) {
      std::mt19937_64 rng(event_seed(options.seed ^ 0x9E3779B97F4A7C15ULL, id));
      const auto frames = (kPreEventSpan + kPostEventSpan) / kFrameSpan;
      std::uniform_int_distribution<std::int64_t> pick(0, frames - 1);
      rec.located_onset = contexts.front().t0 + kFrameSpan * pick(rng);
    } else {
      rec.located_onset = locate_onset(contexts);
    }

    for (const auto& ctx : contexts) {
      CandidateWindow cand = extract_window(ctx, rec.located_onset);
      cand.event_id = id;
      cand.label = ev.event_type;
      ++ds.candidates;
      GateResult gate = quality_gate(cand, options.gate);
      if (!gate.accepted()) {
        ++ds.rejected;
        continue;
      }
      EventWindow w = gate.window();
      w.event_id = id;
      w.label = ev.event_type;
      if (options.encode) ds.graphs.push_back(encode_window(w, options.mtf_bins));
      ds.windows.push_back(std::move(w));
    }
    ds.events.push_back(rec);
  }
  return ds;
}

}  // namespace pmuev
