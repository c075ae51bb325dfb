#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pmuev {

// UTC wall-clock time at millisecond precision.
using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

inline constexpr double kNominalFrequencyHz = 60.0;

enum class EventType : std::uint8_t {
  LineOutage,
  XfmrOutage,
  FrequencyEvent,
  OscillationEvent,
  Normal,
  Unknown,
};

std::string_view to_string(EventType type);

// Case-insensitive; spaces, '_' and '-' are ignored. Anything unrecognised
// (including the empty string) maps to Unknown.
EventType event_type_from_string(std::string_view text);

enum class Channel : std::uint8_t { Voltage, Frequency };

// Per-PMU samples on a uniform time grid. Samples absent from the source are
// materialised with NaN values and a set missing flag, so sample k is always at
// t0 + k / sample_rate_hz.
struct PmuSeries {
  std::string pmu_id;
  int sample_rate_hz = 60;
  Timestamp t0{};
  std::vector<double> voltage;
  std::vector<double> freq_dev;  // Hz deviation from 60 Hz
  std::vector<std::uint16_t> status;
  std::vector<std::uint8_t> voltage_missing;
  std::vector<std::uint8_t> freq_missing;

  // All-missing series of n samples.
  static PmuSeries blank(std::string pmu_id, int sample_rate_hz, Timestamp t0, std::size_t n);

  std::size_t size() const { return voltage.size(); }
  Timestamp time_at(std::int64_t k) const;
  // Nearest grid index for t; may fall outside [0, size()).
  std::int64_t index_at(Timestamp t) const;

  std::span<const double> values(Channel c) const {
    return c == Channel::Voltage ? std::span<const double>(voltage) : std::span<const double>(freq_dev);
  }
  std::span<const std::uint8_t> missing(Channel c) const {
    return c == Channel::Voltage ? std::span<const std::uint8_t>(voltage_missing)
                                 : std::span<const std::uint8_t>(freq_missing);
  }

  // Throws FormatError if channel lengths disagree or the rate is unsupported.
  void validate() const;
};

struct EventLogEntry {
  std::string interconnection;
  Timestamp start{};
  Timestamp end{};
  EventType event_type = EventType::Unknown;
  std::string cause;
};

struct StatusAssessment {
  bool usable = true;
  std::uint8_t trigger_reason = 0;  // bits 3..0
  std::uint8_t time_error = 0;      // bits 5..4
  std::uint16_t raw = 0;
};

constexpr StatusAssessment decode_status(std::uint16_t raw) {
  return StatusAssessment{
      .usable = raw == 0,
      .trigger_reason = static_cast<std::uint8_t>(raw & 0x0Fu),
      .time_error = static_cast<std::uint8_t>((raw >> 4) & 0x03u),
      .raw = raw,
  };
}

inline constexpr std::chrono::seconds kPreEventSpan{60};
inline constexpr std::chrono::seconds kPostEventSpan{120};

// Signal CSV: `pmu_id,timestamp_ms,voltage,freq_dev,status`, rows grouped by
// pmu_id with increasing timestamps; `NaN` marks a missing channel value.
std::vector<PmuSeries> parse_signal_csv(std::istream& in);
void write_signal_csv(std::ostream& out, std::span<const PmuSeries> series);

// Event log CSV: `interconnection,start_iso,end_iso,event_type,cause`.
std::vector<EventLogEntry> parse_event_log(std::istream& in);
void write_event_log(std::ostream& out, std::span<const EventLogEntry> entries);

// Returns the 180 s sub-series [start - 60 s, start + 120 s), padding with
// missing samples where the source has no coverage.
PmuSeries slice_context(const PmuSeries& series, Timestamp start);

// ISO-8601 UTC: YYYY-MM-DDTHH:MM[:SS[.fff]][Z].
std::optional<Timestamp> parse_iso8601(std::string_view text);
std::string format_iso8601(Timestamp t);

Timestamp floor_to_minute(Timestamp t);

}  // namespace pmuev
