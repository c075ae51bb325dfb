#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pmuev/preprocess.hpp"

namespace pmuev {

inline constexpr std::size_t kDefaultQuantileBins = 8;

// Row-stochastic q x q matrix of first-order transitions between quantile
// states. probs[a * q + b] = P(next state b | current state a). Rows of states
// that are never left stay all-zero.
struct TransitionMatrix {
  std::size_t q = 0;
  std::vector<double> probs;
  std::vector<std::size_t> outgoing;  // transitions counted out of each state

  double at(std::size_t from, std::size_t to) const { return probs[from * q + to]; }
};

// Markov transition field of a 2-channel window: n x n x channels, stored
// row-major with the channel index fastest (HWC), channel 0 voltage and
// channel 1 frequency.
struct MtfGraph {
  std::int64_t event_id = 0;
  std::string pmu_id;
  std::size_t n = 0;
  std::size_t channels = 2;
  std::size_t q = kDefaultQuantileBins;
  std::vector<float> data;

  float at(std::size_t row, std::size_t col, std::size_t channel) const {
    return data[(row * n + col) * channels + channel];
  }
};

// Rank-based equal-population binning. Samples are ordered by (value, index)
// and the sample of rank r goes to state floor(r * q / n). States are 0-based.
std::vector<std::size_t> quantile_bins(std::span<const double> x, std::size_t q);

TransitionMatrix transition_matrix(std::span<const std::size_t> states, std::size_t q);

// n x n row-major field M[k1][k2] = W[state(k1)][state(k2)].
std::vector<double> markov_transition_field(std::span<const double> x, std::size_t q);

MtfGraph encode_channels(std::span<const double> voltage, std::span<const double> frequency, std::size_t q);
MtfGraph encode_window(const EventWindow& window, std::size_t q = kDefaultQuantileBins);

// Binary layout (little-endian): "MTFG", u32 n, u32 channels, u32 q, then
// n*n*channels float32 in row-major HWC order.
void write_graph(std::ostream& out, const MtfGraph& graph);
MtfGraph read_graph(std::istream& in);

// Debug dump: row,col,voltage,frequency.
void write_graph_csv(std::ostream& out, const MtfGraph& graph);

}  // namespace pmuev
