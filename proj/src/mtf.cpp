#include "pmuev/mtf.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>

#include "binary_io.hpp"
#include "pmuev/errors.hpp"

namespace pmuev {

std::vector<std::size_t> quantile_bins(std::span<const double> x, std::size_t q) {
  const std::size_t n = x.size();
  if (q < 2 || q > n) {
    throw InvalidParameterError("quantile_bins: need 2 <= q <= n (q=" + std::to_string(q) +
                                ", n=" + std::to_string(n) + ")");
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw InvalidParameterError("quantile_bins: non-finite sample");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<std::size_t> bins(n);
  for (std::size_t r = 0; r < n; ++r) bins[order[r]] = r * q / n;
  return bins;
}

TransitionMatrix transition_matrix(std::span<const std::size_t> states, std::size_t q) {
  if (states.size() < 2) throw InvalidParameterError("transition_matrix: need at least 2 states");
  TransitionMatrix w;
  w.q = q;
  w.probs.assign(q * q, 0.0);
  w.outgoing.assign(q, 0);
  for (std::size_t t = 1; t < states.size(); ++t) {
    std::size_t a = states[t - 1];
    std::size_t b = states[t];
    if (a >= q || b >= q) throw InvalidParameterError("transition_matrix: state out of range");
    w.probs[a * q + b] += 1.0;
    ++w.outgoing[a];
  }
  for (std::size_t a = 0; a < q; ++a) {
    if (w.outgoing[a] == 0) continue;
    double total = static_cast<double>(w.outgoing[a]);
    for (std::size_t b = 0; b < q; ++b) w.probs[a * q + b] /= total;
  }
  return w;
}

std::vector<double> markov_transition_field(std::span<const double> x, std::size_t q) {
  auto bins = quantile_bins(x, q);
  auto w = transition_matrix(bins, q);
  const std::size_t n = x.size();
  std::vector<double> m(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &w.probs[bins[i] * q];
    for (std::size_t j = 0; j < n; ++j) m[i * n + j] = row[bins[j]];
  }
  return m;
}

MtfGraph encode_channels(std::span<const double> voltage, std::span<const double> frequency, std::size_t q) {
  if (voltage.size() != frequency.size()) throw ShapeError("encode: channel lengths differ");
  const std::size_t n = voltage.size();
  MtfGraph g;
  g.n = n;
  g.channels = 2;
  g.q = q;
  g.data.resize(n * n * 2);
  auto mv = markov_transition_field(voltage, q);
  auto mf = markov_transition_field(frequency, q);
  for (std::size_t i = 0; i < n * n; ++i) {
    g.data[2 * i] = static_cast<float>(mv[i]);
    g.data[2 * i + 1] = static_cast<float>(mf[i]);
  }
  return g;
}

MtfGraph encode_window(const EventWindow& window, std::size_t q) {
  MtfGraph g = encode_channels(window.samples_v, window.samples_f, q);
  g.event_id = window.event_id;
  g.pmu_id = window.pmu_id;
  return g;
}

namespace {
constexpr char kGraphMagic[4] = {'M', 'T', 'F', 'G'};
}

void write_graph(std::ostream& out, const MtfGraph& graph) {
  if (graph.data.size() != graph.n * graph.n * graph.channels) throw ShapeError("write_graph: bad data length");
  out.write(kGraphMagic, 4);
  detail::write_u32(out, static_cast<std::uint32_t>(graph.n));
  detail::write_u32(out, static_cast<std::uint32_t>(graph.channels));
  detail::write_u32(out, static_cast<std::uint32_t>(graph.q));
  detail::write_f32_array(out, graph.data);
  if (!out) throw FormatError("write_graph: stream failure");
}

MtfGraph read_graph(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kGraphMagic, 4) != 0) {
    throw FormatError("read_graph: bad magic");
  }
  MtfGraph g;
  g.n = detail::read_u32(in);
  g.channels = detail::read_u32(in);
  g.q = detail::read_u32(in);
  if (g.n == 0 || g.channels == 0 || g.n > 100000) throw FormatError("read_graph: bad dimensions");
  g.data = detail::read_f32_array(in, g.n * g.n * g.channels);
  return g;
}

void write_graph_csv(std::ostream& out, const MtfGraph& graph) {
  out << "row,col";
  for (std::size_t c = 0; c < graph.channels; ++c) out << (c == 0 ? ",voltage" : c == 1 ? ",frequency" : ",ch");
  out << '\n';
  for (std::size_t i = 0; i < graph.n; ++i) {
    for (std::size_t j = 0; j < graph.n; ++j) {
      out << i << ',' << j;
      for (std::size_t c = 0; c < graph.channels; ++c) out << ',' << graph.at(i, j, c);
      out << '\n';
    }
  }
}

}  // namespace pmuev
