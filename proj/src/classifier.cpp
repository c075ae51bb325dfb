#include "pmuev/classifier.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "pmuev/errors.hpp"
#include "pmuev/neural/loss.hpp"
#include "text_util.hpp"

namespace pmuev {

namespace {

constexpr char kMagic[4] = {'P', 'M', 'E', 'V'};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

bool contains(const std::vector<std::size_t>& v, std::size_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

std::vector<double> softmax_row(const float* logits, std::size_t o) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < o; ++j) m = std::max(m, static_cast<double>(logits[j]));
  std::vector<double> p(o);
  double total = 0.0;
  for (std::size_t j = 0; j < o; ++j) {
    p[j] = std::exp(static_cast<double>(logits[j]) - m);
    total += p[j];
  }
  for (auto& v : p) v /= total;
  return p;
}

}  // namespace

void ModelConfig::validate() const {
  if (input_channels == 0) throw ConfigError("model: input_channels must be positive");
  if (filters.empty()) throw ConfigError("model: at least one conv block required");
  for (auto f : filters) {
    if (f == 0) throw ConfigError("model: filter counts must be positive");
  }
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("model: kernel must be odd and positive");
  for (const auto* list : {&pool_after, &dropout_after}) {
    for (auto b : *list) {
      if (b == 0 || b > filters.size()) throw ConfigError("model: block index " + std::to_string(b) + " out of range");
    }
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model: dropout rate must lie in [0, 1)");
  if (spp_levels.empty()) throw ConfigError("model: SPP needs at least one level");
  for (auto l : spp_levels) {
    if (l == 0) throw ConfigError("model: SPP levels must be positive");
  }
  if (classes < 2) throw ConfigError("model: need at least 2 classes");
  if (mtf_bins < 2) throw ConfigError("model: mtf_bins must be at least 2");
  if (!(output_init_scale > 0.0)) throw ConfigError("model: output_init_scale must be positive");
  std::size_t side = canonical_size;
  for (std::size_t b = 1; b <= filters.size(); ++b) {
    if (contains(pool_after, b)) side = (side + 1) / 2;
  }
  if (side < *std::max_element(spp_levels.begin(), spp_levels.end())) {
    throw ConfigError("model: canonical_size " + std::to_string(canonical_size) + " is too small for the SPP levels");
  }
}

TrainedModel::TrainedModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t channels = config_.input_channels;
  std::size_t dropouts = 0;
  for (std::size_t b = 1; b <= config_.filters.size(); ++b) {
    const std::string id = std::to_string(b);
    auto& conv = net_.add<nn::Conv2D<float>>("conv" + id, channels, config_.filters[b - 1], config_.kernel,
                                            nn::Padding::Same);
    conv.init_he(rng);
    if (b == 1) conv.set_propagate_input_grad(false);
    channels = config_.filters[b - 1];
    net_.add<nn::ReLU<float>>("relu" + id);
    net_.add<nn::BatchNorm<float>>("bn" + id, channels);
    if (contains(config_.pool_after, b)) net_.add<nn::MaxPool2x2<float>>("pool" + id);
    if (contains(config_.dropout_after, b)) {
      net_.add<nn::Dropout<float>>("dropout" + id, config_.dropout_rate, mix_seed(seed, ++dropouts));
    }
  }
  auto& spp = net_.add<nn::SpatialPyramidPool<float>>("spp", config_.spp_levels);
  auto& dense = net_.add<nn::Dense<float>>("dense", channels * spp.bins(), config_.classes);
  dense.init_he(rng, config_.output_init_scale);

  for (std::size_t i = 0; i < config_.classes; ++i) {
    labels_.push_back(i < 5 ? static_cast<EventType>(i) : EventType::Unknown);
  }
}

TrainedModel build_model(const ModelConfig& config, std::uint64_t seed) { return TrainedModel(config, seed); }

void TrainedModel::set_labels(std::vector<EventType> labels) {
  if (labels.size() != config_.classes) throw ConfigError("label dictionary size differs from class count");
  std::set<EventType> seen(labels.begin(), labels.end());
  if (seen.size() != labels.size()) throw ConfigError("label dictionary has duplicates");
  labels_ = std::move(labels);
}

std::size_t TrainedModel::class_index(EventType type) const {
  auto it = std::find(labels_.begin(), labels_.end(), type);
  if (it == labels_.end() || type == EventType::Unknown) {
    throw InvalidParameterError("label '" + std::string(to_string(type)) + "' is not in the model's dictionary");
  }
  return static_cast<std::size_t>(it - labels_.begin());
}

std::vector<LayerSummary> TrainedModel::summary(std::size_t n) const {
  std::vector<LayerSummary> out;
  nn::Shape shape{1, n, n, config_.input_channels};
  for (std::size_t i = 0; i < net_.size(); ++i) {
    const auto& layer = net_.layer(i);
    shape = layer.output_shape(shape);
    out.push_back({layer.name(), layer.kind(), shape, layer.parameter_count()});
  }
  return out;
}

std::size_t TrainedModel::min_input_size() const {
  const std::size_t need = *std::max_element(config_.spp_levels.begin(), config_.spp_levels.end());
  for (std::size_t n = 1;; ++n) {
    std::size_t side = n;
    for (std::size_t b = 1; b <= config_.filters.size(); ++b) {
      if (contains(config_.pool_after, b)) side = (side + 1) / 2;
    }
    if (side >= need) return n;
  }
}

void TrainedModel::check_graph(const MtfGraph& graph) const {
  if (graph.channels != config_.input_channels) {
    throw ShapeError("graph has " + std::to_string(graph.channels) + " channels, model expects " +
                     std::to_string(config_.input_channels));
  }
  if (graph.data.size() != graph.n * graph.n * graph.channels) throw ShapeError("graph data length mismatch");
  if (graph.n < min_input_size()) {
    throw InputTooSmallError("graph side " + std::to_string(graph.n) + " is below the minimum legal size " +
                             std::to_string(min_input_size()));
  }
}

std::vector<double> TrainedModel::predict(const MtfGraph& graph) {
  const MtfGraph* one[] = {&graph};
  return predict_batch(std::span<const MtfGraph* const>(one), 1).front();
}

std::vector<std::vector<double>> TrainedModel::predict_batch(std::span<const MtfGraph> graphs,
                                                             std::size_t batch_size) {
  std::vector<const MtfGraph*> ptrs;
  ptrs.reserve(graphs.size());
  for (const auto& g : graphs) ptrs.push_back(&g);
  return predict_batch(std::span<const MtfGraph* const>(ptrs), batch_size);
}

std::vector<std::vector<double>> TrainedModel::predict_batch(std::span<const MtfGraph* const> graphs,
                                                             std::size_t batch_size) {
  if (batch_size == 0) throw InvalidParameterError("predict: batch size must be positive");
  for (const auto* g : graphs) check_graph(*g);
  std::map<std::size_t, std::vector<std::size_t>> by_size;
  for (std::size_t i = 0; i < graphs.size(); ++i) by_size[graphs[i]->n].push_back(i);

  std::vector<std::vector<double>> out(graphs.size());
  const std::size_t c = config_.input_channels;
  for (const auto& [n, idx] : by_size) {
    const std::size_t per = n * n * c;
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
      const std::size_t b = std::min(batch_size, idx.size() - start);
      nn::Tensor<float> x({b, n, n, c});
      for (std::size_t k = 0; k < b; ++k) {
        std::memcpy(x.data() + k * per, graphs[idx[start + k]]->data.data(), per * sizeof(float));
      }
      nn::Tensor<float> logits = net_.forward(x, nn::Mode::Infer);
      const std::size_t o = logits.dim(1);
      for (std::size_t k = 0; k < b; ++k) out[idx[start + k]] = softmax_row(logits.data() + k * o, o);
    }
  }
  return out;
}

std::size_t argmax_class(std::span<const double> probabilities) {
  if (probabilities.empty()) throw InvalidParameterError("argmax of an empty distribution");
  std::size_t best = 0;
  for (std::size_t j = 1; j < probabilities.size(); ++j) {
    if (probabilities[j] > probabilities[best]) best = j;
  }
  return best;
}

// ---------------------------------------------------------------- splitting

DatasetSplit split_by_event(std::span<const LabeledGraph> dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw InvalidParameterError("test fraction must lie in [0, 1)");
  }
  std::map<std::int64_t, EventType> event_label;
  for (const auto& ex : dataset) {
    auto [it, inserted] = event_label.emplace(ex.graph.event_id, ex.label);
    if (!inserted && it->second != ex.label) {
      throw InvalidParameterError("event " + std::to_string(ex.graph.event_id) + " carries more than one label");
    }
  }
  std::map<EventType, std::vector<std::int64_t>> by_class;
  for (const auto& [id, label] : event_label) by_class[label].push_back(id);

  std::mt19937_64 rng(seed);
  std::vector<std::int64_t> test_events;
  for (auto& [label, ids] : by_class) {
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto take = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ids.size())));
    test_events.insert(test_events.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return split_from_events(dataset, std::move(test_events));
}

DatasetSplit split_from_events(std::span<const LabeledGraph> dataset, std::vector<std::int64_t> test_events) {
  std::sort(test_events.begin(), test_events.end());
  test_events.erase(std::unique(test_events.begin(), test_events.end()), test_events.end());
  DatasetSplit split;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (std::binary_search(test_events.begin(), test_events.end(), dataset[i].graph.event_id)) {
      split.test.push_back(i);
    } else {
      split.train.push_back(i);
    }
  }
  split.test_events = std::move(test_events);
  return split;
}

// ---------------------------------------------------------------- training

ScoreResult score(TrainedModel& model, std::span<const LabeledGraph> dataset, std::span<const std::size_t> indices) {
  ScoreResult r;
  if (indices.empty()) {
    r.loss = r.accuracy = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  std::vector<const MtfGraph*> graphs;
  graphs.reserve(indices.size());
  for (auto i : indices) graphs.push_back(&dataset[i].graph);
  auto probs = model.predict_batch(std::span<const MtfGraph* const>(graphs));
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t y = model.class_index(dataset[indices[k]].label);
    loss -= std::log(std::max(probs[k][y], std::numeric_limits<double>::min()));
    if (argmax_class(probs[k]) == y) ++correct;
  }
  r.count = indices.size();
  r.loss = loss / static_cast<double>(r.count);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  return r;
}

void train(TrainedModel& model, std::span<const LabeledGraph> dataset, const DatasetSplit& split,
           const TrainConfig& config) {
  if (config.batch_size < 2) throw InvalidParameterError("train: batch size must be at least 2");
  if (split.train.empty()) throw DegenerateDatasetError("train: empty training set");
  const ModelConfig& mc = model.config();
  const std::size_t n = mc.canonical_size, c = mc.input_channels, per = n * n * c;
  std::set<std::size_t> classes;
  std::vector<std::size_t> target(dataset.size(), 0);
  for (auto i : split.train) {
    if (i >= dataset.size()) throw OutOfRangeError("train: split index out of range");
    const MtfGraph& g = dataset[i].graph;
    if (g.n != n || g.channels != c || g.data.size() != per) {
      throw ShapeError("train: graph " + std::to_string(g.event_id) + "/" + g.pmu_id + " is " + std::to_string(g.n) +
                       "x" + std::to_string(g.n) + "x" + std::to_string(g.channels) + ", training requires " +
                       std::to_string(n) + "x" + std::to_string(n) + "x" + std::to_string(c));
    }
    target[i] = model.class_index(dataset[i].label);
    classes.insert(target[i]);
  }
  if (classes.size() < 2) throw DegenerateDatasetError("train: training set holds fewer than 2 classes");
  for (auto i : split.test) {
    if (i >= dataset.size()) throw OutOfRangeError("train: split index out of range");
    model.class_index(dataset[i].label);
  }

  std::vector<std::size_t> monitor = split.test;
  if (config.history_test_limit > 0 && monitor.size() > config.history_test_limit) {
    std::mt19937_64 pick(mix_seed(config.split_seed, 99));
    std::shuffle(monitor.begin(), monitor.end(), pick);
    monitor.resize(config.history_test_limit);
    std::sort(monitor.begin(), monitor.end());
  }

  auto& net = model.network();
  auto params = net.parameters();
  nn::Adam<float> adam(config.adam);
  std::mt19937_64 rng(config.shuffle_seed);
  std::vector<std::size_t> order = split.train;
  const std::size_t first_epoch = model.history().size();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      if (b < 2) break;
      nn::Tensor<float> x({b, n, n, c});
      std::vector<std::size_t> labels(b);
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t i = order[start + k];
        std::memcpy(x.data() + k * per, dataset[i].graph.data.data(), per * sizeof(float));
        labels[k] = target[i];
      }
      nn::Tensor<float> logits = net.forward(x, nn::Mode::Train);
      auto result = nn::softmax_cross_entropy(logits, std::span<const std::size_t>(labels));
      net.backward(result.grad);
      adam.step(params);
      loss_sum += result.loss * static_cast<double>(b);
      const std::size_t o = logits.dim(1);
      for (std::size_t k = 0; k < b; ++k) {
        std::vector<double> p(result.probabilities.data() + k * o, result.probabilities.data() + (k + 1) * o);
        if (argmax_class(p) == labels[k]) ++correct;
      }
      seen += b;
    }
    EpochStats stats;
    stats.epoch = first_epoch + epoch + 1;
    stats.train_loss = seen ? loss_sum / static_cast<double>(seen) : std::numeric_limits<double>::quiet_NaN();
    stats.train_accuracy =
        seen ? static_cast<double>(correct) / static_cast<double>(seen) : std::numeric_limits<double>::quiet_NaN();
    const ScoreResult test = score(model, dataset, monitor);
    stats.test_loss = test.loss;
    stats.test_accuracy = test.accuracy;
    model.history().push_back(stats);
    if (config.on_epoch) config.on_epoch(stats);
  }
}

DatasetSplit train(TrainedModel& model, std::span<const LabeledGraph> dataset, const TrainConfig& config) {
  DatasetSplit split = split_by_event(dataset, config.test_fraction, config.split_seed);
  train(model, dataset, split, config);
  return split;
}

// ---------------------------------------------------------------- checkpoints

namespace {

void write_list(std::ostream& out, const std::vector<std::size_t>& v) {
  detail::write_u32(out, static_cast<std::uint32_t>(v.size()));
  for (auto x : v) detail::write_u32(out, static_cast<std::uint32_t>(x));
}

std::vector<std::size_t> read_list(std::istream& in) {
  const std::uint32_t count = detail::read_u32(in);
  if (count > 4096) throw FormatError("list length out of range");
  std::vector<std::size_t> v(count);
  for (auto& x : v) x = detail::read_u32(in);
  return v;
}

void write_config(std::ostream& out, const ModelConfig& c) {
  detail::write_u32(out, static_cast<std::uint32_t>(c.input_channels));
  write_list(out, c.filters);
  detail::write_u32(out, static_cast<std::uint32_t>(c.kernel));
  write_list(out, c.pool_after);
  write_list(out, c.dropout_after);
  detail::write_f64(out, c.dropout_rate);
  write_list(out, c.spp_levels);
  detail::write_u32(out, static_cast<std::uint32_t>(c.classes));
  detail::write_u32(out, static_cast<std::uint32_t>(c.canonical_size));
  detail::write_u32(out, static_cast<std::uint32_t>(c.mtf_bins));
  detail::write_f64(out, c.output_init_scale);
}

ModelConfig read_config(std::istream& in) {
  ModelConfig c;
  c.input_channels = detail::read_u32(in);
  c.filters = read_list(in);
  c.kernel = detail::read_u32(in);
  c.pool_after = read_list(in);
  c.dropout_after = read_list(in);
  c.dropout_rate = detail::read_f64(in);
  c.spp_levels = read_list(in);
  c.classes = detail::read_u32(in);
  c.canonical_size = detail::read_u32(in);
  c.mtf_bins = detail::read_u32(in);
  c.output_init_scale = detail::read_f64(in);
  return c;
}

struct NamedTensor {
  std::string name;
  nn::Tensor<float>* value;
};

std::vector<NamedTensor> state_tensors(TrainedModel& model) {
  std::vector<NamedTensor> out;
  for (auto& p : model.network().parameters()) out.push_back({p.name, p.value});
  for (auto& b : model.network().buffers()) out.push_back({b.name, b.value});
  return out;
}

std::uint32_t crc_of(const std::string& bytes, std::size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t done = 0;
  while (done < len) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(len - done, 1u << 30));
    crc = crc32(crc, p + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const TrainedModel& model, std::ostream& out) {
  auto& m = const_cast<TrainedModel&>(model);
  std::ostringstream body;
  body.write(kMagic, 4);
  detail::write_u32(body, kCheckpointVersion);
  write_config(body, model.config());
  detail::write_u64(body, model.seed());
  detail::write_u32(body, static_cast<std::uint32_t>(model.labels().size()));
  for (auto t : model.labels()) detail::write_string(body, std::string(to_string(t)));
  detail::write_u32(body, static_cast<std::uint32_t>(model.history().size()));
  for (const auto& h : model.history()) {
    detail::write_u32(body, static_cast<std::uint32_t>(h.epoch));
    detail::write_f64(body, h.train_loss);
    detail::write_f64(body, h.train_accuracy);
    detail::write_f64(body, h.test_loss);
    detail::write_f64(body, h.test_accuracy);
  }
  auto tensors = state_tensors(m);
  detail::write_u32(body, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::write_string(body, t.name);
    detail::write_u32(body, static_cast<std::uint32_t>(t.value->rank()));
    for (auto d : t.value->shape()) detail::write_u32(body, static_cast<std::uint32_t>(d));
    detail::write_f32_array(body, t.value->values());
  }
  const std::string bytes = body.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  detail::write_u32(out, crc_of(bytes, bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: write failed");
}

TrainedModel load_checkpoint(std::istream& in, const ModelConfig* expected) {
  using Kind = CheckpointError::Kind;
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(Kind::BadMagic, "checkpoint: not a model checkpoint");
  }
  if (bytes.size() < 12) throw CheckpointError(Kind::Checksum, "checkpoint: truncated");
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::Version, "checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                                             std::to_string(kCheckpointVersion) + ")");
  }
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) {
    stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[bytes.size() - 4 + i])) << (8 * i);
  }
  if (crc_of(bytes, bytes.size() - 4) != stored) throw CheckpointError(Kind::Checksum, "checkpoint: checksum mismatch");

  std::istringstream body(bytes.substr(8, bytes.size() - 12));
  try {
    ModelConfig config = read_config(body);
    if (expected && !(config == *expected)) {
      throw CheckpointError(Kind::ConfigMismatch, "checkpoint: model configuration differs from the expected one");
    }
    const std::uint64_t seed = detail::read_u64(body);
    TrainedModel model(config, seed);
    const std::uint32_t nlabels = detail::read_u32(body);
    std::vector<EventType> labels;
    for (std::uint32_t i = 0; i < nlabels; ++i) labels.push_back(event_type_from_string(detail::read_string(body)));
    model.set_labels(std::move(labels));
    const std::uint32_t nhist = detail::read_u32(body);
    for (std::uint32_t i = 0; i < nhist; ++i) {
      EpochStats h;
      h.epoch = detail::read_u32(body);
      h.train_loss = detail::read_f64(body);
      h.train_accuracy = detail::read_f64(body);
      h.test_loss = detail::read_f64(body);
      h.test_accuracy = detail::read_f64(body);
      model.history().push_back(h);
    }
    auto tensors = state_tensors(model);
    if (detail::read_u32(body) != tensors.size()) {
      throw CheckpointError(Kind::ConfigMismatch, "checkpoint: tensor count does not match the architecture");
    }
    for (auto& t : tensors) {
      const std::string name = detail::read_string(body);
      const std::uint32_t rank = detail::read_u32(body);
      if (rank > 8) throw FormatError("tensor rank out of range");
      nn::Shape shape(rank);
      for (auto& d : shape) d = detail::read_u32(body);
      if (name != t.name || shape != t.value->shape()) {
        throw CheckpointError(Kind::ConfigMismatch, "checkpoint: tensor " + name + " " + nn::shape_string(shape) +
                                                        " does not match " + t.name + " " +
                                                        nn::shape_string(t.value->shape()));
      }
      const auto values = detail::read_f32_array(body, t.value->size());
      t.value->storage().assign(values.begin(), values.end());
    }
    return model;
  } catch (const CheckpointError&) {
    throw;
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::ConfigMismatch, std::string("checkpoint: ") + e.what());
  } catch (const FormatError& e) {
    throw CheckpointError(Kind::Checksum, std::string("checkpoint: corrupt body: ") + e.what());
  }
}

void save_checkpoint_file(const TrainedModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path + " for writing");
  save_checkpoint(model, out);
}

TrainedModel load_checkpoint_file(const std::string& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path);
  return load_checkpoint(in, expected);
}

std::vector<std::size_t> limit_per_event(std::span<const LabeledGraph> dataset, std::span<const std::size_t> indices,
                                         std::size_t per_event, std::uint64_t seed) {
  if (per_event == 0) return {indices.begin(), indices.end()};
  std::map<std::int64_t, std::vector<std::size_t>> by_event;
  for (auto i : indices) {
    if (i >= dataset.size()) throw OutOfRangeError("limit_per_event: index out of range");
    by_event[dataset[i].graph.event_id].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> keep(dataset.size(), 0);
  for (auto& [id, members] : by_event) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t k = 0; k < std::min(per_event, members.size()); ++k) keep[members[k]] = 1;
  }
  std::vector<std::size_t> out;
  for (auto i : indices) {
    if (keep[i]) out.push_back(i);
  }
  return out;
}

void write_graph_bundle(std::ostream& out, std::span<const LabeledGraph> graphs) {
  out.write("MTFB", 4);
  detail::write_u32(out, static_cast<std::uint32_t>(graphs.size()));
  for (const auto& g : graphs) {
    detail::write_u64(out, static_cast<std::uint64_t>(g.graph.event_id));
    detail::write_string(out, g.graph.pmu_id);
    detail::write_string(out, std::string(to_string(g.label)));
    write_graph(out, g.graph);
  }
  if (!out) throw FormatError("graph bundle: write failed");
}

std::vector<LabeledGraph> read_graph_bundle(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MTFB", 4) != 0) throw FormatError("graph bundle: bad magic");
  const std::uint32_t count = detail::read_u32(in);
  std::vector<LabeledGraph> out;
  out.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t i = 0; i < count; ++i) {
    LabeledGraph g;
    const auto id = static_cast<std::int64_t>(detail::read_u64(in));
    std::string pmu = detail::read_string(in);
    g.label = event_type_from_string(detail::read_string(in));
    g.graph = read_graph(in);
    g.graph.event_id = id;
    g.graph.pmu_id = std::move(pmu);
    out.push_back(std::move(g));
  }
  return out;
}

void write_history_csv(std::ostream& out, const std::vector<EpochStats>& history) {
  out << "epoch,train_loss,train_acc,test_loss,test_acc\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << detail::format_double(h.train_loss) << ',' << detail::format_double(h.train_accuracy)
        << ',' << detail::format_double(h.test_loss) << ',' << detail::format_double(h.test_accuracy) << '\n';
  }
}

}  // namespace pmuev
