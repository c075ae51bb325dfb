#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pmuev/mtf.hpp"
#include "pmuev/neural/adam.hpp"
#include "pmuev/neural/layers.hpp"
#include "pmuev/pmu_data.hpp"

namespace pmuev {

// Block b (1-based) is Conv3x3 -> ReLU -> BatchNorm, optionally followed by a
// 2x2 max-pool and then dropout. The stack ends with SPP, a dense layer and
// softmax.
struct ModelConfig {
  std::size_t input_channels = 2;
  std::vector<std::size_t> filters{32, 32, 64, 64, 128, 128};
  std::size_t kernel = 3;
  std::vector<std::size_t> pool_after{2, 4, 6};
  std::vector<std::size_t> dropout_after{4, 6};
  double dropout_rate = 0.25;
  std::vector<std::size_t> spp_levels{1, 2, 4};
  std::size_t classes = 5;
  // Training input side length; inference accepts any legal size.
  std::size_t canonical_size = 120;
  // Quantile bins the graphs were encoded with; stored so a checkpoint can
  // refuse graphs from a different encoder.
  std::size_t mtf_bins = kDefaultQuantileBins;
  // Multiplier on the He standard deviation of the output layer.
  double output_init_scale = 0.1;

  void validate() const;  // throws ConfigError
  bool operator==(const ModelConfig&) const = default;
};

struct LayerSummary {
  std::string name;
  std::string kind;
  nn::Shape output;
  std::size_t parameters = 0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
};

struct LabeledGraph {
  MtfGraph graph;
  EventType label = EventType::Unknown;
};

class TrainedModel {
 public:
  TrainedModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  nn::Sequential<float>& network() { return net_; }
  const nn::Sequential<float>& network() const { return net_; }

  // Class index <-> event type. Defaults to the EventType order.
  const std::vector<EventType>& labels() const { return labels_; }
  void set_labels(std::vector<EventType> labels);
  std::size_t class_index(EventType type) const;  // InvalidParameterError if absent

  std::vector<EpochStats>& history() { return history_; }
  const std::vector<EpochStats>& history() const { return history_; }

  std::size_t parameter_count() const { return net_.parameter_count(); }
  std::vector<LayerSummary> summary(std::size_t n) const;

  // Smallest graph side the pooling chain can reduce to a map the SPP accepts.
  std::size_t min_input_size() const;

  // Softmax distribution over classes; inference mode throughout.
  std::vector<double> predict(const MtfGraph& graph);
  // One distribution per graph; graphs of equal size are batched together.
  std::vector<std::vector<double>> predict_batch(std::span<const MtfGraph> graphs, std::size_t batch_size = 32);
  std::vector<std::vector<double>> predict_batch(std::span<const MtfGraph* const> graphs,
                                                 std::size_t batch_size = 32);

 private:
  void check_graph(const MtfGraph& graph) const;

  ModelConfig config_;
  std::uint64_t seed_;
  nn::Sequential<float> net_;
  std::vector<EventType> labels_;
  std::vector<EpochStats> history_;
};

TrainedModel build_model(const ModelConfig& config, std::uint64_t seed);

// Index of the largest probability; ties go to the lowest index.
std::size_t argmax_class(std::span<const double> probabilities);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  nn::AdamConfig adam;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 1;
  std::uint64_t shuffle_seed = 2;
  // Cap on test examples scored after each epoch (seeded subset); 0 = all.
  std::size_t history_test_limit = 0;
  std::function<void(const EpochStats&)> on_epoch;
};

// Indices into a dataset. Whole events go to one side, stratified by class.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::int64_t> test_events;  // sorted
};

DatasetSplit split_by_event(std::span<const LabeledGraph> dataset, double test_fraction, std::uint64_t seed);
// Assigns indices whose event id is in test_events to the test side.
DatasetSplit split_from_events(std::span<const LabeledGraph> dataset, std::vector<std::int64_t> test_events);

// Keeps at most `per_event` of the given indices for every event, chosen with a
// seeded shuffle; order of the survivors follows `indices`. 0 keeps all.
std::vector<std::size_t> limit_per_event(std::span<const LabeledGraph> dataset, std::span<const std::size_t> indices,
                                         std::size_t per_event, std::uint64_t seed);

// Mini-batch Adam on mean cross-entropy. Appends one EpochStats per epoch to
// model.history(). A final batch smaller than 2 is skipped.
void train(TrainedModel& model, std::span<const LabeledGraph> dataset, const DatasetSplit& split,
           const TrainConfig& config);
DatasetSplit train(TrainedModel& model, std::span<const LabeledGraph> dataset, const TrainConfig& config);

// Mean loss and accuracy in inference mode over the selected examples.
struct ScoreResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};
ScoreResult score(TrainedModel& model, std::span<const LabeledGraph> dataset, std::span<const std::size_t> indices);

// Binary layout: "PMEV", u32 version, config block, seed, label dictionary,
// history, named tensors (name, rank, dims, float32 data), u32 CRC-32 of all
// preceding bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const TrainedModel& model, std::ostream& out);
// With `expected`, a checkpoint built from any other config raises
// CheckpointError(ConfigMismatch).
TrainedModel load_checkpoint(std::istream& in, const ModelConfig* expected = nullptr);

void save_checkpoint_file(const TrainedModel& model, const std::string& path);
TrainedModel load_checkpoint_file(const std::string& path, const ModelConfig* expected = nullptr);

// Labelled graph bundle: "MTFB", u32 count, then per graph i64 event_id,
// pmu_id and label strings (u32 length + bytes) and one write_graph record.
void write_graph_bundle(std::ostream& out, std::span<const LabeledGraph> graphs);
std::vector<LabeledGraph> read_graph_bundle(std::istream& in);

// epoch,train_loss,train_acc,test_loss,test_acc
void write_history_csv(std::ostream& out, const std::vector<EpochStats>& history);

}  // namespace pmuev
