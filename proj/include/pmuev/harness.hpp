#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmuev/classifier.hpp"
#include "pmuev/preprocess.hpp"

namespace pmuev {

// counts[predicted][true].
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 5);

  void add(std::size_t predicted, std::size_t truth, std::size_t count = 1);

  std::size_t classes() const { return classes_; }
  std::size_t at(std::size_t predicted, std::size_t truth) const { return counts_[predicted * classes_ + truth]; }
  std::size_t total() const;
  std::size_t row_sum(std::size_t predicted) const;
  std::size_t column_sum(std::size_t truth) const;

  // 0 when the denominator is 0.
  double precision(std::size_t c) const;
  double recall(std::size_t c) const;
  double accuracy() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

struct EvaluationResult {
  ConfusionMatrix matrix;
  std::vector<std::size_t> predictions;  // per example, class index
  std::vector<std::size_t> truths;
};

// Argmax predictions over the whole set; an empty set raises
// InvalidParameterError.
EvaluationResult evaluate(TrainedModel& model, std::span<const LabeledGraph> testset);
EvaluationResult evaluate(TrainedModel& model, std::span<const LabeledGraph* const> testset);

// Modal class if its share of the votes exceeds `threshold`; ties between modal
// classes go to the lowest index.
std::optional<std::size_t> system_level_vote(std::span<const std::size_t> predictions, double threshold = 0.9);

struct SystemLevelResult {
  std::size_t events = 0;
  std::size_t identified = 0;  // vote cleared the threshold
  std::size_t correct = 0;     // identified and equal to the true class
  double accuracy() const { return events == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(events); }
};

// Groups per-window predictions by event id and votes within each event.
SystemLevelResult system_level_accuracy(std::span<const std::int64_t> event_ids,
                                        std::span<const std::size_t> predictions,
                                        std::span<const std::size_t> truths, double threshold = 0.9);

enum class RemovalMode : std::uint8_t { Delete, ImputeLinear };

struct SensitivityOptions {
  std::vector<double> fractions{0.0, 0.05, 0.10};
  std::size_t trials = 20;
  std::uint64_t seed = 11;
  std::size_t mtf_bins = kDefaultQuantileBins;
  RemovalMode mode = RemovalMode::Delete;
};

struct SensitivityPoint {
  double fraction = 0.0;
  std::size_t removed = 0;  // samples removed per window
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation over trials
  std::size_t trials = 0;
  bool skipped = false;
  std::string note;
};

struct SensitivityCurve {
  std::vector<SensitivityPoint> points;
};

// For every trial, each window loses one consecutive run of
// round(fraction * n) samples at a seeded random position; the shortened
// series are re-encoded and classified at their new size. Fractions that leave
// fewer samples than the model accepts are reported as skipped.
SensitivityCurve sensitivity_study(TrainedModel& model, std::span<const EventWindow> windows,
                                   const SensitivityOptions& options);

// Removes samples [start, start + length) from both channels, or with
// ImputeLinear replaces them by linear interpolation from their neighbours.
EventWindow remove_run(const EventWindow& window, std::size_t start, std::size_t length, RemovalMode mode);

// Text report: matrix, per-class precision/recall, overall and system-level
// accuracy. Deterministic for a given input.
void write_report(std::ostream& out, const ConfusionMatrix& matrix, std::span<const EventType> labels,
                  const std::optional<SystemLevelResult>& system = std::nullopt);
// predicted,true,count for every cell.
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& matrix, std::span<const EventType> labels);
// fraction,removed,mean_accuracy,std_accuracy,trials,skipped
void write_sensitivity_csv(std::ostream& out, const SensitivityCurve& curve);

}  // namespace pmuev
