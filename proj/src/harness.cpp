#include "pmuev/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <random>

#include "pmuev/errors.hpp"
#include "pmuev/synthetic.hpp"
#include "text_util.hpp"

namespace pmuev {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw InvalidParameterError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t predicted, std::size_t truth, std::size_t count) {
  if (predicted >= classes_ || truth >= classes_) throw OutOfRangeError("confusion matrix: class index out of range");
  counts_[predicted * classes_ + truth] += count;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::size_t ConfusionMatrix::row_sum(std::size_t predicted) const {
  std::size_t t = 0;
  for (std::size_t j = 0; j < classes_; ++j) t += at(predicted, j);
  return t;
}

std::size_t ConfusionMatrix::column_sum(std::size_t truth) const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < classes_; ++i) t += at(i, truth);
  return t;
}

double ConfusionMatrix::precision(std::size_t c) const {
  const std::size_t r = row_sum(c);
  return r == 0 ? 0.0 : static_cast<double>(at(c, c)) / static_cast<double>(r);
}

double ConfusionMatrix::recall(std::size_t c) const {
  const std::size_t s = column_sum(c);
  return s == 0 ? 0.0 : static_cast<double>(at(c, c)) / static_cast<double>(s);
}

double ConfusionMatrix::accuracy() const {
  const std::size_t t = total();
  if (t == 0) return 0.0;
  std::size_t d = 0;
  for (std::size_t c = 0; c < classes_; ++c) d += at(c, c);
  return static_cast<double>(d) / static_cast<double>(t);
}

EvaluationResult evaluate(TrainedModel& model, std::span<const LabeledGraph> testset) {
  std::vector<const LabeledGraph*> ptrs;
  ptrs.reserve(testset.size());
  for (const auto& ex : testset) ptrs.push_back(&ex);
  return evaluate(model, std::span<const LabeledGraph* const>(ptrs));
}

EvaluationResult evaluate(TrainedModel& model, std::span<const LabeledGraph* const> testset) {
  if (testset.empty()) throw InvalidParameterError("evaluate: empty test set");
  std::vector<const MtfGraph*> graphs;
  graphs.reserve(testset.size());
  EvaluationResult r{ConfusionMatrix(model.config().classes), {}, {}};
  for (const auto* ex : testset) {
    graphs.push_back(&ex->graph);
    r.truths.push_back(model.class_index(ex->label));
  }
  const auto probs = model.predict_batch(std::span<const MtfGraph* const>(graphs));
  for (std::size_t i = 0; i < probs.size(); ++i) {
    r.predictions.push_back(argmax_class(probs[i]));
    r.matrix.add(r.predictions.back(), r.truths[i]);
  }
  return r;
}

std::optional<std::size_t> system_level_vote(std::span<const std::size_t> predictions, double threshold) {
  if (predictions.empty()) throw InvalidParameterError("system vote: no predictions");
  std::map<std::size_t, std::size_t> counts;
  for (auto p : predictions) ++counts[p];
  std::size_t best = 0, best_count = 0;
  for (const auto& [cls, n] : counts) {
    if (n > best_count) {
      best = cls;
      best_count = n;
    }
  }
  const double share = static_cast<double>(best_count) / static_cast<double>(predictions.size());
  if (share > threshold) return best;
  return std::nullopt;
}

SystemLevelResult system_level_accuracy(std::span<const std::int64_t> event_ids,
                                        std::span<const std::size_t> predictions,
                                        std::span<const std::size_t> truths, double threshold) {
  if (event_ids.size() != predictions.size() || truths.size() != predictions.size()) {
    throw ShapeError("system accuracy: input lengths differ");
  }
  std::map<std::int64_t, std::vector<std::size_t>> by_event;
  std::map<std::int64_t, std::size_t> truth;
  for (std::size_t i = 0; i < event_ids.size(); ++i) {
    by_event[event_ids[i]].push_back(predictions[i]);
    auto [it, inserted] = truth.emplace(event_ids[i], truths[i]);
    if (!inserted && it->second != truths[i]) {
      throw InvalidParameterError("system accuracy: event " + std::to_string(event_ids[i]) + " has mixed labels");
    }
  }
  SystemLevelResult r;
  for (const auto& [id, preds] : by_event) {
    ++r.events;
    auto vote = system_level_vote(preds, threshold);
    if (!vote) continue;
    ++r.identified;
    if (*vote == truth[id]) ++r.correct;
  }
  return r;
}

EventWindow remove_run(const EventWindow& window, std::size_t start, std::size_t length, RemovalMode mode) {
  const std::size_t n = window.size();
  if (start + length > n) throw OutOfRangeError("remove_run: run extends past the window");
  EventWindow out = window;
  if (length == 0) return out;
  if (mode == RemovalMode::Delete) {
    auto cut = [&](std::vector<double>& v) {
      v.erase(v.begin() + static_cast<std::ptrdiff_t>(start), v.begin() + static_cast<std::ptrdiff_t>(start + length));
    };
    cut(out.samples_v);
    cut(out.samples_f);
    return out;
  }
  std::vector<std::uint8_t> bad(n, 0);
  std::fill(bad.begin() + static_cast<std::ptrdiff_t>(start), bad.begin() + static_cast<std::ptrdiff_t>(start + length), 1);
  if (!interpolate_flagged(out.samples_v, bad) || !interpolate_flagged(out.samples_f, bad)) {
    throw InsufficientDataError("remove_run: nothing left to interpolate from");
  }
  return out;
}

SensitivityCurve sensitivity_study(TrainedModel& model, std::span<const EventWindow> windows,
                                   const SensitivityOptions& options) {
  if (windows.empty()) throw InvalidParameterError("sensitivity: empty test set");
  if (options.trials == 0) throw InvalidParameterError("sensitivity: trials must be positive");
  for (double f : options.fractions) {
    if (!(f >= 0.0 && f <= 0.5)) throw InvalidParameterError("sensitivity: fractions must lie in [0, 0.5]");
  }
  if (!std::is_sorted(options.fractions.begin(), options.fractions.end())) {
    throw InvalidParameterError("sensitivity: fractions must be sorted ascending");
  }

  auto accuracy_of = [&](const std::vector<EventWindow>& ws) {
    std::vector<LabeledGraph> set;
    set.reserve(ws.size());
    for (const auto& w : ws) set.push_back({encode_window(w, options.mtf_bins), w.label});
    return evaluate(model, std::span<const LabeledGraph>(set)).matrix.accuracy();
  };

  SensitivityCurve curve;
  for (std::size_t fi = 0; fi < options.fractions.size(); ++fi) {
    const double fraction = options.fractions[fi];
    SensitivityPoint pt;
    pt.fraction = fraction;
    const std::size_t n = windows.front().size();
    pt.removed = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    const std::size_t remaining = options.mode == RemovalMode::Delete ? n - pt.removed : n;
    if (remaining < model.min_input_size() || remaining < options.mtf_bins) {
      pt.skipped = true;
      pt.note = "only " + std::to_string(remaining) + " samples remain; model minimum is " +
                std::to_string(model.min_input_size());
      curve.points.push_back(pt);
      continue;
    }
    std::vector<double> acc;
    if (pt.removed == 0) {
      // every trial would see the same windows
      pt.mean_accuracy = accuracy_of(std::vector<EventWindow>(windows.begin(), windows.end()));
      pt.trials = options.trials;
      curve.points.push_back(pt);
      continue;
    }
    for (std::size_t t = 0; t < options.trials; ++t) {
      std::mt19937_64 rng(event_seed(options.seed + fi, static_cast<std::int64_t>(t)));
      std::vector<EventWindow> cut;
      cut.reserve(windows.size());
      for (const auto& w : windows) {
        if (w.size() < pt.removed) throw ShapeError("sensitivity: window shorter than the removed run");
        std::uniform_int_distribution<std::size_t> pos(0, w.size() - pt.removed);
        cut.push_back(remove_run(w, pos(rng), pt.removed, options.mode));
      }
      acc.push_back(accuracy_of(cut));
    }
    double mean = 0.0;
    for (double a : acc) mean += a;
    mean /= static_cast<double>(acc.size());
    double var = 0.0;
    for (double a : acc) var += (a - mean) * (a - mean);
    pt.mean_accuracy = mean;
    pt.std_accuracy = acc.size() > 1 ? std::sqrt(var / static_cast<double>(acc.size() - 1)) : 0.0;
    pt.trials = acc.size();
    curve.points.push_back(pt);
  }
  return curve;
}

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string label_name(std::span<const EventType> labels, std::size_t i) {
  return i < labels.size() ? std::string(to_string(labels[i])) : "class" + std::to_string(i);
}

}  // namespace

void write_report(std::ostream& out, const ConfusionMatrix& m, std::span<const EventType> labels,
                  const std::optional<SystemLevelResult>& system) {
  const std::size_t k = m.classes();
  out << "confusion matrix (rows = predicted, columns = true)\n";
  out << "predicted\\true";
  for (std::size_t j = 0; j < k; ++j) out << ',' << label_name(labels, j);
  out << '\n';
  for (std::size_t i = 0; i < k; ++i) {
    out << label_name(labels, i);
    for (std::size_t j = 0; j < k; ++j) out << ',' << m.at(i, j);
    out << '\n';
  }
  out << "\nclass,precision,recall\n";
  for (std::size_t c = 0; c < k; ++c) out << label_name(labels, c) << ',' << fixed4(m.precision(c)) << ',' << fixed4(m.recall(c)) << '\n';
  std::size_t diag = 0;
  for (std::size_t c = 0; c < k; ++c) diag += m.at(c, c);
  out << "\naccuracy," << fixed4(m.accuracy()) << ',' << diag << '/' << m.total() << '\n';
  if (system) {
    out << "system_level_accuracy," << fixed4(system->accuracy()) << ',' << system->correct << '/' << system->events
        << '\n';
    out << "system_level_identified," << system->identified << '/' << system->events << '\n';
  }
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& m, std::span<const EventType> labels) {
  out << "predicted,true,count\n";
  for (std::size_t i = 0; i < m.classes(); ++i) {
    for (std::size_t j = 0; j < m.classes(); ++j) {
      out << label_name(labels, i) << ',' << label_name(labels, j) << ',' << m.at(i, j) << '\n';
    }
  }
}

void write_sensitivity_csv(std::ostream& out, const SensitivityCurve& curve) {
  out << "fraction,removed,mean_accuracy,std_accuracy,trials,skipped\n";
  for (const auto& p : curve.points) {
    out << detail::format_double(p.fraction) << ',' << p.removed << ',' << detail::format_double(p.mean_accuracy)
        << ',' << detail::format_double(p.std_accuracy) << ',' << p.trials << ',' << (p.skipped ? 1 : 0) << '\n';
  }
}

}  // namespace pmuev
