#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "generators.hpp"
#include "pmuev/errors.hpp"
#include "pmuev/harness.hpp"

using namespace pmuev;

namespace {

const std::vector<EventType> kLabels{EventType::LineOutage, EventType::XfmrOutage, EventType::FrequencyEvent,
                                     EventType::OscillationEvent, EventType::Normal};

ModelConfig small_config() {
  ModelConfig c;
  c.filters = {4, 4, 8, 8, 8, 8};
  c.canonical_size = 32;
  return c;
}

std::vector<EventWindow> random_windows(std::size_t count, std::size_t n, std::uint64_t seed) {
  testgen::Gen g(seed);
  std::vector<EventWindow> out;
  for (std::size_t i = 0; i < count; ++i) {
    EventWindow w;
    w.event_id = static_cast<std::int64_t>(i / 3);
    w.label = kLabels[i % 5];
    w.samples_v = g.series(n);
    w.samples_f = g.gaussian(n);
    out.push_back(std::move(w));
  }
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Confusion, PerfectPredictor) {
  ConfusionMatrix m;
  for (std::size_t c = 0; c < 5; ++c) m.add(c, c, 10);
  EXPECT_EQ(m.accuracy(), 1.0);
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_EQ(m.precision(c), 1.0);
    EXPECT_EQ(m.recall(c), 1.0);
  }
}

TEST(Confusion, ConstantPredictor) {
  ConfusionMatrix m;
  for (std::size_t t = 0; t < 5; ++t) m.add(2, t, 10);
  EXPECT_DOUBLE_EQ(m.accuracy(), 0.2);
  EXPECT_DOUBLE_EQ(m.precision(2), 0.2);
  EXPECT_EQ(m.recall(2), 1.0);
  EXPECT_EQ(m.precision(0), 0.0);
  EXPECT_EQ(m.recall(0), 0.0);
}

TEST(Confusion, RecountProperty) {
  testgen::for_all(200, 1, [](testgen::Gen& g, std::size_t) {
    ConfusionMatrix m;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    const std::size_t n = g.index(1, 200);
    for (std::size_t i = 0; i < n; ++i) {
      pairs.emplace_back(g.index(0, 4), g.index(0, 4));
      m.add(pairs.back().first, pairs.back().second);
    }
    EXPECT_EQ(m.total(), n);
    std::size_t row_total = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      std::size_t tp = 0, pred = 0, truth = 0;
      for (auto [p, t] : pairs) {
        tp += (p == c && t == c);
        pred += (p == c);
        truth += (t == c);
      }
      EXPECT_EQ(m.row_sum(c), pred);
      EXPECT_EQ(m.column_sum(c), truth);
      row_total += m.row_sum(c);
      EXPECT_EQ(m.precision(c), pred ? static_cast<double>(tp) / pred : 0.0);
      EXPECT_EQ(m.recall(c), truth ? static_cast<double>(tp) / truth : 0.0);
    }
    EXPECT_EQ(row_total, n);
  });
}

TEST(Confusion, OutOfRangeClass) {
  ConfusionMatrix m;
  EXPECT_THROW(m.add(5, 0), OutOfRangeError);
}

TEST(Votes, Threshold) {
  std::vector<std::size_t> p(43, 1);
  for (std::size_t i = 0; i < 3; ++i) p[i] = 0;
  EXPECT_EQ(system_level_vote(p, 0.9), std::optional<std::size_t>(1));
  for (std::size_t i = 0; i < 5; ++i) p[i] = 0;
  EXPECT_EQ(system_level_vote(p, 0.9), std::nullopt);
  EXPECT_EQ(system_level_vote(p, 0.5), std::optional<std::size_t>(1));
  EXPECT_THROW(system_level_vote(std::vector<std::size_t>{}, 0.9), InvalidParameterError);
}

TEST(Votes, TieGoesToLowerClass) {
  const std::vector<std::size_t> p{3, 1, 3, 1};
  EXPECT_EQ(system_level_vote(p, 0.4), std::optional<std::size_t>(1));
  EXPECT_EQ(system_level_vote(p, 0.5), std::nullopt);
}

TEST(Votes, PermutationInvariant) {
  testgen::for_all(200, 2, [](testgen::Gen& g, std::size_t) {
    std::vector<std::size_t> p(g.index(1, 60));
    for (auto& v : p) v = g.coin(0.8) ? 2 : g.index(0, 4);
    const double th = g.uniform(0.3, 0.95);
    const auto before = system_level_vote(p, th);
    std::shuffle(p.begin(), p.end(), g.rng());
    EXPECT_EQ(system_level_vote(p, th), before);
  });
}

TEST(SystemLevel, GroupsByEvent) {
  const std::vector<std::int64_t> ev{0, 0, 0, 1, 1, 1, 2, 2, 2};
  const std::vector<std::size_t> pred{1, 1, 1, 2, 2, 0, 4, 4, 4};
  const std::vector<std::size_t> truth{1, 1, 1, 2, 2, 2, 3, 3, 3};
  const auto r = system_level_accuracy(ev, pred, truth, 0.9);
  EXPECT_EQ(r.events, 3u);
  EXPECT_EQ(r.identified, 2u);
  EXPECT_EQ(r.correct, 1u);
  EXPECT_DOUBLE_EQ(r.accuracy(), 1.0 / 3.0);
  EXPECT_THROW(system_level_accuracy(ev, std::vector<std::size_t>{1}, truth), ShapeError);
}

TEST(RemoveRun, DeleteAndImpute) {
  EventWindow w;
  w.samples_v = {0, 1, 2, 3, 4, 5};
  w.samples_f = {5, 4, 3, 2, 1, 0};
  const auto d = remove_run(w, 2, 2, RemovalMode::Delete);
  EXPECT_EQ(d.samples_v, (std::vector<double>{0, 1, 4, 5}));
  EXPECT_EQ(d.samples_f, (std::vector<double>{5, 4, 1, 0}));
  EventWindow bent = w;
  bent.samples_v = {0, 1, 9, 9, 4, 5};
  const auto i = remove_run(bent, 2, 2, RemovalMode::ImputeLinear);
  EXPECT_EQ(i.samples_v, (std::vector<double>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(remove_run(w, 0, 0, RemovalMode::Delete).samples_v, w.samples_v);
  EXPECT_THROW(remove_run(w, 5, 2, RemovalMode::Delete), OutOfRangeError);
}

TEST(Evaluate, MatchesArgmax) {
  TrainedModel m = build_model(small_config(), 3);
  const auto ws = random_windows(12, 40, 3);
  std::vector<LabeledGraph> set;
  for (const auto& w : ws) set.push_back({encode_window(w), w.label});
  const auto r = evaluate(m, set);
  ASSERT_EQ(r.predictions.size(), 12u);
  EXPECT_EQ(r.matrix.total(), 12u);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(r.predictions[i], argmax_class(m.predict(set[i].graph)));
    EXPECT_EQ(r.truths[i], m.class_index(set[i].label));
  }
  EXPECT_THROW(evaluate(m, std::vector<LabeledGraph>{}), InvalidParameterError);
}

TEST(Sensitivity, ZeroFractionEqualsPlainEvaluation) {
  TrainedModel m = build_model(small_config(), 4);
  const auto ws = random_windows(15, 60, 4);
  std::vector<LabeledGraph> set;
  for (const auto& w : ws) set.push_back({encode_window(w), w.label});
  const double plain = evaluate(m, set).matrix.accuracy();
  SensitivityOptions o;
  o.fractions = {0.0};
  o.trials = 3;
  const auto c = sensitivity_study(m, ws, o);
  ASSERT_EQ(c.points.size(), 1u);
  EXPECT_EQ(c.points[0].mean_accuracy, plain);
  EXPECT_EQ(c.points[0].std_accuracy, 0.0);
  EXPECT_EQ(c.points[0].removed, 0u);
}

TEST(Sensitivity, DeterministicAndSkipsShortWindows) {
  TrainedModel m = build_model(small_config(), 5);
  const auto ws = random_windows(10, 40, 5);
  SensitivityOptions o;
  o.fractions = {0.0, 0.1, 0.5};
  o.trials = 4;
  const auto a = sensitivity_study(m, ws, o);
  const auto b = sensitivity_study(m, ws, o);
  ASSERT_EQ(a.points.size(), 3u);
  EXPECT_EQ(a.points[1].removed, 4u);
  EXPECT_EQ(a.points[1].trials, 4u);
  EXPECT_EQ(a.points[1].mean_accuracy, b.points[1].mean_accuracy);
  EXPECT_EQ(a.points[1].std_accuracy, b.points[1].std_accuracy);
  EXPECT_FALSE(a.points[1].skipped);
  EXPECT_TRUE(a.points[2].skipped);
  EXPECT_FALSE(a.points[2].note.empty());
  o.mode = RemovalMode::ImputeLinear;
  EXPECT_FALSE(sensitivity_study(m, ws, o).points[2].skipped);
}

TEST(Sensitivity, InvalidOptions) {
  TrainedModel m = build_model(small_config(), 6);
  const auto ws = random_windows(5, 40, 6);
  SensitivityOptions o;
  o.fractions = {0.1, 0.0};
  EXPECT_THROW(sensitivity_study(m, ws, o), InvalidParameterError);
  o.fractions = {0.6};
  EXPECT_THROW(sensitivity_study(m, ws, o), InvalidParameterError);
  o = SensitivityOptions{};
  o.trials = 0;
  EXPECT_THROW(sensitivity_study(m, ws, o), InvalidParameterError);
  EXPECT_THROW(sensitivity_study(m, std::vector<EventWindow>{}, SensitivityOptions{}), InvalidParameterError);
}

TEST(Report, Golden) {
  ConfusionMatrix m;
  const std::size_t cells[5][5] = {{8, 1, 0, 0, 0}, {2, 9, 0, 0, 0}, {0, 0, 10, 1, 0}, {0, 0, 0, 7, 0}, {0, 0, 0, 2, 10}};
  for (std::size_t p = 0; p < 5; ++p) {
    for (std::size_t t = 0; t < 5; ++t) m.add(p, t, cells[p][t]);
  }
  SystemLevelResult sys;
  sys.events = 10;
  sys.identified = 9;
  sys.correct = 8;
  std::ostringstream out;
  write_report(out, m, kLabels, sys);
  EXPECT_EQ(out.str(), slurp(std::string(PMUEV_TEST_DATA) + "/report_golden.txt"));
}

TEST(Report, ConfusionCsv) {
  ConfusionMatrix m(2);
  m.add(0, 1, 3);
  std::ostringstream out;
  write_confusion_csv(out, m, std::vector<EventType>{EventType::Normal, EventType::LineOutage});
  EXPECT_EQ(out.str(), "predicted,true,count\nNormal,Normal,0\nNormal,LineOutage,3\nLineOutage,Normal,0\nLineOutage,LineOutage,0\n");
}

TEST(Report, SensitivityCsv) {
  SensitivityCurve c;
  c.points.push_back({0.05, 6, 0.75, 0.125, 20, false, ""});
  std::ostringstream out;
  write_sensitivity_csv(out, c);
  EXPECT_EQ(out.str(), "fraction,removed,mean_accuracy,std_accuracy,trials,skipped\n0.05,6,0.75,0.125,20,0\n");
}
