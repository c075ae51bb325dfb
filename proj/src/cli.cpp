#include "pmuev/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "pmuev/classifier.hpp"
#include "pmuev/errors.hpp"
#include "pmuev/harness.hpp"
#include "pmuev/mtf.hpp"
#include "pmuev/pmu_data.hpp"
#include "pmuev/preprocess.hpp"
#include "pmuev/synthetic.hpp"
#include "text_util.hpp"

namespace pmuev {

namespace {

namespace fs = std::filesystem;

const std::set<std::string> kConfigKeys{"seed", "q",  "spp_levels", "dropout", "batch_size", "epochs",
                                        "lr",   "beta1", "beta2",   "eps",     "pmu_count",  "noise_sigma"};

using ConfigMap = std::map<std::string, std::string>;

class IoError : public Error {
 public:
  using Error::Error;
};

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

void close_checked(std::ofstream& out, const std::string& path) {
  out.close();
  if (!out) throw IoError("write failed: " + path);
}

ConfigMap read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  ConfigMap cfg;
  std::string line;
  std::size_t lineno = 0;
  while (detail::getline_stripped(in, line)) {
    ++lineno;
    auto text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key(detail::trim(text.substr(0, eq)));
    std::string value(detail::trim(text.substr(eq + 1)));
    if (!kConfigKeys.count(key)) throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    cfg[key] = value;
  }
  return cfg;
}

template <typename T>
T convert(const std::string& key, const std::string& text) {
  if constexpr (std::is_floating_point_v<T>) {
    if (auto v = detail::parse_double(text)) return static_cast<T>(*v);
  } else {
    if (auto v = detail::parse_int<T>(text)) return *v;
  }
  throw ConfigError("config key '" + key + "': bad value '" + text + "'");
}

template <typename T>
std::vector<T> convert_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ',')) out.push_back(convert<T>(key, std::string(detail::trim(item))));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

// Config values fill only options the command line left unset.
struct ConfigApplier {
  const ConfigMap& cfg;

  template <typename T>
  void operator()(const CLI::Option* opt, const char* key, T& value) const {
    auto it = cfg.find(key);
    if (it == cfg.end() || opt->count() > 0) return;
    if constexpr (requires { value.push_back(value.front()); }) {
      value = convert_list<typename T::value_type>(key, it->second);
    } else {
      value = convert<T>(key, it->second);
    }
  }
};

std::vector<std::int64_t> read_event_ids(const std::string& path) {
  auto in = open_in(path);
  std::vector<std::int64_t> ids;
  std::string line;
  std::size_t lineno = 0;
  while (detail::getline_stripped(in, line)) {
    ++lineno;
    auto t = detail::trim(line);
    if (t.empty() || (lineno == 1 && t == "event_id")) continue;
    auto v = detail::parse_int<std::int64_t>(t);
    if (!v) throw ParseError(lineno, "bad event id '" + std::string(t) + "'");
    ids.push_back(*v);
  }
  return ids;
}

void write_event_ids(const std::string& path, std::span<const std::int64_t> ids) {
  auto out = open_out(path);
  out << "event_id\n";
  for (auto id : ids) out << id << '\n';
  close_checked(out, path);
}

std::vector<LabeledGraph> load_bundle(const std::string& path) {
  auto in = open_in(path, true);
  return read_graph_bundle(in);
}

std::vector<EventWindow> load_windows(const std::string& path) {
  auto in = open_in(path);
  return read_windows_csv(in);
}

template <typename Item, typename IdOf>
std::vector<const Item*> select_events(std::span<const Item> items, const std::string& split_path, IdOf id_of) {
  std::vector<const Item*> out;
  if (split_path.empty()) {
    for (const auto& x : items) out.push_back(&x);
    return out;
  }
  const auto ids = read_event_ids(split_path);
  const std::set<std::int64_t> keep(ids.begin(), ids.end());
  for (const auto& x : items) {
    if (keep.count(id_of(x))) out.push_back(&x);
  }
  if (out.empty()) throw InsufficientDataError("no examples belong to the events listed in " + split_path);
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---- synth

struct SynthArgs {
  std::size_t per_class = 50;
  std::uint64_t seed = 7;
  std::string out_dir;
  std::size_t pmu_count = 43;
  double noise_sigma = 0.001;
  int rate = 60;
  double missing_fraction = 0.0;
  std::size_t min_run = 1;
  std::size_t max_run = 1;
  double spike_probability = 0.0;
  double status_probability = 0.0;
  std::size_t signal_events = 0;
};

int run_synth(const SynthArgs& a, std::ostream& out) {
  DatasetOptions o;
  o.events_per_class = a.per_class;
  o.seed = a.seed;
  o.scenario.pmu_count = a.pmu_count;
  o.scenario.noise_sigma = a.noise_sigma;
  o.scenario.sample_rate_hz = a.rate;
  o.scenario.validate();
  o.encode = false;
  if (a.missing_fraction > 0.0 || a.spike_probability > 0.0 || a.status_probability > 0.0) {
    o.defects = DefectSpec{a.missing_fraction, a.min_run, a.max_run, a.spike_probability, 10.0, a.status_probability};
  }
  const SyntheticDataset ds = build_dataset(o);

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  {
    const auto p = (dir / "windows.csv").string();
    auto f = open_out(p);
    write_windows_csv(f, ds.windows);
    close_checked(f, p);
  }
  std::vector<EventLogEntry> logs;
  for (const auto& e : ds.events) logs.push_back(e.log);
  {
    const auto p = (dir / "events.csv").string();
    auto f = open_out(p);
    write_event_log(f, logs);
    close_checked(f, p);
  }
  {
    const auto p = (dir / "ground_truth.csv").string();
    auto f = open_out(p);
    f << "event_id,event_type,true_onset,frame_anchor\n";
    for (const auto& e : ds.events) {
      f << e.event_id << ',' << to_string(e.event_type) << ',' << format_iso8601(e.true_onset) << ','
        << format_iso8601(e.located_onset) << '\n';
    }
    close_checked(f, p);
  }
  const std::size_t nsig = std::min(a.signal_events, ds.events.size());
  if (nsig > 0) {
    fs::create_directories(dir / "signals");
    for (std::size_t i = 0; i < nsig; ++i) {
      const auto ev = dataset_event(o, static_cast<std::int64_t>(i));
      const auto p = (dir / "signals" / ("event_" + std::to_string(i) + ".csv")).string();
      auto f = open_out(p);
      write_signal_csv(f, ev.series);
      close_checked(f, p);
      const auto lp = (dir / "signals" / ("event_" + std::to_string(i) + "_log.csv")).string();
      auto lf = open_out(lp);
      write_event_log(lf, std::span<const EventLogEntry>(&ev.log, 1));
      close_checked(lf, lp);
    }
  }
  out << "events " << ds.events.size() << " windows " << ds.windows.size() << " rejected " << ds.rejected << '\n';
  return kExitOk;
}

// ---- encode

int run_encode(const std::string& windows_path, const std::string& out_path, std::size_t q, std::ostream& out) {
  const auto windows = load_windows(windows_path);
  std::vector<LabeledGraph> graphs;
  graphs.reserve(windows.size());
  for (const auto& w : windows) graphs.push_back({encode_window(w, q), w.label});
  auto f = open_out(out_path, true);
  write_graph_bundle(f, graphs);
  close_checked(f, out_path);
  out << "graphs " << graphs.size() << " q " << q << '\n';
  return kExitOk;
}

// ---- train

struct TrainArgs {
  std::string graphs;
  std::string out;
  std::string history;
  std::string split_out;
  std::string split_in;
  std::uint64_t seed = 1;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double dropout = 0.25;
  std::vector<std::size_t> spp_levels{1, 2, 4};
  double test_fraction = 0.2;
  std::size_t max_per_event = 0;
  std::size_t monitor = 0;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  const auto data = load_bundle(a.graphs);
  if (data.empty()) throw DegenerateDatasetError("train: no graphs in " + a.graphs);
  ModelConfig mc;
  mc.dropout_rate = a.dropout;
  mc.spp_levels = a.spp_levels;
  mc.mtf_bins = data.front().graph.q;
  TrainedModel model = build_model(mc, a.seed);

  DatasetSplit split = a.split_in.empty() ? split_by_event(data, a.test_fraction, a.seed)
                                          : split_from_events(data, read_event_ids(a.split_in));
  split.train = limit_per_event(data, split.train, a.max_per_event, a.seed);

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.adam = nn::AdamConfig{a.lr, a.beta1, a.beta2, a.eps};
  tc.split_seed = a.seed;
  tc.shuffle_seed = a.seed + 1;
  tc.history_test_limit = a.monitor;
  tc.on_epoch = [&out](const EpochStats& s) {
    out << "epoch " << s.epoch << " train_loss " << fixed(s.train_loss, 4) << " train_acc " << fixed(s.train_accuracy, 4)
        << " test_loss " << fixed(s.test_loss, 4) << " test_acc " << fixed(s.test_accuracy, 4) << std::endl;
  };
  out << "train " << split.train.size() << " test " << split.test.size() << " events " << split.test_events.size()
      << '\n';
  train(model, data, split, tc);

  save_checkpoint_file(model, a.out);
  if (!a.history.empty()) {
    auto f = open_out(a.history);
    write_history_csv(f, model.history());
    close_checked(f, a.history);
  }
  if (!a.split_out.empty()) write_event_ids(a.split_out, split.test_events);
  return kExitOk;
}

// ---- eval

struct EvalArgs {
  std::string model;
  std::string graphs;
  std::string split;
  std::string report;
  std::string confusion;
  double threshold = 0.9;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
  TrainedModel model = load_checkpoint_file(a.model);
  const auto data = load_bundle(a.graphs);
  const auto subset =
      select_events(std::span<const LabeledGraph>(data), a.split, [](const LabeledGraph& g) { return g.graph.event_id; });
  const EvaluationResult res = evaluate(model, std::span<const LabeledGraph* const>(subset));
  std::vector<std::int64_t> ids;
  ids.reserve(subset.size());
  for (const auto* g : subset) ids.push_back(g->graph.event_id);
  const SystemLevelResult sys = system_level_accuracy(ids, res.predictions, res.truths, a.threshold);

  if (a.report.empty()) {
    write_report(out, res.matrix, model.labels(), sys);
  } else {
    auto f = open_out(a.report);
    write_report(f, res.matrix, model.labels(), sys);
    close_checked(f, a.report);
    out << "accuracy " << fixed(res.matrix.accuracy(), 4) << " system_level_accuracy " << fixed(sys.accuracy(), 4)
        << '\n';
  }
  if (!a.confusion.empty()) {
    auto f = open_out(a.confusion);
    write_confusion_csv(f, res.matrix, model.labels());
    close_checked(f, a.confusion);
  }
  return kExitOk;
}

// ---- predict

int run_predict(const std::string& model_path, const std::string& windows_path, std::size_t index, std::ostream& out) {
  TrainedModel model = load_checkpoint_file(model_path);
  const auto windows = load_windows(windows_path);
  if (index >= windows.size()) {
    throw OutOfRangeError("predict: index " + std::to_string(index) + " but only " + std::to_string(windows.size()) +
                          " windows");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const MtfGraph g = encode_window(windows[index], model.config().mtf_bins);
  const auto probs = model.predict(g);
  const auto t1 = std::chrono::steady_clock::now();
  const auto labels = model.labels();
  out << "class,probability\n";
  for (std::size_t c = 0; c < probs.size(); ++c) {
    out << (c < labels.size() ? std::string(to_string(labels[c])) : "class" + std::to_string(c)) << ','
        << fixed(probs[c], 6) << '\n';
  }
  const std::size_t best = argmax_class(probs);
  out << "predicted," << (best < labels.size() ? std::string(to_string(labels[best])) : std::to_string(best)) << '\n';
  out << "latency_ms," << fixed(std::chrono::duration<double, std::milli>(t1 - t0).count(), 3) << '\n';
  return kExitOk;
}

// ---- sensitivity

struct SensitivityArgs {
  std::string model;
  std::string windows;
  std::string split;
  std::string out;
  std::vector<double> fractions{0.0, 0.05, 0.10};
  std::size_t trials = 20;
  std::uint64_t seed = 11;
  std::string impute = "none";
};

int run_sensitivity(const SensitivityArgs& a, std::ostream& out, std::ostream& err) {
  TrainedModel model = load_checkpoint_file(a.model);
  const auto windows = load_windows(a.windows);
  const auto subset =
      select_events(std::span<const EventWindow>(windows), a.split, [](const EventWindow& w) { return w.event_id; });
  std::vector<EventWindow> test;
  test.reserve(subset.size());
  for (const auto* w : subset) test.push_back(*w);

  SensitivityOptions o;
  o.fractions = a.fractions;
  o.trials = a.trials;
  o.seed = a.seed;
  o.mtf_bins = model.config().mtf_bins;
  o.mode = a.impute == "linear" ? RemovalMode::ImputeLinear : RemovalMode::Delete;
  const SensitivityCurve curve = sensitivity_study(model, test, o);
  for (const auto& p : curve.points) {
    if (p.skipped) err << "warning: fraction " << detail::format_double(p.fraction) << " skipped: " << p.note << '\n';
  }
  if (a.out.empty()) {
    write_sensitivity_csv(out, curve);
  } else {
    auto f = open_out(a.out);
    write_sensitivity_csv(f, curve);
    close_checked(f, a.out);
  }
  return kExitOk;
}

// ---- quality

int run_quality(const std::vector<std::string>& signal_paths, const std::string& out_path,
                const std::vector<double>& fraction_grid, const std::vector<double>& gap_grid, std::ostream& out) {
  std::vector<PmuSeries> all;
  for (const auto& p : signal_paths) {
    auto in = open_in(p);
    auto s = parse_signal_csv(in);
    all.insert(all.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  const QualityStats stats = compute_quality_stats(all);
  const auto missing = survival_function(stats, fraction_grid);
  const auto gaps = gap_survival_function(stats, gap_grid);
  auto write = [&](std::ostream& o) {
    o << "kind,k,survival\n";
    for (const auto& p : missing) o << "missing_fraction," << detail::format_double(p.k) << ',' << detail::format_double(p.survival) << '\n';
    for (const auto& p : gaps) o << "gap_length," << detail::format_double(p.k) << ',' << detail::format_double(p.survival) << '\n';
  };
  if (out_path.empty()) {
    write(out);
  } else {
    auto f = open_out(out_path);
    write(f);
    close_checked(f, out_path);
  }
  return kExitOk;
}

// ---- extract

int run_extract(const std::string& signals_path, const std::string& log_path, const std::string& out_path,
                std::ostream& out, std::ostream& err) {
  std::vector<PmuSeries> series;
  {
    auto in = open_in(signals_path);
    series = parse_signal_csv(in);
  }
  std::vector<EventLogEntry> log;
  {
    auto in = open_in(log_path);
    log = parse_event_log(in);
  }
  std::vector<EventWindow> windows;
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto id = static_cast<std::int64_t>(i);
    std::vector<PmuSeries> contexts;
    for (const auto& s : series) contexts.push_back(slice_context(s, log[i].start));
    Timestamp onset{};
    try {
      onset = locate_onset(contexts);
    } catch (const NoOnsetError& e) {
      err << "warning: event " << id << ": " << e.what() << '\n';
      continue;
    }
    for (const auto& ctx : contexts) {
      CandidateWindow cand = extract_window(ctx, onset);
      cand.event_id = id;
      cand.label = log[i].event_type;
      GateResult g = quality_gate(cand);
      if (!g.accepted()) {
        ++rejected;
        continue;
      }
      EventWindow w = g.window();
      w.event_id = id;
      w.label = log[i].event_type;
      windows.push_back(std::move(w));
    }
  }
  auto f = open_out(out_path);
  write_windows_csv(f, windows);
  close_checked(f, out_path);
  out << "windows " << windows.size() << " rejected " << rejected << '\n';
  return kExitOk;
}

std::vector<double> default_fraction_grid() {
  return {0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5};
}

std::vector<double> default_gap_grid() { return {0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000}; }

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"PMU event classification toolkit", "pmuev"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "key=value file; flags given on the command line win");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "build a synthetic labelled dataset");
  synth->add_option("--per-class", sa.per_class, "events per class")->capture_default_str();
  auto* sa_seed = synth->add_option("--seed", sa.seed)->capture_default_str();
  synth->add_option("--out", sa.out_dir, "output directory")->required();
  auto* sa_pmus = synth->add_option("--pmu-count", sa.pmu_count)->capture_default_str();
  auto* sa_noise = synth->add_option("--noise-sigma", sa.noise_sigma)->capture_default_str();
  synth->add_option("--rate", sa.rate, "30 or 60")->capture_default_str();
  synth->add_option("--missing-fraction", sa.missing_fraction)->capture_default_str();
  synth->add_option("--min-run", sa.min_run)->capture_default_str();
  synth->add_option("--max-run", sa.max_run)->capture_default_str();
  synth->add_option("--spike-prob", sa.spike_probability)->capture_default_str();
  synth->add_option("--status-prob", sa.status_probability)->capture_default_str();
  synth->add_option("--signals", sa.signal_events, "also write raw signals for the first N events");

  std::string enc_windows, enc_out;
  std::size_t enc_q = kDefaultQuantileBins;
  auto* encode = app.add_subcommand("encode", "windows CSV -> graph bundle");
  encode->add_option("--windows", enc_windows)->required();
  encode->add_option("--out", enc_out)->required();
  auto* enc_q_opt = encode->add_option("--q", enc_q, "quantile bins")->capture_default_str();

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "train a model on a graph bundle");
  trainc->add_option("--graphs", ta.graphs)->required();
  trainc->add_option("--out", ta.out, "checkpoint path")->required();
  trainc->add_option("--history", ta.history, "per-epoch CSV");
  trainc->add_option("--split-out", ta.split_out, "write held-out event ids");
  trainc->add_option("--split", ta.split_in, "held-out event ids to use instead of a fresh split");
  auto* ta_seed = trainc->add_option("--seed", ta.seed)->capture_default_str();
  auto* ta_epochs = trainc->add_option("--epochs", ta.epochs)->capture_default_str();
  auto* ta_batch = trainc->add_option("--batch-size", ta.batch_size)->capture_default_str();
  auto* ta_lr = trainc->add_option("--lr", ta.lr)->capture_default_str();
  auto* ta_b1 = trainc->add_option("--beta1", ta.beta1)->capture_default_str();
  auto* ta_b2 = trainc->add_option("--beta2", ta.beta2)->capture_default_str();
  auto* ta_eps = trainc->add_option("--eps", ta.eps)->capture_default_str();
  auto* ta_drop = trainc->add_option("--dropout", ta.dropout)->capture_default_str();
  auto* ta_spp = trainc->add_option("--spp-levels", ta.spp_levels)->delimiter(',')->capture_default_str();
  trainc->add_option("--test-fraction", ta.test_fraction)->capture_default_str();
  trainc->add_option("--max-per-event", ta.max_per_event, "training windows kept per event, 0 = all")
      ->capture_default_str();
  trainc->add_option("--monitor", ta.monitor, "held-out examples scored each epoch, 0 = all")->capture_default_str();

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "confusion matrix and accuracy report");
  evalc->add_option("--model", ea.model)->required();
  evalc->add_option("--graphs", ea.graphs)->required();
  evalc->add_option("--split", ea.split, "restrict to these event ids");
  evalc->add_option("--report", ea.report, "report path (default stdout)");
  evalc->add_option("--confusion", ea.confusion, "predicted,true,count CSV");
  evalc->add_option("--threshold", ea.threshold, "system-level vote share")->capture_default_str();

  std::string pr_model, pr_windows;
  std::size_t pr_index = 0;
  auto* predict = app.add_subcommand("predict", "classify one window");
  predict->add_option("--model", pr_model)->required();
  predict->add_option("--windows", pr_windows)->required();
  predict->add_option("--index", pr_index, "row of the windows file")->capture_default_str();

  SensitivityArgs se;
  auto* sens = app.add_subcommand("sensitivity", "accuracy under consecutive missing samples");
  sens->add_option("--model", se.model)->required();
  sens->add_option("--windows", se.windows)->required();
  sens->add_option("--split", se.split, "restrict to these event ids");
  sens->add_option("--out", se.out, "curve CSV (default stdout)");
  sens->add_option("--fractions", se.fractions)->delimiter(',')->capture_default_str();
  sens->add_option("--trials", se.trials)->capture_default_str();
  auto* se_seed = sens->add_option("--seed", se.seed)->capture_default_str();
  sens->add_option("--impute", se.impute, "none or linear")
      ->check(CLI::IsMember({"none", "linear"}))
      ->capture_default_str();

  std::vector<std::string> q_signals;
  std::string q_out;
  std::vector<double> q_fracs = default_fraction_grid(), q_gaps = default_gap_grid();
  auto* quality = app.add_subcommand("quality", "survival functions of missing data");
  quality->add_option("--signals", q_signals, "signal CSV files")->required();
  quality->add_option("--out", q_out, "CSV path (default stdout)");
  quality->add_option("--fraction-grid", q_fracs)->delimiter(',');
  quality->add_option("--gap-grid", q_gaps)->delimiter(',');

  std::string ex_signals, ex_log, ex_out;
  auto* extract = app.add_subcommand("extract", "event windows from signals and an event log");
  extract->add_option("--signals", ex_signals)->required();
  extract->add_option("--log", ex_log)->required();
  extract->add_option("--out", ex_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    ConfigMap cfg;
    if (!config_path.empty()) cfg = read_config(config_path);
    const ConfigApplier apply{cfg};

    if (*synth) {
      apply(sa_seed, "seed", sa.seed);
      apply(sa_pmus, "pmu_count", sa.pmu_count);
      apply(sa_noise, "noise_sigma", sa.noise_sigma);
      return run_synth(sa, out);
    }
    if (*encode) {
      apply(enc_q_opt, "q", enc_q);
      return run_encode(enc_windows, enc_out, enc_q, out);
    }
    if (*trainc) {
      apply(ta_seed, "seed", ta.seed);
      apply(ta_epochs, "epochs", ta.epochs);
      apply(ta_batch, "batch_size", ta.batch_size);
      apply(ta_lr, "lr", ta.lr);
      apply(ta_b1, "beta1", ta.beta1);
      apply(ta_b2, "beta2", ta.beta2);
      apply(ta_eps, "eps", ta.eps);
      apply(ta_drop, "dropout", ta.dropout);
      apply(ta_spp, "spp_levels", ta.spp_levels);
      return run_train(ta, out);
    }
    if (*evalc) return run_eval(ea, out);
    if (*predict) return run_predict(pr_model, pr_windows, pr_index, out);
    if (*sens) {
      apply(se_seed, "seed", se.seed);
      return run_sensitivity(se, out, err);
    }
    if (*quality) return run_quality(q_signals, q_out, q_fracs, q_gaps, out);
    if (*extract) return run_extract(ex_signals, ex_log, ex_out, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("pmuev");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace pmuev
