#pragma once

// The end-to-end experiment: collect scenario data, build the balanced
// training sets, tune and fit one forest per training intensity, and evaluate
// every model on the shared test set. Each stage reads and writes files under
// one output directory so it can also run on its own.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "eval.hpp"
#include "forest.hpp"
#include "plant.hpp"
#include "protocol.hpp"
#include "wire.hpp"

namespace cpsids {

namespace fs = std::filesystem;

struct PipelineConfig {
  PlantParams plant;
  Thresholds thresholds;
  PlantState initial;
  modbus::RegisterMap registers;
  SignPolicy sign_policy = SignPolicy::random_per_frame;
  std::vector<std::string> attack_targets{"level", "inflow", "outflow"};
  std::vector<double> train_intensities{0.01, 0.10, 0.20};
  std::vector<double> test_intensities{0.01, 0.05, 0.10, 0.15, 0.20};
  std::size_t train_per_class = 500;
  std::size_t test_normal = 500;
  std::size_t test_per_intensity = 100;
  std::uint64_t sampling_stride = 1;
  std::vector<std::size_t> grid_trees{10, 50, 100};
  std::vector<std::optional<std::size_t>> grid_depth{4, 8, std::nullopt};
  std::vector<std::size_t> grid_min_split{2, 10};
  std::size_t features_per_split = 2;
  std::size_t folds = 5;
  std::uint64_t seed = 42;
  unsigned threads = 0;  // 0: one per hardware thread
  std::string out = "cpsids-run";

  unsigned worker_threads() const { return threads == 0 ? forest::default_threads() : threads; }

  std::vector<forest::Hyperparams> grid() const {
    return forest::make_grid(grid_trees, grid_depth, grid_min_split, features_per_split);
  }

  std::set<std::uint16_t> target_addresses() const {
    std::set<std::uint16_t> out;
    for (const auto& t : attack_targets) {
      if (t == "level") {
        out.insert(registers.level);
      } else if (t == "inflow") {
        out.insert(registers.inflow);
      } else if (t == "outflow") {
        out.insert(registers.outflow);
      } else {
        out.insert(KeyValues::convert<std::uint16_t>("attack.target", t));
      }
    }
    return out;
  }

  AttackConfig attack(double intensity) const {
    AttackConfig a;
    a.intensity = intensity;
    a.sign_policy = sign_policy;
    a.target = target_addresses();
    return a;
  }
};

inline void validate(const PipelineConfig& c) {
  validate(c.plant, c.thresholds);
  modbus::validate(c.registers);
  if (c.test_intensities.empty()) throw DataError("no test intensities configured");
  for (double e : c.train_intensities) {
    if (std::find(c.test_intensities.begin(), c.test_intensities.end(), e) == c.test_intensities.end()) {
      throw DataError("training intensity " + format_double(e) + " is not among the test intensities");
    }
  }
  for (double e : c.test_intensities) validate(c.attack(e));
  if (c.train_per_class == 0 || c.test_normal == 0 || c.test_per_intensity == 0) {
    throw DataError("sample counts must be positive");
  }
  if (c.sampling_stride < 1) throw DataError("sampling stride must be at least 1");
  if (c.grid().empty()) throw DataError("hyperparameter grid is empty");
  for (const auto& h : c.grid()) forest::validate(h, kFeatureCount);
  if (c.folds < 2) throw DataError("need at least 2 folds");
}

inline std::string depth_list(const std::vector<std::optional<std::size_t>>& d) {
  std::string out;
  for (std::size_t i = 0; i < d.size(); ++i) out += (i ? "," : "") + forest::depth_string(d[i]);
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, double>) {
      out += format_double(v[i]);
    } else if constexpr (std::is_same_v<T, std::string>) {
      out += v[i];
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

inline PipelineConfig apply(PipelineConfig c, const KeyValues& kv) {
  static const std::set<std::string> known{
      "plant.pump_max_flow", "plant.tank_section", "plant.outlet_section", "plant.gravity", "plant.dt",
      "thresholds.ll", "thresholds.l", "thresholds.h", "thresholds.hh", "initial.level", "initial.pump",
      "initial.valve", "registers.level", "registers.inflow", "registers.outflow", "registers.pump",
      "registers.valve", "registers.level_scale", "registers.flow_scale", "attack.sign_policy",
      "attack.target", "intensities.train", "intensities.test", "samples.train_per_class",
      "samples.test_normal", "samples.test_per_intensity", "samples.stride", "grid.n_trees",
      "grid.max_depth", "grid.min_samples_split", "grid.features_per_split", "grid.folds", "seed",
      "threads", "out"};
  for (const auto& [k, v] : kv.items()) {
    if (!known.contains(k)) throw DataError("unknown config key '" + k + "'");
  }
  kv.read("plant.pump_max_flow", c.plant.pump_max_flow);
  kv.read("plant.tank_section", c.plant.tank_section);
  kv.read("plant.outlet_section", c.plant.outlet_section);
  kv.read("plant.gravity", c.plant.gravity);
  kv.read("plant.dt", c.plant.dt);
  kv.read("thresholds.ll", c.thresholds.low_low);
  kv.read("thresholds.l", c.thresholds.low);
  kv.read("thresholds.h", c.thresholds.high);
  kv.read("thresholds.hh", c.thresholds.high_high);
  kv.read("initial.level", c.initial.level);
  kv.read("initial.pump", c.initial.pump);
  kv.read("initial.valve", c.initial.valve);
  kv.read("registers.level", c.registers.level);
  kv.read("registers.inflow", c.registers.inflow);
  kv.read("registers.outflow", c.registers.outflow);
  kv.read("registers.pump", c.registers.pump);
  kv.read("registers.valve", c.registers.valve);
  kv.read("registers.level_scale", c.registers.level_scale);
  kv.read("registers.flow_scale", c.registers.flow_scale);
  if (const auto v = kv.get("attack.sign_policy")) c.sign_policy = parse_sign_policy(*v);
  kv.read_list("attack.target", c.attack_targets);
  kv.read_list("intensities.train", c.train_intensities);
  kv.read_list("intensities.test", c.test_intensities);
  kv.read("samples.train_per_class", c.train_per_class);
  kv.read("samples.test_normal", c.test_normal);
  kv.read("samples.test_per_intensity", c.test_per_intensity);
  kv.read("samples.stride", c.sampling_stride);
  kv.read_list("grid.n_trees", c.grid_trees);
  if (const auto v = kv.get("grid.max_depth")) {
    c.grid_depth.clear();
    for (const auto& item : split_list(*v)) {
      if (item == "none" || item == "unlimited") {
        c.grid_depth.push_back(std::nullopt);
      } else {
        c.grid_depth.push_back(KeyValues::convert<std::size_t>("grid.max_depth", item));
      }
    }
  }
  kv.read_list("grid.min_samples_split", c.grid_min_split);
  kv.read("grid.features_per_split", c.features_per_split);
  kv.read("grid.folds", c.folds);
  kv.read("seed", c.seed);
  kv.read("threads", c.threads);
  kv.read("out", c.out);
  return c;
}

// Everything that influences results, as sorted key=value pairs. The output
// directory and thread count are left out: neither changes any file content.
inline std::map<std::string, std::string> describe(const PipelineConfig& c) {
  return {
      {"plant.pump_max_flow", format_double(c.plant.pump_max_flow)},
      {"plant.tank_section", format_double(c.plant.tank_section)},
      {"plant.outlet_section", format_double(c.plant.outlet_section)},
      {"plant.gravity", format_double(c.plant.gravity)},
      {"plant.dt", format_double(c.plant.dt)},
      {"thresholds.ll", format_double(c.thresholds.low_low)},
      {"thresholds.l", format_double(c.thresholds.low)},
      {"thresholds.h", format_double(c.thresholds.high)},
      {"thresholds.hh", format_double(c.thresholds.high_high)},
      {"initial.level", format_double(c.initial.level)},
      {"initial.pump", std::to_string(c.initial.pump)},
      {"initial.valve", std::to_string(c.initial.valve)},
      {"registers.level", std::to_string(c.registers.level)},
      {"registers.inflow", std::to_string(c.registers.inflow)},
      {"registers.outflow", std::to_string(c.registers.outflow)},
      {"registers.pump", std::to_string(c.registers.pump)},
      {"registers.valve", std::to_string(c.registers.valve)},
      {"registers.level_scale", std::to_string(c.registers.level_scale)},
      {"registers.flow_scale", std::to_string(c.registers.flow_scale)},
      {"attack.sign_policy", to_string(c.sign_policy)},
      {"attack.target", join(c.attack_targets)},
      {"intensities.train", join(c.train_intensities)},
      {"intensities.test", join(c.test_intensities)},
      {"samples.train_per_class", std::to_string(c.train_per_class)},
      {"samples.test_normal", std::to_string(c.test_normal)},
      {"samples.test_per_intensity", std::to_string(c.test_per_intensity)},
      {"samples.stride", std::to_string(c.sampling_stride)},
      {"grid.n_trees", join(c.grid_trees)},
      {"grid.max_depth", depth_list(c.grid_depth)},
      {"grid.min_samples_split", join(c.grid_min_split)},
      {"grid.features_per_split", std::to_string(c.features_per_split)},
      {"grid.folds", std::to_string(c.folds)},
      {"seed", std::to_string(c.seed)},
  };
}

// ---------------------------------------------------------------------------
// File layout

inline std::string percent_tag(double intensity) {
  std::string s = format_double(std::round(intensity * 100.0 * 1e6) / 1e6);
  for (auto& ch : s) {
    if (ch == '.') ch = 'p';
  }
  return s + "pct";
}

inline std::string model_name(double intensity) { return "model " + percent_label(intensity); }

struct Layout {
  fs::path root;

  fs::path data() const { return root / "data"; }
  fs::path models() const { return root / "models"; }
  fs::path reports() const { return root / "reports"; }
  fs::path normal_train() const { return data() / "normal_train.csv"; }
  fs::path normal_test() const { return data() / "normal_test.csv"; }
  fs::path attack_train(double e) const { return data() / ("fdi_" + percent_tag(e) + "_train.csv"); }
  fs::path attack_test(double e) const { return data() / ("fdi_" + percent_tag(e) + "_test.csv"); }
  fs::path model(double e) const { return models() / ("model_" + percent_tag(e) + ".forest"); }
  fs::path grid(double e) const { return models() / ("grid_" + percent_tag(e) + ".csv"); }
  fs::path report(double e) const { return reports() / ("report_" + percent_tag(e) + ".txt"); }
  fs::path comparison() const { return reports() / "comparison.csv"; }
  fs::path manifest() const { return root / "manifest.txt"; }
};

inline Dataset load_required(const fs::path& p) {
  if (!fs::exists(p)) throw DataError("missing dataset file " + p.string());
  return load(p.string());
}

// ---------------------------------------------------------------------------
// Stages

inline constexpr const char* kTrajectoryHeader = "step,time,level,inflow,outflow,pump,valve,measured_level,safety";

// Closed-loop trajectory, one row per step, from the true plant state. With
// an intensity the whole run is attacked (after no warm-up).
inline void cmd_simulate(const PipelineConfig& c, std::uint64_t steps, const fs::path& path,
                         std::optional<double> intensity = std::nullopt) {
  validate(c);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  ControlLoop loop(c.plant, c.thresholds, c.registers, derive_seed(c.seed, "simulate"), c.initial);
  if (intensity) loop.channel().start_attack(c.attack(*intensity));
  os << kTrajectoryHeader << '\n';
  for (std::uint64_t k = 0; k < steps; ++k) {
    const auto s = loop.advance();
    os << k << ',' << format_g9(s.truth.time) << ',' << format_g9(s.truth.level) << ','
       << format_g9(s.truth.inflow) << ',' << format_g9(s.truth.outflow) << ',' << s.truth.pump << ','
       << s.truth.valve << ',' << format_g9(s.level) << ',' << to_string(safety_check(s.truth.level, c.thresholds))
       << '\n';
  }
  if (!os) throw DataError("write failed for " + path.string());
}

inline std::string scenario_seed_name(double intensity) { return "collect/fdi/" + format_double(intensity); }

inline void cmd_collect(const PipelineConfig& c) {
  validate(c);
  const Layout out{c.out};
  fs::create_directories(out.data());

  auto split_save = [](const Dataset& d, std::size_t head, const fs::path& first, const fs::path* second) {
    Dataset a, b;
    for (std::size_t i = 0; i < d.size(); ++i) (i < head ? a : b).push_back(d.records[i], d.provenance[i]);
    if (head > 0) save(a, first.string());
    if (second) save(b, second->string());
  };

  struct Job {
    std::optional<double> intensity;
    std::size_t train = 0;
    std::size_t test = 0;
    Dataset result;
  };
  std::vector<Job> jobs;
  jobs.push_back({std::nullopt, c.train_per_class, c.test_normal, {}});
  for (double e : c.test_intensities) {
    const bool trains =
        std::find(c.train_intensities.begin(), c.train_intensities.end(), e) != c.train_intensities.end();
    jobs.push_back({e, trains ? c.train_per_class : 0, c.test_per_intensity, {}});
  }

  forest::parallel_for(jobs.size(), c.worker_threads(), [&](std::size_t i) {
    auto& job = jobs[i];
    ScenarioConfig s;
    s.duration = (job.train + job.test) * c.sampling_stride;
    s.sampling_stride = c.sampling_stride;
    s.initial = c.initial;
    if (job.intensity) {
      s.attack = c.attack(*job.intensity);
      s.seed = derive_seed(c.seed, scenario_seed_name(*job.intensity));
    } else {
      s.seed = derive_seed(c.seed, "collect/normal");
    }
    job.result = collect(s, c.plant, c.thresholds, c.registers);
  });

  for (const auto& job : jobs) {
    if (!job.intensity) {
      const auto test = out.normal_test();
      split_save(job.result, job.train, out.normal_train(), &test);
    } else {
      const auto test = out.attack_test(*job.intensity);
      split_save(job.result, job.train, out.attack_train(*job.intensity), &test);
    }
  }
}

inline forest::Samples to_samples(const Dataset& d) {
  forest::Samples s;
  s.n_features = kFeatureCount;
  for (const auto& r : d.records) {
    const auto x = r.features();
    s.push_back(x, r.label);
  }
  return s;
}

struct TrainedModel {
  double intensity = 0.0;
  forest::GridResult grid;
  forest::Forest model;
};

inline std::vector<TrainedModel> cmd_train(const PipelineConfig& c) {
  validate(c);
  const Layout out{c.out};
  const auto normal = load_required(out.normal_train());
  std::vector<Dataset> attacked;
  for (double e : c.train_intensities) attacked.push_back(load_required(out.attack_train(e)));
  fs::create_directories(out.models());

  std::vector<TrainedModel> trained;
  for (std::size_t i = 0; i < c.train_intensities.size(); ++i) {
    const double e = c.train_intensities[i];
    const auto tag = percent_tag(e);
    Rng shuffle(derive_seed(c.seed, "train/set/" + tag));
    const auto training = to_samples(build_training_set(normal, attacked[i], c.train_per_class, shuffle));

    TrainedModel t;
    t.intensity = e;
    t.grid = forest::grid_search(training, c.grid(), c.folds, derive_seed(c.seed, "train/grid/" + tag),
                                 c.worker_threads());
    t.model = forest::fit_forest(training, t.grid.best, derive_seed(c.seed, "train/fit/" + tag),
                                 c.worker_threads());

    std::ofstream grid_os(out.grid(e), std::ios::binary);
    forest::write_grid_csv(grid_os, t.grid);
    std::ofstream model_os(out.model(e), std::ios::binary);
    forest::write_forest(model_os, t.model);
    if (!grid_os || !model_os) throw DataError("cannot write model files under " + out.models().string());
    trained.push_back(std::move(t));
  }
  return trained;
}

inline Dataset load_test_set(const PipelineConfig& c) {
  const Layout out{c.out};
  const auto normal = load_required(out.normal_test());
  std::map<double, Dataset> attacked;
  for (double e : c.test_intensities) attacked[e] = load_required(out.attack_test(e));

  std::vector<Dataset> training;
  if (fs::exists(out.normal_train())) training.push_back(load(out.normal_train().string()));
  for (double e : c.train_intensities) {
    if (fs::exists(out.attack_train(e))) training.push_back(load(out.attack_train(e).string()));
  }
  TestSetSpec spec{c.test_intensities, c.test_normal, c.test_per_intensity};
  return build_test_set(normal, attacked, spec, training);
}

inline std::vector<EvalReport> cmd_evaluate(const PipelineConfig& c, std::ostream* table = nullptr) {
  validate(c);
  const Layout out{c.out};
  const auto test = load_test_set(c);
  fs::create_directories(out.reports());

  std::map<std::string, EvalReport> by_name;
  std::vector<EvalReport> reports;
  for (double e : c.train_intensities) {
    const auto path = out.model(e);
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("missing model file " + path.string());
    const auto model = forest::read_forest(is);
    auto report = evaluate(model, test, model_name(e));
    std::ofstream os(out.report(e), std::ios::binary);
    write_report(os, report);
    if (!os) throw DataError("cannot write " + out.report(e).string());
    by_name[report.model] = report;
    reports.push_back(std::move(report));
  }
  const auto cmp = compare(by_name);
  std::ofstream os(out.comparison(), std::ios::binary);
  write_comparison_csv(os, cmp);
  if (!os) throw DataError("cannot write " + out.comparison().string());
  if (table) write_comparison_table(*table, cmp);
  return reports;
}

inline constexpr int kManifestFormatVersion = 1;
inline constexpr int kDatasetFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;

inline std::string file_digest(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(ss.str())));
  return buf;
}

class StageError : public Error {
 public:
  StageError(const std::string& stage, const Error& cause, int exit_code)
      : Error("stage '" + stage + "' failed: " + cause.what()), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

struct PipelineResult {
  std::vector<TrainedModel> models;
  std::vector<EvalReport> reports;
};

// collect, train and evaluate under one master seed, then a manifest with the
// config echo, file formats, file inventory and per-stage wall-clock times.
// Only the "timing." lines of the manifest vary between identical runs.
inline PipelineResult cmd_pipeline(const PipelineConfig& c, std::ostream* table = nullptr) {
  validate(c);
  const Layout out{c.out};
  fs::create_directories(out.root);
  PipelineResult result;
  std::vector<std::pair<std::string, double>> timings;

  auto run = [&](const std::string& stage, auto&& fn) {
    const auto start = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const InvariantError& e) {
      throw StageError(stage, e, 3);
    } catch (const Error& e) {
      throw StageError(stage, e, 2);
    }
    timings.emplace_back(stage,
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  };
  run("collect", [&] { cmd_collect(c); });
  run("train", [&] { result.models = cmd_train(c); });
  run("evaluate", [&] { result.reports = cmd_evaluate(c, table); });

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(out.root)) {
    if (entry.is_regular_file() && entry.path() != out.manifest()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::ofstream os(out.manifest(), std::ios::binary);
  os << "format.manifest=" << kManifestFormatVersion << '\n'
     << "format.dataset_csv=" << kDatasetFormatVersion << '\n'
     << "format.forest=" << forest::kForestFormatVersion << '\n'
     << "format.report=" << kReportFormatVersion << '\n';
  for (const auto& [k, v] : describe(c)) os << "config." << k << '=' << v << '\n';
  for (const auto& f : files) {
    os << "file." << fs::relative(f, out.root).generic_string() << '=' << fs::file_size(f) << ' '
       << file_digest(f) << '\n';
  }
  for (const auto& [stage, seconds] : timings) os << "timing." << stage << "_seconds=" << fixed(seconds, 3) << '\n';
  if (!os) throw DataError("cannot write " + out.manifest().string());
  return result;
}

}  // namespace cpsids
