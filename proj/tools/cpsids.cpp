// Command-line front end: simulate | collect | train | evaluate | pipeline.
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 internal error.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cpsids/cpsids.hpp"

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string intensities;
  std::string train_intensities;
  std::optional<std::size_t> train_per_class;
  std::optional<std::size_t> test_normal;
  std::optional<std::size_t> test_per_intensity;
  std::optional<unsigned> threads;
  std::uint64_t steps = 10000;
  std::string trajectory = "trajectory.csv";
  std::optional<double> attack;
};

cpsids::PipelineConfig build_config(const Options& o) {
  cpsids::PipelineConfig c;
  if (!o.config_path.empty()) c = cpsids::apply(c, cpsids::KeyValues::load(o.config_path));
  cpsids::KeyValues overrides;
  if (o.seed) overrides.set("seed", std::to_string(*o.seed));
  if (!o.out.empty()) overrides.set("out", o.out);
  if (!o.intensities.empty()) overrides.set("intensities.test", o.intensities);
  if (!o.train_intensities.empty()) overrides.set("intensities.train", o.train_intensities);
  if (o.train_per_class) overrides.set("samples.train_per_class", std::to_string(*o.train_per_class));
  if (o.test_normal) overrides.set("samples.test_normal", std::to_string(*o.test_normal));
  if (o.test_per_intensity) overrides.set("samples.test_per_intensity", std::to_string(*o.test_per_intensity));
  if (o.threads) overrides.set("threads", std::to_string(*o.threads));
  return cpsids::apply(c, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Water-tank ICS testbed: false data injection on Modbus and a Random Forest IDS"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "master seed (default 42)");
    cmd->add_option("--out", o.out, "output directory (default cpsids-run)");
    cmd->add_option("--intensity", o.intensities, "comma-separated test intensities, e.g. 0.01,0.05");
    cmd->add_option("--train-intensity", o.train_intensities, "comma-separated training intensities");
    cmd->add_option("--train-per-class", o.train_per_class, "samples per class in each training set");
    cmd->add_option("--test-normal", o.test_normal, "normal samples in the test set");
    cmd->add_option("--test-per-intensity", o.test_per_intensity, "attacked test samples per intensity");
    cmd->add_option("--threads", o.threads, "worker threads, 0 for one per core");
  };

  auto* simulate = app.add_subcommand("simulate", "write a closed-loop trajectory CSV");
  common(simulate);
  simulate->add_option("--steps", o.steps, "number of control-loop steps");
  simulate->add_option("--trajectory", o.trajectory, "output CSV path");
  simulate->add_option("--attack", o.attack, "attack the whole run with this intensity");

  auto* collect = app.add_subcommand("collect", "run the normal and attacked scenarios, write datasets");
  common(collect);
  auto* train = app.add_subcommand("train", "grid-search and fit one forest per training intensity");
  common(train);
  auto* evaluate = app.add_subcommand("evaluate", "evaluate the models on the shared test set");
  common(evaluate);
  auto* pipeline = app.add_subcommand("pipeline", "collect, train and evaluate, with a run manifest");
  common(pipeline);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const auto config = build_config(o);
    if (simulate->parsed()) {
      cpsids::cmd_simulate(config, o.steps, o.trajectory, o.attack);
      std::cout << "wrote " << o.trajectory << '\n';
    } else if (collect->parsed()) {
      cpsids::cmd_collect(config);
      std::cout << "datasets written to " << cpsids::Layout{config.out}.data().string() << '\n';
    } else if (train->parsed()) {
      for (const auto& t : cpsids::cmd_train(config)) {
        std::cout << cpsids::model_name(t.intensity) << ": n_trees=" << t.grid.best.n_trees
                  << " max_depth=" << cpsids::forest::depth_string(t.grid.best.max_depth)
                  << " min_samples_split=" << t.grid.best.min_samples_split << " cv_accuracy="
                  << cpsids::fixed(t.grid.cells[t.grid.best_index].mean_accuracy, 3) << '\n';
      }
    } else if (evaluate->parsed()) {
      cpsids::cmd_evaluate(config, &std::cout);
    } else if (pipeline->parsed()) {
      cpsids::cmd_pipeline(config, &std::cout);
      std::cout << "run written to " << config.out << '\n';
    }
  } catch (const cpsids::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const cpsids::InvariantError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  } catch (const cpsids::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
