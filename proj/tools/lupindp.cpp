// lupindp generate|train|evaluate|report
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lupindp/experiment.hpp"

namespace fs = std::filesystem;
using namespace lupindp;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> task;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::size_t> n_train;
  std::optional<std::size_t> n_test;
  std::optional<std::string> out;
  bool starred = false;
};

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
  if (o.task) c.set_task(parse_task(*o.task));
  if (o.mode) c.mode = parse_mode(*o.mode);
  if (o.seed) {
    c.seed = *o.seed;
    c.train.seed = *o.seed;
    c.eval.seed = *o.seed;
  }
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.n_train) c.n_train = *o.n_train;
  if (o.n_test) c.n_test = *o.n_test;
  if (o.out) c.out = *o.out;
  if (o.starred) c.eval.starred = true;
  return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Experiment seed");
  cmd->add_option("--out", o.out, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural ODE processes trained with privileged information"};
  app.require_subcommand(1);

  Overrides o;
  std::string data;
  std::string checkpoint;
  std::vector<std::string> run_dirs;

  auto* gen = app.add_subcommand("generate", "Write train and test dataset files");
  add_common(gen, o);
  gen->add_option("--task", o.task, "osc-stiffness | osc-damping | lotka-volterra | sine (aliases: stiffness, damping, lv)");
  gen->add_option("--n-train", o.n_train, "Training series");
  gen->add_option("--n-test", o.n_test, "Test series");

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(tr, o);
  tr->add_option("--data", data, "Training dataset (default <out>/train.txt)");
  tr->add_option("--mode", o.mode, "lupi | nopi");
  tr->add_option("--epochs", o.epochs, "Epoch budget")->check(CLI::NonNegativeNumber);

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on a test dataset");
  add_common(ev, o);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoint.txt)");
  ev->add_option("--data", data, "Test dataset (default <out>/test.txt)");
  ev->add_flag("--starred", o.starred, "Full series as context, privileged value for lupi checkpoints");

  auto* rep = app.add_subcommand("report", "Tabulate finished runs");
  rep->add_option("runs", run_dirs, "Run directories holding metrics files")->required();
  rep->add_option("--out", o.out, "Directory for report.txt and report.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (rep->parsed()) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      const auto rows = cmd_report(dirs, o.out.value_or("."));
      std::cout << format_report(rows);
      return 0;
    }
    const ExperimentConfig config = resolve(o);
    if (gen->parsed()) {
      const auto out = cmd_generate(config);
      std::cout << "wrote " << out.train.string() << " and " << out.test.string() << '\n';
    } else if (tr->parsed()) {
      config.validate();
      const fs::path dataset = data.empty() ? config.out / "train.txt" : fs::path(data);
      const auto out = cmd_train(config, dataset);
      if (!out.result.trace.empty()) {
        const auto& last = out.result.trace.back();
        std::printf("epoch %d train %.6g val %.6g\n", last.epoch, last.train_loss, last.val_loss);
      }
      std::cout << "wrote " << out.checkpoint.string() << " and " << out.trace.string() << '\n';
    } else if (ev->parsed()) {
      const fs::path ckpt = checkpoint.empty() ? config.out / "checkpoint.txt" : fs::path(checkpoint);
      const fs::path test = data.empty() ? config.out / "test.txt" : fs::path(data);
      const auto out = cmd_evaluate(config, ckpt, test);
      const RunMetrics& m = out.summary;
      std::printf("%s %s%s mse %.6g +- %.6g calibration %.6g sharpness %.6g\n", m.task.c_str(),
                  mode_name(m.mode).c_str(), m.starred ? "*" : "", m.mse, m.mse_stderr, m.calibration_error,
                  m.sharpness);
    }
  } catch (const ConfigError& e) {
    std::cerr << "lupindp: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "lupindp: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
