#pragma once

// Experiment configuration and the generate / train / evaluate / report
// commands behind the lupindp CLI. Every command writes its artifacts into
// the configured output directory.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lupindp/checkpoint.hpp"
#include "lupindp/dynamics.hpp"
#include "lupindp/evaluation.hpp"
#include "lupindp/model.hpp"
#include "lupindp/training.hpp"

namespace lupindp {

struct ExperimentConfig {
  std::uint64_t seed = 0;
  TrainingMode mode = TrainingMode::Lupi;
  std::filesystem::path out = "run";

  TaskSpec task = TaskSpec::defaults(TaskKind::LotkaVolterra);
  std::size_t n_train = 500;
  std::size_t n_test = 500;

  ModelConfig model;
  TrainConfig train;
  EvaluationProtocol eval;

  void validate() const;
  // Flat `key = value` text with [experiment], [task], [model], [train] and
  // [eval] sections. Missing keys keep their defaults.
  static ExperimentConfig parse(std::istream& is);
  static ExperimentConfig load(const std::filesystem::path& path);
  void write(std::ostream& os) const;
  // Switches the task and resets its horizon to that task's default.
  void set_task(TaskKind kind);
};

// Seed of the test split for a given experiment seed.
std::uint64_t test_split_seed(std::uint64_t seed);

struct GenerateOutput {
  std::filesystem::path train;
  std::filesystem::path test;
};
GenerateOutput cmd_generate(const ExperimentConfig& config);

struct TrainOutput {
  std::filesystem::path checkpoint;
  std::filesystem::path trace;
  TrainResult result;
};
// Initializes from the experiment seed, trains, and writes checkpoint.txt,
// loss_trace.csv and config.ini. The model's observation dim follows the data.
TrainOutput cmd_train(const ExperimentConfig& config, const std::filesystem::path& dataset);

struct RunMetrics {
  std::string task;
  TrainingMode mode = TrainingMode::Lupi;
  bool starred = false;
  std::uint64_t seed = 0;
  Index series = 0;
  double mse = 0.0;
  double mse_stderr = 0.0;
  double calibration_error = 0.0;
  double sharpness = 0.0;
};

void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& m);
RunMetrics read_metrics_csv(const std::filesystem::path& path);
std::string metrics_file_name(bool starred);
std::string calibration_file_name(bool starred);

struct EvaluateOutput {
  std::filesystem::path metrics;
  std::filesystem::path calibration;
  RunMetrics summary;
  EvaluationReport report;
};
// Protocol (starred or not, samples, context range, seed) comes from
// config.eval; the training mode from the checkpoint.
EvaluateOutput cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                            const std::filesystem::path& test_data);

struct ReportRow {
  std::string task;
  std::string model;  // LUPI, NoPI, with * for starred rows
  bool starred = false;
  int runs = 0;
  double mse = 0.0;
  double mse_se = 0.0;
  double calibration_error = 0.0;
  double sharpness = 0.0;
  bool better_mse = false;
  bool better_calibration = false;
  bool better_sharpness = false;

  bool operator==(const ReportRow&) const = default;
};

// Groups runs by (task, mode, starred). MSE is averaged across runs with a
// cross-run standard error; a single-run group keeps its across-series
// error. Within each (task, starred) pair the lower LUPI/NoPI entry of every
// metric is flagged.
std::vector<ReportRow> build_report(std::span<const RunMetrics> runs);
std::string format_report(std::span<const ReportRow> rows);
void write_report_csv(std::ostream& os, std::span<const ReportRow> rows);
std::vector<ReportRow> read_report_csv(std::istream& is);

std::vector<ReportRow> cmd_report(std::span<const std::filesystem::path> run_dirs, const std::filesystem::path& out);

}  // namespace lupindp
