#include "lupindp/experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

namespace lupindp {

namespace pt = boost::property_tree;

namespace {

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

Rng init_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 3u};
  return Rng(seq);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Present keys must convert cleanly; absent keys keep `out` as is.
template <typename T>
void read_value(const pt::ptree& tree, const char* path, T& out) {
  if (tree.get_child_optional(path)) out = tree.get<T>(path);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (n_train == 0) throw ConfigError("n_train must be at least 1");
  if (n_test == 0) throw ConfigError("n_test must be at least 1");
  if (!(task.horizon > 0)) throw ConfigError("task horizon must be positive");
  if (task.points < 2) throw ConfigError("task needs at least two points");
  if (task.substeps < 1) throw ConfigError("task substeps must be at least 1");
  model.validate();
  train.validate();
  eval.validate();
}

void ExperimentConfig::set_task(TaskKind kind) {
  const TaskSpec fresh = TaskSpec::defaults(kind);
  task.kind = kind;
  task.horizon = fresh.horizon;
}

ExperimentConfig ExperimentConfig::parse(std::istream& is) {
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.message(), e.line());
  }
  ExperimentConfig c;
  static const std::map<std::string, std::vector<std::string>> known = {
      {"experiment", {"seed", "mode", "out"}},
      {"task", {"kind", "horizon", "points", "substeps", "n_train", "n_test"}},
      {"model",
       {"representation_dim", "privileged_representation_dim", "latent_dim", "ode_state_dim", "hidden", "ode_substeps",
        "scale_floor"}},
      {"train",
       {"epochs", "batch_size", "learning_rate", "validation_fraction", "context_min", "context_max", "target_min",
        "target_max"}},
      {"eval", {"samples", "starred", "context_min", "context_max", "chunk_size"}},
  };
  for (const auto& [section, body] : tree) {
    const auto it = known.find(section);
    if (it == known.end()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : body) {
      (void)value;
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
        throw ConfigError("unknown key '" + key + "' in [" + section + "]");
    }
  }
  try {
    read_value(tree, "experiment.seed", c.seed);
    if (auto mode = tree.get_optional<std::string>("experiment.mode")) c.mode = parse_mode(*mode);
    if (auto out = tree.get_optional<std::string>("experiment.out")) c.out = *out;
    if (auto kind = tree.get_optional<std::string>("task.kind")) c.set_task(parse_task(*kind));
    read_value(tree, "task.horizon", c.task.horizon);
    read_value(tree, "task.points", c.task.points);
    read_value(tree, "task.substeps", c.task.substeps);
    read_value(tree, "task.n_train", c.n_train);
    read_value(tree, "task.n_test", c.n_test);
    read_value(tree, "model.representation_dim", c.model.representation_dim);
    read_value(tree, "model.privileged_representation_dim", c.model.privileged_representation_dim);
    read_value(tree, "model.latent_dim", c.model.latent_dim);
    read_value(tree, "model.ode_state_dim", c.model.ode_state_dim);
    read_value(tree, "model.hidden", c.model.hidden);
    read_value(tree, "model.ode_substeps", c.model.ode_substeps);
    read_value(tree, "model.scale_floor", c.model.scale_floor);
    read_value(tree, "train.epochs", c.train.epochs);
    read_value(tree, "train.batch_size", c.train.batch_size);
    read_value(tree, "train.learning_rate", c.train.adam.learning_rate);
    read_value(tree, "train.validation_fraction", c.train.validation_fraction);
    read_value(tree, "train.context_min", c.train.split.context_min);
    read_value(tree, "train.context_max", c.train.split.context_max);
    read_value(tree, "train.target_min", c.train.split.target_min);
    read_value(tree, "train.target_max", c.train.split.target_max);
    read_value(tree, "eval.samples", c.eval.samples);
    read_value(tree, "eval.starred", c.eval.starred);
    read_value(tree, "eval.context_min", c.eval.context_min);
    read_value(tree, "eval.context_max", c.eval.context_max);
    read_value(tree, "eval.chunk_size", c.eval.chunk_size);
  } catch (const pt::ptree_bad_data& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.train.seed = c.seed;
  c.eval.seed = c.seed;
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  return parse(is);
}

void ExperimentConfig::write(std::ostream& os) const {
  os << "[experiment]\n"
     << "seed = " << seed << '\n'
     << "mode = " << mode_name(mode) << '\n'
     << "out = " << out.string() << "\n\n"
     << "[task]\n"
     << "kind = " << task_name(task.kind) << '\n'
     << "horizon = " << g17(task.horizon) << '\n'
     << "points = " << task.points << '\n'
     << "substeps = " << task.substeps << '\n'
     << "n_train = " << n_train << '\n'
     << "n_test = " << n_test << "\n\n"
     << "[model]\n"
     << "representation_dim = " << model.representation_dim << '\n'
     << "privileged_representation_dim = " << model.privileged_representation_dim << '\n'
     << "latent_dim = " << model.latent_dim << '\n'
     << "ode_state_dim = " << model.ode_state_dim << '\n'
     << "hidden = " << model.hidden << '\n'
     << "ode_substeps = " << model.ode_substeps << '\n'
     << "scale_floor = " << g17(model.scale_floor) << "\n\n"
     << "[train]\n"
     << "epochs = " << train.epochs << '\n'
     << "batch_size = " << train.batch_size << '\n'
     << "learning_rate = " << g17(train.adam.learning_rate) << '\n'
     << "validation_fraction = " << g17(train.validation_fraction) << '\n'
     << "context_min = " << train.split.context_min << '\n'
     << "context_max = " << train.split.context_max << '\n'
     << "target_min = " << train.split.target_min << '\n'
     << "target_max = " << train.split.target_max << "\n\n"
     << "[eval]\n"
     << "samples = " << eval.samples << '\n'
     << "starred = " << (eval.starred ? "true" : "false") << '\n'
     << "context_min = " << eval.context_min << '\n'
     << "context_max = " << eval.context_max << '\n'
     << "chunk_size = " << eval.chunk_size << '\n';
}

std::uint64_t test_split_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ull; }

GenerateOutput cmd_generate(const ExperimentConfig& config) {
  config.validate();
  std::filesystem::create_directories(config.out);
  GenerateOutput out{config.out / "train.txt", config.out / "test.txt"};
  write_dataset(out.train, generate_dataset(config.task, config.n_train, config.seed));
  write_dataset(out.test, generate_dataset(config.task, config.n_test, test_split_seed(config.seed)));
  return out;
}

TrainOutput cmd_train(const ExperimentConfig& config, const std::filesystem::path& dataset) {
  config.validate();
  const Dataset data = read_dataset(dataset);
  ModelConfig model = config.model;
  model.observation_dim = data.task.observation_dim();
  Rng rng = init_rng(config.seed);
  ModelParams params = init_model(model, rng);
  TrainConfig train_config = config.train;
  train_config.seed = config.seed;

  std::filesystem::create_directories(config.out);
  {
    std::ofstream os(config.out / "config.ini");
    if (!os) throw std::runtime_error("cannot write " + (config.out / "config.ini").string());
    ExperimentConfig recorded = config;
    recorded.task = data.task;
    recorded.write(os);
  }
  TrainOutput out;
  out.result = train(std::move(params), data.series, train_config, config.mode);
  out.checkpoint = config.out / "checkpoint.txt";
  out.trace = config.out / "loss_trace.csv";
  save_checkpoint(out.checkpoint, Checkpoint{out.result.params, config.mode, config.seed, config.train.epochs});
  write_trace_csv(out.trace, out.result.trace);
  return out;
}

std::string metrics_file_name(bool starred) { return starred ? "metrics_starred.csv" : "metrics.csv"; }
std::string calibration_file_name(bool starred) { return starred ? "calibration_starred.csv" : "calibration.csv"; }

void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "task,mode,starred,seed,series,mse,mse_stderr,calibration_error,sharpness\n"
     << m.task << ',' << mode_name(m.mode) << ',' << (m.starred ? 1 : 0) << ',' << m.seed << ',' << m.series << ','
     << g17(m.mse) << ',' << g17(m.mse_stderr) << ',' << g17(m.calibration_error) << ',' << g17(m.sharpness) << '\n';
}

RunMetrics read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing metrics file " + path.string());
  std::string header, line;
  if (!std::getline(is, header) || !std::getline(is, line)) throw ParseError(path.string(), "truncated metrics file", 1);
  const auto f = split_csv_line(line);
  if (f.size() != 9) throw ParseError(path.string(), "expected 9 columns", 2);
  RunMetrics m;
  try {
    m.task = f[0];
    m.mode = parse_mode(f[1]);
    m.starred = f[2] == "1";
    m.seed = std::stoull(f[3]);
    m.series = std::stol(f[4]);
    m.mse = std::stod(f[5]);
    m.mse_stderr = std::stod(f[6]);
    m.calibration_error = std::stod(f[7]);
    m.sharpness = std::stod(f[8]);
  } catch (const std::exception& e) {
    throw ParseError(path.string(), e.what(), 2);
  }
  return m;
}

EvaluateOutput cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                            const std::filesystem::path& test_data) {
  config.eval.validate();
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Dataset data = read_dataset(test_data);
  if (data.task.observation_dim() != ckpt.params.config.observation_dim)
    throw ConfigError("checkpoint expects observation dim " + std::to_string(ckpt.params.config.observation_dim) +
                      " but " + test_data.string() + " has " + std::to_string(data.task.observation_dim()));
  EvaluationProtocol protocol = config.eval;
  protocol.seed = config.seed;
  EvaluateOutput out;
  out.report = evaluate(ckpt.params, ckpt.mode, data.series, protocol);
  out.summary = RunMetrics{task_name(data.task.kind), ckpt.mode,           protocol.starred,
                           ckpt.seed,                 out.report.series_count, out.report.mse,
                           out.report.mse_stderr,     out.report.calibration_error, out.report.sharpness};
  std::filesystem::create_directories(config.out);
  out.metrics = config.out / metrics_file_name(protocol.starred);
  out.calibration = config.out / calibration_file_name(protocol.starred);
  write_metrics_csv(out.metrics, out.summary);
  write_calibration_csv(out.calibration, out.report.curve);
  return out;
}

std::vector<ReportRow> build_report(std::span<const RunMetrics> runs) {
  if (runs.empty()) throw ContractError("report needs at least one run");
  // Key order: task, starred, then NoPI before LUPI.
  using Key = std::tuple<std::string, bool, int>;
  std::map<Key, std::vector<const RunMetrics*>> groups;
  for (const auto& r : runs) groups[{r.task, r.starred, r.mode == TrainingMode::Lupi ? 1 : 0}].push_back(&r);

  std::vector<ReportRow> rows;
  for (const auto& [key, members] : groups) {
    ReportRow row;
    row.task = std::get<0>(key);
    row.starred = std::get<1>(key);
    row.model = std::string(std::get<2>(key) ? "LUPI" : "NoPI") + (row.starred ? "*" : "");
    row.runs = static_cast<int>(members.size());
    const double n = static_cast<double>(members.size());
    for (const RunMetrics* m : members) {
      row.mse += m->mse / n;
      row.calibration_error += m->calibration_error / n;
      row.sharpness += m->sharpness / n;
    }
    if (members.size() == 1) {
      row.mse_se = members.front()->mse_stderr;
    } else {
      double ss = 0.0;
      for (const RunMetrics* m : members) ss += (m->mse - row.mse) * (m->mse - row.mse);
      row.mse_se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    rows.push_back(row);
  }
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    ReportRow& a = rows[i];
    ReportRow& b = rows[i + 1];
    if (a.task != b.task || a.starred != b.starred) continue;
    a.better_mse = a.mse < b.mse;
    b.better_mse = b.mse < a.mse;
    a.better_calibration = a.calibration_error < b.calibration_error;
    b.better_calibration = b.calibration_error < a.calibration_error;
    a.better_sharpness = a.sharpness < b.sharpness;
    b.better_sharpness = b.sharpness < a.sharpness;
  }
  return rows;
}

std::string format_report(std::span<const ReportRow> rows) {
  std::ostringstream os;
  os << "Lower is better; **bold** marks the better LUPI/NoPI entry per metric.\n"
     << "MSE +- is the standard error across training seeds (across test series for single-run rows).\n"
     << "Rows marked * were evaluated in the training setting: full series as context, privileged value for LUPI.\n"
     << "Values are not comparable between tasks.\n\n"
     << "| task | model | runs | MSE | calib. error | sharpness |\n"
     << "|---|---|---|---|---|---|\n";
  char buf[64];
  auto cell = [&buf](double v, bool bold) {
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return bold ? "**" + std::string(buf) + "**" : std::string(buf);
  };
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.4f", r.mse_se);
    const std::string se = buf;
    os << "| " << r.task << " | " << r.model << " | " << r.runs << " | " << cell(r.mse, r.better_mse) << " +- " << se
       << " | " << cell(r.calibration_error, r.better_calibration) << " | " << cell(r.sharpness, r.better_sharpness)
       << " |\n";
  }
  return os.str();
}

void write_report_csv(std::ostream& os, std::span<const ReportRow> rows) {
  os << "task,model,starred,runs,mse,mse_se,calibration_error,sharpness,better_mse,better_calibration,better_sharpness\n";
  for (const auto& r : rows)
    os << r.task << ',' << r.model << ',' << (r.starred ? 1 : 0) << ',' << r.runs << ',' << g17(r.mse) << ','
       << g17(r.mse_se) << ',' << g17(r.calibration_error) << ',' << g17(r.sharpness) << ',' << (r.better_mse ? 1 : 0)
       << ',' << (r.better_calibration ? 1 : 0) << ',' << (r.better_sharpness ? 1 : 0) << '\n';
}

std::vector<ReportRow> read_report_csv(std::istream& is) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line)) throw ParseError("empty report", line_no);
  std::vector<ReportRow> rows;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 11) throw ParseError("expected 11 columns", line_no);
    ReportRow r;
    try {
      r.task = f[0];
      r.model = f[1];
      r.starred = f[2] == "1";
      r.runs = std::stoi(f[3]);
      r.mse = std::stod(f[4]);
      r.mse_se = std::stod(f[5]);
      r.calibration_error = std::stod(f[6]);
      r.sharpness = std::stod(f[7]);
      r.better_mse = f[8] == "1";
      r.better_calibration = f[9] == "1";
      r.better_sharpness = f[10] == "1";
    } catch (const std::exception& e) {
      throw ParseError(e.what(), line_no);
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<ReportRow> cmd_report(std::span<const std::filesystem::path> run_dirs, const std::filesystem::path& out) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<RunMetrics> runs;
  for (const auto& dir : run_dirs) {
    bool found = false;
    for (bool starred : {false, true}) {
      const auto path = dir / metrics_file_name(starred);
      if (std::filesystem::exists(path)) {
        runs.push_back(read_metrics_csv(path));
        found = true;
      }
    }
    if (!found) throw std::runtime_error("missing metrics file: " + (dir / metrics_file_name(false)).string());
  }
  const auto rows = build_report(runs);
  std::filesystem::create_directories(out);
  {
    std::ofstream os(out / "report.txt");
    if (!os) throw std::runtime_error("cannot write " + (out / "report.txt").string());
    os << format_report(rows);
  }
  std::ofstream csv(out / "report.csv");
  if (!csv) throw std::runtime_error("cannot write " + (out / "report.csv").string());
  write_report_csv(csv, rows);
  return rows;
}

}  // namespace lupindp
