#include "lupindp/dynamics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "lupindp/errors.hpp"

namespace lupindp {

namespace {

std::string format_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

Rng series_rng(std::uint64_t seed, std::int64_t id) {
  const auto uid = static_cast<std::uint64_t>(id);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(uid), static_cast<std::uint32_t>(uid >> 32)};
  return Rng(seq);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::OscillatorStiffness: return "osc-stiffness";
    case TaskKind::OscillatorDamping: return "osc-damping";
    case TaskKind::LotkaVolterra: return "lotka-volterra";
    case TaskKind::Sine: return "sine";
  }
  return "unknown";
}

TaskKind parse_task(const std::string& name) {
  if (name == "osc-stiffness" || name == "stiffness") return TaskKind::OscillatorStiffness;
  if (name == "osc-damping" || name == "damping") return TaskKind::OscillatorDamping;
  if (name == "lotka-volterra" || name == "lv") return TaskKind::LotkaVolterra;
  if (name == "sine") return TaskKind::Sine;
  throw ConfigError("unknown task '" + name + "'");
}

std::string privileged_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::OscillatorStiffness: return "k";
    case TaskKind::OscillatorDamping: return "c";
    case TaskKind::LotkaVolterra: return "V";
    case TaskKind::Sine: return "a";
  }
  return "?";
}

void OscillatorParams::validate() const {
  if (!(m1 > 0 && m2 > 0)) throw ConfigError("oscillator masses must be positive");
  if (!(k > 0)) throw ConfigError("spring constant must be positive");
  if (!(c >= 0)) throw ConfigError("damping constant must be non-negative");
  if (!x0.allFinite() || !v0.allFinite()) throw ConfigError("oscillator initial state must be finite");
}

void LvParams::validate() const {
  if (!(alpha > 0 && beta > 0 && gamma > 0 && delta > 0)) throw ConfigError("Lotka-Volterra rates must be positive");
  if (!(u0 >= 0 && v0 >= 0) || !std::isfinite(u0) || !std::isfinite(v0))
    throw ConfigError("Lotka-Volterra initial populations must be finite and non-negative");
}

OscillatorTrajectory simulate_oscillators(const OscillatorParams& p, const SolveGrid& grid) {
  p.validate();
  auto accel = [&p](const Eigen::VectorXd& x, const Eigen::VectorXd& v, double) -> Eigen::VectorXd {
    Eigen::VectorXd a(2);
    a(0) = ((x(1) - 2.0 * x(0)) * p.k - p.c * v(0)) / p.m1;
    a(1) = ((x(0) - 2.0 * x(1)) * p.k - p.c * v(1)) / p.m2;
    return a;
  };
  const auto traj = rk4_solve_second_order<double>(accel, Eigen::VectorXd(p.x0), Eigen::VectorXd(p.v0), grid);
  const auto n = static_cast<Index>(traj.positions.size());
  OscillatorTrajectory out{Matrix(n, 2), Matrix(n, 2)};
  for (Index i = 0; i < n; ++i) {
    out.positions.row(i) = traj.positions[i].transpose();
    out.velocities.row(i) = traj.velocities[i].transpose();
  }
  return out;
}

double oscillator_energy(const OscillatorParams& p, const Eigen::Vector2d& x, const Eigen::Vector2d& v) {
  const double kinetic = 0.5 * (p.m1 * v(0) * v(0) + p.m2 * v(1) * v(1));
  const double dx = x(1) - x(0);
  const double potential = 0.5 * p.k * (x(0) * x(0) + dx * dx + x(1) * x(1));
  return kinetic + potential;
}

Matrix simulate_lv(const LvParams& p, const SolveGrid& grid) {
  p.validate();
  auto field = [&p](const Eigen::Vector2d& y, double t) -> Eigen::Vector2d {
    if (y(0) < 0.0 || y(1) < 0.0) throw IntegrationError("population became negative", t);
    return {p.alpha * y(0) - p.beta * y(0) * y(1), p.delta * y(0) * y(1) - p.gamma * y(1)};
  };
  const auto states = rk4_solve(field, Eigen::Vector2d(p.u0, p.v0), grid);
  Matrix out(static_cast<Index>(states.size()), 2);
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i](0) < 0.0 || states[i](1) < 0.0)
      throw IntegrationError("population became negative", grid.times[i]);
    out.row(static_cast<Index>(i)) = states[i].transpose();
  }
  return out;
}

double conserved_quantity_v(const LvParams& p, double u, double v) {
  if (!(u > 0.0 && v > 0.0)) throw DomainError("conserved quantity needs positive populations");
  return p.delta * u - p.gamma * std::log(u) + p.beta * v - p.alpha * std::log(v);
}

TaskSpec TaskSpec::defaults(TaskKind kind) {
  TaskSpec spec;
  spec.kind = kind;
  spec.horizon = kind == TaskKind::LotkaVolterra ? 15.0 : 10.0;
  return spec;
}

OscillatorParams oscillator_params(const TaskSpec& task, std::uint64_t seed, std::int64_t id) {
  if (task.kind != TaskKind::OscillatorStiffness && task.kind != TaskKind::OscillatorDamping)
    throw ConfigError("oscillator_params needs an oscillator task, got " + task_name(task.kind));
  Rng rng = series_rng(seed, id);
  OscillatorParams p;
  p.m1 = p.m2 = task.mass;
  if (task.kind == TaskKind::OscillatorStiffness) {
    p.k = uniform(rng, task.stiffness_min, task.stiffness_max);
    p.c = task.fixed_damping;
  } else {
    p.k = task.fixed_stiffness;
    p.c = uniform(rng, task.damping_min, task.damping_max);
  }
  for (int i = 0; i < 2; ++i) p.x0(i) = uniform(rng, -task.position_bound, task.position_bound);
  for (int i = 0; i < 2; ++i) p.v0(i) = uniform(rng, -task.velocity_bound, task.velocity_bound);
  return p;
}

TrajectoryRecord generate_series(const TaskSpec& task, std::uint64_t seed, std::int64_t id) {
  Rng rng = series_rng(seed, id);
  const SolveGrid grid = task.grid();
  TrajectoryRecord rec;
  rec.id = id;
  rec.task = task.kind;
  rec.times = grid.times;
  switch (task.kind) {
    case TaskKind::OscillatorStiffness:
    case TaskKind::OscillatorDamping: {
      const OscillatorParams p = oscillator_params(task, seed, id);
      rec.pi = task.kind == TaskKind::OscillatorStiffness ? p.k : p.c;
      rec.values = simulate_oscillators(p, grid).positions;
      break;
    }
    case TaskKind::LotkaVolterra: {
      LvParams p;
      p.u0 = uniform(rng, task.prey_min, task.prey_max);
      p.v0 = uniform(rng, task.predator_min, task.predator_max);
      rec.pi = conserved_quantity_v(p, p.u0, p.v0);
      rec.values = simulate_lv(p, grid);
      break;
    }
    case TaskKind::Sine: {
      const double a = uniform(rng, task.amplitude_min, task.amplitude_max);
      rec.pi = a;
      rec.values.resize(static_cast<Index>(grid.times.size()), 1);
      for (std::size_t i = 0; i < grid.times.size(); ++i) rec.values(static_cast<Index>(i), 0) = a * std::sin(grid.times[i]);
      break;
    }
  }
  return rec;
}

Dataset generate_dataset(const TaskSpec& task, std::size_t n_series, std::uint64_t seed) {
  if (n_series == 0) throw ConfigError("dataset must contain at least one series");
  if (task.points < 2) throw ConfigError("series need at least two time points");
  if (!(task.horizon > 0)) throw ConfigError("time horizon must be positive");
  Dataset data{task, seed, {}};
  data.series.reserve(n_series);
  for (std::size_t i = 0; i < n_series; ++i) data.series.push_back(generate_series(task, seed, static_cast<std::int64_t>(i)));
  return data;
}

// ---------------------------------------------------------------------------
// File format

namespace {

std::map<std::string, std::string> parse_pairs(std::istringstream& in, std::size_t line_no) {
  std::map<std::string, std::string> kv;
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value, got '" + tok + "'", line_no);
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double x = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return x;
  } catch (const std::exception&) {
    throw ParseError("invalid number '" + s + "'", line_no);
  }
}

std::pair<double, double> parse_range(const std::string& s, std::size_t line_no) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ParseError("invalid range '" + s + "'", line_no);
  return {parse_double(s.substr(0, comma), line_no), parse_double(s.substr(comma + 1), line_no)};
}

std::string range_str(double lo, double hi) { return format_g17(lo) + "," + format_g17(hi); }

}  // namespace

void write_dataset(std::ostream& os, const Dataset& data) {
  const TaskSpec& t = data.task;
  os << "#task=" << task_name(t.kind) << " seed=" << data.seed << " n=" << data.series.size()
     << " horizon=" << format_g17(t.horizon) << " points=" << t.points << " pi=" << privileged_name(t.kind) << '\n';
  os << "#params substeps=" << t.substeps;
  switch (t.kind) {
    case TaskKind::OscillatorStiffness:
      os << " mass=" << format_g17(t.mass) << " c=" << format_g17(t.fixed_damping)
         << " k_range=" << range_str(t.stiffness_min, t.stiffness_max);
      break;
    case TaskKind::OscillatorDamping:
      os << " mass=" << format_g17(t.mass) << " k=" << format_g17(t.fixed_stiffness)
         << " c_range=" << range_str(t.damping_min, t.damping_max);
      break;
    case TaskKind::LotkaVolterra:
      os << " u0_range=" << range_str(t.prey_min, t.prey_max) << " v0_range=" << range_str(t.predator_min, t.predator_max);
      break;
    case TaskKind::Sine:
      os << " a_range=" << range_str(t.amplitude_min, t.amplitude_max);
      break;
  }
  if (t.kind == TaskKind::OscillatorStiffness || t.kind == TaskKind::OscillatorDamping)
    os << " x0_bound=" << format_g17(t.position_bound) << " v0_bound=" << format_g17(t.velocity_bound);
  os << '\n';
  for (const auto& rec : data.series) {
    if (rec.values.rows() != static_cast<Index>(rec.times.size()))
      throw ContractError("series " + std::to_string(rec.id) + " has mismatched times and values");
    os << "series " << rec.id << " pi=" << format_g17(rec.pi) << '\n';
    for (Index i = 0; i < rec.values.rows(); ++i) {
      os << format_g17(rec.times[static_cast<std::size_t>(i)]);
      for (Index j = 0; j < rec.values.cols(); ++j) os << ' ' << format_g17(rec.values(i, j));
      os << '\n';
    }
  }
}

Dataset read_dataset(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty()) return true;
    }
    return false;
  };

  if (!next_line() || line.rfind("#task=", 0) != 0) throw ParseError("missing '#task=' header", line_no);
  Dataset data;
  std::size_t declared = 0;
  {
    std::istringstream in(line.substr(1));
    auto kv = parse_pairs(in, line_no);
    for (const char* key : {"task", "seed", "n", "horizon", "points", "pi"})
      if (!kv.count(key)) throw ParseError(std::string("header lacks '") + key + "'", line_no);
    try {
      data.task = TaskSpec::defaults(parse_task(kv["task"]));
      data.seed = std::stoull(kv["seed"]);
      declared = std::stoull(kv["n"]);
      data.task.points = std::stoull(kv["points"]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    } catch (const std::exception&) {
      throw ParseError("malformed header", line_no);
    }
    data.task.horizon = parse_double(kv["horizon"], line_no);
    if (kv["pi"] != privileged_name(data.task.kind))
      throw ParseError("privileged quantity '" + kv["pi"] + "' does not match task", line_no);
  }

  const Index dim = data.task.observation_dim();
  const auto points = data.task.points;
  TrajectoryRecord* current = nullptr;
  auto close_series = [&]() {
    if (current && current->times.size() != points)
      throw ParseError("series " + std::to_string(current->id) + " has " + std::to_string(current->times.size()) +
                           " points, expected " + std::to_string(points),
                       line_no);
  };
  std::vector<std::vector<double>> rows;
  while (next_line()) {
    if (line.rfind("#params", 0) == 0) {
      std::istringstream in(line.substr(7));
      auto kv = parse_pairs(in, line_no);
      TaskSpec& t = data.task;
      for (const auto& [key, value] : kv) {
        if (key == "substeps") t.substeps = static_cast<int>(parse_double(value, line_no));
        else if (key == "mass") t.mass = parse_double(value, line_no);
        else if (key == "c") t.fixed_damping = parse_double(value, line_no);
        else if (key == "k") t.fixed_stiffness = parse_double(value, line_no);
        else if (key == "k_range") std::tie(t.stiffness_min, t.stiffness_max) = parse_range(value, line_no);
        else if (key == "c_range") std::tie(t.damping_min, t.damping_max) = parse_range(value, line_no);
        else if (key == "u0_range") std::tie(t.prey_min, t.prey_max) = parse_range(value, line_no);
        else if (key == "v0_range") std::tie(t.predator_min, t.predator_max) = parse_range(value, line_no);
        else if (key == "a_range") std::tie(t.amplitude_min, t.amplitude_max) = parse_range(value, line_no);
        else if (key == "x0_bound") t.position_bound = parse_double(value, line_no);
        else if (key == "v0_bound") t.velocity_bound = parse_double(value, line_no);
        else throw ParseError("unknown parameter '" + key + "'", line_no);
      }
      continue;
    }
    if (line[0] == '#') continue;
    std::istringstream in(line);
    if (line.rfind("series ", 0) == 0) {
      close_series();
      std::string word, pi_tok;
      long long id = 0;
      if (!(in >> word >> id >> pi_tok) || pi_tok.rfind("pi=", 0) != 0)
        throw ParseError("malformed series line", line_no);
      TrajectoryRecord rec;
      rec.id = id;
      rec.task = data.task.kind;
      rec.pi = parse_double(pi_tok.substr(3), line_no);
      if (!std::isfinite(rec.pi)) throw ParseError("series " + std::to_string(id) + " has a non-finite pi", line_no);
      rec.values.resize(static_cast<Index>(points), dim);
      data.series.push_back(std::move(rec));
      current = &data.series.back();
      continue;
    }
    if (!current) throw ParseError("observation before any series line", line_no);
    if (current->times.size() >= points)
      throw ParseError("series " + std::to_string(current->id) + " has more than " + std::to_string(points) + " points",
                       line_no);
    std::string tok;
    std::vector<double> fields;
    while (in >> tok) fields.push_back(parse_double(tok, line_no));
    if (static_cast<Index>(fields.size()) != dim + 1)
      throw ParseError("expected " + std::to_string(dim + 1) + " columns, got " + std::to_string(fields.size()), line_no);
    const auto row = static_cast<Index>(current->times.size());
    current->times.push_back(fields[0]);
    for (Index j = 0; j < dim; ++j) current->values(row, j) = fields[static_cast<std::size_t>(j) + 1];
  }
  close_series();
  if (data.series.size() != declared)
    throw ParseError("header declares " + std::to_string(declared) + " series, file has " +
                         std::to_string(data.series.size()),
                     line_no);
  return data;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_dataset(os, data);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_dataset(is);
  } catch (const ParseError& e) {
    throw ParseError(path.string(), e.message(), e.line());
  }
}

}  // namespace lupindp
