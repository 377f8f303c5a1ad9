#pragma once

// Data generators for the oscillator and predator-prey tasks, plus the
// line-oriented dataset file format.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lupindp/distributions.hpp"
#include "lupindp/odeint.hpp"
#include "lupindp/tensor.hpp"

namespace lupindp {

enum class TaskKind { OscillatorStiffness, OscillatorDamping, LotkaVolterra, Sine };

std::string task_name(TaskKind kind);
// Accepts canonical names plus the short aliases stiffness, damping, lv.
TaskKind parse_task(const std::string& name);
// Name of the privileged quantity attached to each series: k, c, V or a.
std::string privileged_name(TaskKind kind);

// Two masses between walls joined by three identical springs.
struct OscillatorParams {
  double m1 = 1.0;
  double m2 = 1.0;
  double k = 1.0;  // spring constant
  double c = 1.0;  // damping constant
  Eigen::Vector2d x0 = Eigen::Vector2d::Zero();
  Eigen::Vector2d v0 = Eigen::Vector2d::Zero();

  void validate() const;
};

struct LvParams {
  double alpha = 2.0 / 3.0;
  double beta = 4.0 / 3.0;
  double gamma = 1.0;
  double delta = 1.0;
  double u0 = 1.0;  // prey
  double v0 = 0.5;  // predator

  void validate() const;
};

struct OscillatorTrajectory {
  Matrix positions;   // points × 2
  Matrix velocities;  // points × 2
};

OscillatorTrajectory simulate_oscillators(const OscillatorParams& p, const SolveGrid& grid);
// ½(m₁ẋ₁² + m₂ẋ₂²) + ½k(x₁² + (x₂−x₁)² + x₂²)
double oscillator_energy(const OscillatorParams& p, const Eigen::Vector2d& x, const Eigen::Vector2d& v);

// Columns (u, v). Throws IntegrationError if a population goes negative.
Matrix simulate_lv(const LvParams& p, const SolveGrid& grid);
// δu − γ ln u + βv − α ln v
double conserved_quantity_v(const LvParams& p, double u, double v);

struct TaskSpec {
  TaskKind kind = TaskKind::LotkaVolterra;
  double horizon = 15.0;
  std::size_t points = 100;
  int substeps = 10;  // RK4 steps per output interval

  // Values held fixed while another parameter is sampled.
  double mass = 1.0;
  double fixed_stiffness = 1.0;  // damping task
  double fixed_damping = 1.0;    // stiffness task
  // Sampling ranges.
  double stiffness_min = 0.2, stiffness_max = 1.0;
  double damping_min = 0.5, damping_max = 2.0;
  double position_bound = 1.0;  // x(0) ~ U(-b, b)
  double velocity_bound = 0.5;  // ẋ(0) ~ U(-b, b)
  double prey_min = 0.2, prey_max = 1.0;
  double predator_min = 0.1, predator_max = 0.5;
  double amplitude_min = 0.5, amplitude_max = 1.5;  // sine toy task

  static TaskSpec defaults(TaskKind kind);
  Index observation_dim() const { return kind == TaskKind::Sine ? 1 : 2; }
  SolveGrid grid() const { return SolveGrid::uniform(0.0, horizon, points, substeps); }
};

struct TrajectoryRecord {
  std::int64_t id = 0;
  std::vector<double> times;
  Matrix values;  // points × observation dim
  double pi = 0.0;
  TaskKind task = TaskKind::LotkaVolterra;
};

struct Dataset {
  TaskSpec task;
  std::uint64_t seed = 0;
  std::vector<TrajectoryRecord> series;
};

// Masses, springs and initial state behind oscillator series `id`.
OscillatorParams oscillator_params(const TaskSpec& task, std::uint64_t seed, std::int64_t id);
// One series; the rng stream depends only on (seed, id).
TrajectoryRecord generate_series(const TaskSpec& task, std::uint64_t seed, std::int64_t id);
Dataset generate_dataset(const TaskSpec& task, std::size_t n_series, std::uint64_t seed);

void write_dataset(std::ostream& os, const Dataset& data);
Dataset read_dataset(std::istream& is);
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace lupindp
