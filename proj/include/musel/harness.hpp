#pragma once

// Experiment runner: multi-seed strategy comparisons with test-grid RMSE
// checkpoints, JSON-lines run logs and CSV aggregates.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "musel/al_loop.hpp"

namespace musel {

struct ExperimentConfig {
  Task task = Task::OneSphere;
  std::vector<Strategy> strategies{Strategy::Musel, Strategy::Random};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::size_t n_iter = 3000;
  std::size_t m_init = 1;
  std::size_t m_cand = 500;
  std::size_t k = 1;
  std::size_t m_train = 2000;
  double learning_rate = 5e-3;
  /// (alpha, pos_x, pos_y) resolution; empty means the task default.
  std::vector<int> test_grid;
  std::size_t eval_interval = 100;
  std::filesystem::path output_dir = "musel_out";
  /// Save a model checkpoint every this many iterations (0 disables).
  std::size_t checkpoint_every = 0;
  /// Write the per-candidate uncertainty CSV for every run.
  bool log_candidates = false;
  unsigned threads = 0;  // 0: hardware concurrency
  WorldConfig world;
  ArchitectureConfig arch;
  LpConfig lp;

  std::vector<int> grid_resolution() const;
  LoopConfig loop_config() const;
  void validate() const;

  /// Laptop-sized protocol: 500 iterations, 5 seeds, 200 candidates.
  static ExperimentConfig desk_scale(Task task);
};

/// Parses a config document. Unknown keys are rejected; missing keys keep
/// defaults, and the world defaults follow the task. Throws ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);

/// Applies `key=value` overrides (dotted keys reach nested objects; values are
/// parsed as JSON when possible, else taken as strings).
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct TestGrid {
  std::vector<InputPoint> points;
  std::vector<Effect> truth;
  Eigen::MatrixXd encoded;
  std::uint64_t checksum = 0;
};

/// Uniform (alpha, pos_x, pos_y) grid over the push range and the placement
/// box; invalid placements dropped; ground truth from the environment.
TestGrid make_test_grid(const WorldConfig& world, const std::vector<int>& resolution);

/// Cache key for a grid: hash of the world config and resolution.
std::uint64_t test_grid_key(const WorldConfig& world, const std::vector<int>& resolution);

/// Loads the cached grid under cache_dir if its key and checksum match,
/// otherwise builds and writes it.
TestGrid load_or_make_test_grid(const WorldConfig& world, const std::vector<int>& resolution,
                                const std::filesystem::path& cache_dir);

/// sqrt(mean ||pred.mean - truth||^2) over the grid.
double eval_rmse(const Model& model, const TestGrid& grid);

struct RunOutcome {
  Strategy strategy;
  std::uint64_t seed;
  std::filesystem::path log_path;
  bool ok = false;
  std::string error;
  std::map<std::size_t, double> rmse;  // iteration -> RMSE
};

struct ExperimentResult {
  std::vector<RunOutcome> runs;
  std::filesystem::path aggregate_path;
};

std::string run_log_name(Task task, Strategy s, std::uint64_t seed);

/// Executes every (strategy, seed) run, writes logs and the aggregate CSV.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// One AL run written as JSON lines to `os`; returns the RMSE checkpoints.
RunOutcome run_logged(const ExperimentConfig& cfg, Strategy strategy, std::uint64_t seed,
                      const TestGrid& grid, std::ostream& os, std::ostream* timing = nullptr,
                      std::ostream* candidates = nullptr,
                      const std::filesystem::path& checkpoint_prefix = {});

}  // namespace musel
