// musel: run active-learning experiments, analyze their logs, precompute test
// grids and dump push trajectories.
//
// Exit codes: 0 success, 2 configuration error, 3 run failure.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "musel/analysis.hpp"
#include "musel/errors.hpp"
#include "musel/harness.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kRunFailure = 3;

nlohmann::json read_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw musel::ConfigError("cannot open config " + path);
    doc = nlohmann::json::parse(is, nullptr, false);
    if (doc.is_discarded()) throw musel::ConfigError("config " + path + " is not valid JSON");
  }
  for (const auto& o : overrides) {
    std::string s = o;
    if (s.rfind("--", 0) == 0) s = s.substr(2);
    musel::apply_override(doc, s);
  }
  return doc;
}

std::vector<std::size_t> parse_list(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoul(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active learning for action-effect regression"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run every (strategy, seed) of an experiment config");
  run->add_option("config", config_path, "Experiment config (JSON)");
  run->allow_extras();

  std::string log_dir;
  std::string out_dir;
  std::string checkpoints;
  std::string regions;
  musel::AnalyzeOptions analyze_opts;
  auto* analyze = app.add_subcommand("analyze", "Derive CSV/SVG artifacts from run logs");
  analyze->add_option("logdir", log_dir, "Directory of *.jsonl run logs")->required();
  analyze->add_option("--out", out_dir, "Output directory (default: <logdir>/../analysis)");
  analyze->add_option("--bins", analyze_opts.histogram_bins, "Sampling histogram bins per axis");
  analyze->add_option("--band", analyze_opts.band_fraction, "Boundary band, fraction of half-extent");
  analyze->add_option("--checkpoints", checkpoints, "Comma-separated boundary-count iterations");
  analyze->add_option("--regions", regions, "Comma-separated LP region ids to trace");
  analyze->add_flag("--svg", analyze_opts.svg, "Also write SVG plots");

  std::string grid_config;
  auto* gridgen = app.add_subcommand("gridgen", "Precompute and cache the test-grid ground truth");
  gridgen->add_option("config", grid_config, "Experiment config (JSON)");
  gridgen->allow_extras();

  double alpha = 0.0, px = 0.0, py = 0.0;
  std::string task_name = "one_sphere";
  auto* trace = app.add_subcommand("trace", "Dump one push trajectory as CSV");
  trace->add_option("--alpha", alpha, "Push angle in radians")->required();
  trace->add_option("--x", px, "Initial x")->required();
  trace->add_option("--y", py, "Initial y")->required();
  trace->add_option("--task", task_name, "one_sphere or two_sphere");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kConfigError;
  }

  try {
    if (*run) {
      const auto cfg = musel::experiment_config_from_json(read_config(config_path, run->remaining()));
      const auto result = musel::run_experiment(cfg);
      std::size_t failed = 0;
      for (const auto& r : result.runs) failed += r.ok ? 0 : 1;
      std::cout << "runs: " << result.runs.size() << ", failed: " << failed
                << "\naggregate: " << result.aggregate_path.string() << '\n';
      return failed ? kRunFailure : 0;
    }
    if (*gridgen) {
      const auto cfg = musel::experiment_config_from_json(read_config(grid_config, gridgen->remaining()));
      const auto grid = musel::load_or_make_test_grid(cfg.world, cfg.grid_resolution(), cfg.output_dir / "cache");
      std::cout << "grid points: " << grid.points.size() << ", checksum: " << grid.checksum << '\n';
      return 0;
    }
    if (*analyze) {
      if (!checkpoints.empty()) analyze_opts.checkpoints = parse_list(checkpoints);
      if (!regions.empty()) analyze_opts.lp_regions = parse_list(regions);
      const std::filesystem::path out =
          out_dir.empty() ? std::filesystem::path(log_dir).parent_path() / "analysis" : std::filesystem::path(out_dir);
      for (const auto& f : musel::analyze_logs(log_dir, out, analyze_opts)) std::cout << f.string() << '\n';
      return 0;
    }
    if (*trace) {
      auto world = musel::task_from_string(task_name) == musel::Task::OneSphere ? musel::WorldConfig::one_sphere()
                                                                                 : musel::WorldConfig::two_sphere();
      const musel::Vec2 pos{px, py};
      if (!musel::is_valid_position(world, pos)) throw musel::ConfigError("invalid initial position");
      const auto roll = musel::simulate_roll_detailed(world, pos, {std::cos(alpha), std::sin(alpha)},
                                                      world.push_speed, true);
      musel::write_trajectory_csv(std::cout, roll.trace);
      return 0;
    }
  } catch (const musel::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::out_of_range& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "run failure: " << e.what() << '\n';
    return kRunFailure;
  }
  return 0;
}
