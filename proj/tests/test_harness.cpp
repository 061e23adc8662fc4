#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "musel/analysis.hpp"
#include "musel/errors.hpp"
#include "musel/harness.hpp"

using namespace musel;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("musel_harness_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.task = Task::OneSphere;
  cfg.world = WorldConfig::one_sphere();
  cfg.strategies = {Strategy::Musel, Strategy::Random};
  cfg.seeds = {0, 1, 2};
  cfg.n_iter = 20;
  cfg.m_cand = 20;
  cfg.test_grid = {5, 4, 4};
  cfg.eval_interval = 10;
  cfg.output_dir = out;
  cfg.threads = 1;
  cfg.arch.target_scale = 4.0;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

RunLog synthetic_log(Strategy s, std::uint64_t seed, const std::vector<Vec2>& positions) {
  RunLog log;
  log.strategy = s;
  log.seed = seed;
  log.world = WorldConfig::one_sphere();
  log.complete = true;
  log.iterations = positions.size();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    LoggedSelection sel;
    sel.iter = i + 1;
    sel.input = {0.0, positions[i]};
    log.selections.push_back(sel);
  }
  return log;
}

}  // namespace

TEST_CASE("test grid covers valid placements with ground truth") {
  const auto w = WorldConfig::one_sphere();
  const TestGrid g = make_test_grid(w, {5, 4, 4});
  CHECK(!g.points.empty());
  CHECK(g.points.size() <= 80);
  CHECK(g.truth.size() == g.points.size());
  for (std::size_t i = 0; i < g.points.size(); ++i) {
    CHECK(is_valid_position(w, g.points[i].pos));
    CHECK(g.truth[i] == execute_and_observe(w, g.points[i]));
  }
  CHECK(ExperimentConfig::desk_scale(Task::OneSphere).grid_resolution() == std::vector<int>{25, 20, 20});
  CHECK(ExperimentConfig::desk_scale(Task::TwoSphere).grid_resolution() == std::vector<int>{20, 25, 25});
}

TEST_CASE("RMSE of a zero predictor and invariance to point order") {
  const auto w = WorldConfig::one_sphere();
  TestGrid g = make_test_grid(w, {5, 4, 4});
  ArchitectureConfig arch;
  arch.target_scale = 4.0;
  Model zero = init_model(1, arch);
  for (auto& h : zero.heads) h.var_mean.setZero();  // m = 0: predictive mean is exactly 0
  double ss = 0.0;
  for (const auto& t : g.truth) ss += t.delta.x * t.delta.x + t.delta.y * t.delta.y;
  const double expected = std::sqrt(ss / static_cast<double>(g.truth.size()));
  CHECK(eval_rmse(zero, g) == doctest::Approx(expected).epsilon(1e-12));

  Model trained = init_model(2, arch);
  for (auto& h : trained.heads) h.var_mean.setConstant(0.3);
  const double before = eval_rmse(trained, g);
  std::reverse(g.points.begin(), g.points.end());
  std::reverse(g.truth.begin(), g.truth.end());
  g.encoded = g.encoded.colwise().reverse().eval();
  CHECK(eval_rmse(trained, g) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("grid cache is reused, and invalidated by world changes or corruption") {
  const fs::path dir = fresh_dir("cache");
  auto w = WorldConfig::one_sphere();
  const TestGrid a = load_or_make_test_grid(w, {4, 3, 3}, dir);
  const TestGrid b = load_or_make_test_grid(w, {4, 3, 3}, dir);
  CHECK(a.checksum == b.checksum);
  CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}) == 1);

  w.restitution = 0.5;
  CHECK(test_grid_key(w, {4, 3, 3}) != test_grid_key(WorldConfig::one_sphere(), {4, 3, 3}));
  const TestGrid c = load_or_make_test_grid(w, {4, 3, 3}, dir);
  CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}) == 2);
  CHECK(c.checksum != a.checksum);

  const fs::path file = dir / ("grid_" + std::to_string(test_grid_key(WorldConfig::one_sphere(), {4, 3, 3})) + ".json");
  auto doc = nlohmann::json::parse(slurp(file));
  doc["points"][0][3] = 99.0;
  std::ofstream(file) << doc.dump();
  const TestGrid d = load_or_make_test_grid(WorldConfig::one_sphere(), {4, 3, 3}, dir);
  CHECK(d.checksum == a.checksum);
  CHECK(d.truth[0] == a.truth[0]);
  fs::remove_all(dir);
}

TEST_CASE("config parsing: defaults, unknown keys, overrides, validation") {
  const auto cfg = experiment_config_from_json(nlohmann::json::object());
  CHECK(cfg.n_iter == 3000);
  CHECK(cfg.m_cand == 500);
  CHECK(cfg.seeds.size() == 10);
  CHECK(cfg.eval_interval == 100);
  CHECK_THROWS_AS(experiment_config_from_json({{"n_iters", 5}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"world", {{"gravity", 9.8}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"seeds", {1, 1}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"test_grid", {0, 2, 2}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"strategies", {"greedy"}}}), ConfigError);

  nlohmann::json doc = nlohmann::json::object();
  apply_override(doc, "n_iter=42");
  apply_override(doc, "world.restitution=0.7");
  apply_override(doc, "task=two_sphere");
  apply_override(doc, "strategies=[\"sigma\",\"md\"]");
  const auto o = experiment_config_from_json(doc);
  CHECK(o.n_iter == 42);
  CHECK(o.task == Task::TwoSphere);
  CHECK(o.world.task == Task::TwoSphere);
  CHECK(o.world.restitution == 0.7);
  CHECK(o.strategies == std::vector<Strategy>{Strategy::SigmaOnly, Strategy::MdOnly});
  CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);

  const auto round = experiment_config_from_json(experiment_config_to_json(o));
  CHECK(experiment_config_to_json(round) == experiment_config_to_json(o));
}

TEST_CASE("experiment writes one log per run and a consistent aggregate") {
  const fs::path dir = fresh_dir("experiment");
  const auto result = run_experiment(tiny_config(dir));
  REQUIRE(result.runs.size() == 6);
  for (const auto& r : result.runs) CHECK(r.ok);
  std::size_t n_logs = 0;
  for (const auto& e : fs::directory_iterator(dir / "runs")) n_logs += e.path().extension() == ".jsonl";
  CHECK(n_logs == 6);
  CHECK(fs::exists(result.aggregate_path));
  CHECK(fs::exists(dir / "config.json"));

  // Independent recomputation of mean and SEM from the raw log lines.
  std::map<std::pair<std::string, long>, std::vector<double>> by_key;
  for (const auto& e : fs::directory_iterator(dir / "runs")) {
    if (e.path().extension() != ".jsonl") continue;
    std::ifstream is(e.path());
    std::string line, strategy;
    while (std::getline(is, line)) {
      const auto j = nlohmann::json::parse(line);
      if (j["type"] == "header") strategy = j["strategy"];
      if (j["type"] == "iter" && j.contains("rmse")) by_key[{strategy, j["iter"].get<long>()}].push_back(j["rmse"]);
    }
  }
  const auto rows = aggregate_rmse(load_run_logs(dir / "runs"));
  CHECK(rows.size() == by_key.size());
  for (const auto& row : rows) {
    const auto& v = by_key.at({to_string(row.strategy), static_cast<long>(row.iter)});
    REQUIRE(v.size() == 3);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= 3.0;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= 2.0;
    CHECK(row.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(row.sem == doctest::Approx(std::sqrt(var / 3.0)).epsilon(1e-9));
    CHECK(row.runs == 3);
  }

  auto logs = load_run_logs(dir / "runs");
  std::reverse(logs.begin(), logs.end());
  std::ostringstream a, b;
  write_aggregate_csv(a, aggregate_rmse(logs));
  write_aggregate_csv(b, rows);
  CHECK(a.str() == b.str());

  // Analysis over the logs is idempotent.
  AnalyzeOptions opts;
  opts.checkpoints = {10, 20};
  opts.svg = true;
  const auto files = analyze_logs(dir / "runs", dir / "analysis", opts);
  std::map<fs::path, std::string> first;
  for (const auto& f : files) first[f] = slurp(f);
  analyze_logs(dir / "runs", dir / "analysis", opts);
  for (const auto& f : files) CHECK(slurp(f) == first[f]);
  fs::remove_all(dir);
}

TEST_CASE("failed runs are reported and the aggregate warns") {
  RunLog ok = synthetic_log(Strategy::Random, 0, {});
  ok.rmse = {{10, 1.0}};
  RunLog ok2 = ok;
  ok2.seed = 1;
  ok2.rmse = {{10, 3.0}};
  RunLog bad = ok;
  bad.seed = 2;
  bad.complete = false;
  bad.error = "boom";
  bad.rmse.clear();
  const auto rows = aggregate_rmse({ok, ok2, bad});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].mean == 2.0);
  CHECK(rows[0].runs == 2);
  CHECK(rows[0].failed == 1);
  CHECK(!rows[0].warning.empty());
}

TEST_CASE("sampling histogram") {
  const auto one = synthetic_log(Strategy::Random, 0, std::vector<Vec2>(7, Vec2{0.3, -1.2}));
  const Histogram2D h = sampling_histogram({one}, 50);
  CHECK(h.total == 7);
  CHECK(std::count_if(h.counts.begin(), h.counts.end(), [](long c) { return c > 0; }) == 1);

  RngStream rng(1, "hist");
  std::vector<Vec2> pts;
  for (const auto& x : sample_input_space(WorldConfig::one_sphere(), rng, 3000)) pts.push_back(x.pos);
  const Histogram2D g = sampling_histogram({synthetic_log(Strategy::Random, 0, pts)}, 50);
  const auto n = g.normalized();
  double s = 0.0;
  for (double v : n) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  const auto l = g.log_scaled();
  for (std::size_t i = 0; i < n.size(); ++i) CHECK(l[i] == doctest::Approx(std::log10(1.0 + n[i])));
  std::ostringstream csv;
  write_histogram_csv(csv, g);
  CHECK(csv.str().rfind("ix,iy", 0) == 0);
}

TEST_CASE("boundary counts at the band extremes") {
  RngStream rng(2, "boundary");
  std::vector<RunLog> logs;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::vector<Vec2> pts;
    for (const auto& x : sample_input_space(WorldConfig::one_sphere(), rng, 60)) pts.push_back(x.pos);
    logs.push_back(synthetic_log(Strategy::MdOnly, seed, pts));
  }
  const std::vector<std::size_t> cps{20, 40, 60};
  for (const auto& row : boundary_counts(logs, 0.0, cps))
    for (auto c : cps) CHECK(row.mean_counts.at(c) == 0.0);
  for (const auto& row : boundary_counts(logs, 1.0, cps))
    for (auto c : cps) CHECK(row.mean_counts.at(c) == static_cast<double>(c));
  const auto mid = boundary_counts(logs, 0.1, cps);
  REQUIRE(mid.size() == 1);
  CHECK(mid[0].mean_counts.at(20) <= mid[0].mean_counts.at(60));

  const auto w = WorldConfig::one_sphere();
  CHECK(distance_to_walls(w, {0.0, 0.0}) == doctest::Approx(5.5 / std::sqrt(2.0)));
  CHECK(distance_to_walls(w, {-3.5, 0.0}) == doctest::Approx(0.5));
}

TEST_CASE("LP traces") {
  RunLog log = synthetic_log(Strategy::Musel, 0, std::vector<Vec2>(5, Vec2{0.0, 0.0}));
  const std::size_t r = 171;
  const double lps[] = {1.0, 0.5, 0.5, 1e-4, 0.2};
  for (std::size_t i = 0; i < 5; ++i) log.lp_updates.push_back({i + 1, r, lps[i]});
  log.lp_updates.push_back({3, 7, 0.9});
  const auto tr = lp_trace(log, {r, 0});
  REQUIRE(tr.size() == 12);
  for (const auto& p : tr) {
    if (p.region == 0) CHECK(p.lp == 1.0);
    if (p.region == r && p.iter > 0) CHECK(p.lp == lps[p.iter - 1]);
  }
  CHECK_THROWS_AS(lp_trace(log, {343}), std::out_of_range);

  // A region fed monotonically decreasing errors keeps LP above the floor.
  LpGrid grid(WorldConfig::one_sphere());
  for (int i = 0; i < 30; ++i) {
    grid.add_error(r, 10.0 / (1.0 + i));
    grid.snapshot_errors();
    CHECK(grid.learning_progress(r) > 1e-4);
  }
}
