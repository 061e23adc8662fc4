#include "musel/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "musel/analysis.hpp"
#include "musel/errors.hpp"

namespace musel {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> ExperimentConfig::grid_resolution() const {
  if (!test_grid.empty()) return test_grid;
  return task == Task::OneSphere ? std::vector<int>{25, 20, 20} : std::vector<int>{20, 25, 25};
}

LoopConfig ExperimentConfig::loop_config() const {
  LoopConfig lc;
  lc.world = world;
  lc.arch = arch;
  lc.lp = lp;
  lc.m_init = m_init;
  lc.m_cand = m_cand;
  lc.k = k;
  lc.m_train = m_train;
  lc.learning_rate = learning_rate;
  return lc;
}

void ExperimentConfig::validate() const {
  world.validate();
  if (world.task != task) throw ConfigError("world.task disagrees with task");
  if (strategies.empty()) throw ConfigError("no strategies given");
  if (seeds.empty()) throw ConfigError("no seeds given");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds must be distinct");
  const auto res = grid_resolution();
  if (res.size() != 3 || std::any_of(res.begin(), res.end(), [](int r) { return r < 1; }))
    throw ConfigError("test_grid must hold three positive resolutions");
  if (m_init < 1) throw ConfigError("m_init must be at least 1");
  if (k < 1 || m_cand < k) throw ConfigError("need 1 <= k <= m_cand");
  if (m_train < 1) throw ConfigError("m_train must be positive");
  if (eval_interval < 1) throw ConfigError("eval_interval must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
}

ExperimentConfig ExperimentConfig::desk_scale(Task task) {
  ExperimentConfig cfg;
  cfg.task = task;
  cfg.world = task == Task::OneSphere ? WorldConfig::one_sphere() : WorldConfig::two_sphere();
  cfg.arch.target_scale = std::max(cfg.world.half_extent_x, cfg.world.half_extent_y);
  cfg.n_iter = 500;
  cfg.seeds = {0, 1, 2, 3, 4};
  cfg.m_cand = 200;
  return cfg;
}

namespace {

const std::set<std::string> kTopKeys{
    "task",          "strategies",     "seeds",  "n_iter",          "m_init",         "m_cand",
    "k",             "m_train",        "learning_rate", "test_grid", "eval_interval",  "output_dir",
    "checkpoint_every", "log_candidates", "threads", "world",       "arch",           "lp"};

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, _] : j.items())
      if (!kTopKeys.count(key)) throw ConfigError("unknown config key '" + key + "'");
    // Nested sections accept exactly the keys their serializers emit.
    auto check_section = [&](const char* name, const json& known) {
      if (!j.contains(name)) return;
      if (!j.at(name).is_object()) throw ConfigError(std::string("'") + name + "' must be an object");
      for (const auto& [key, _] : j.at(name).items())
        if (!known.contains(key)) throw ConfigError("unknown config key '" + std::string(name) + "." + key + "'");
    };
    check_section("world", json(WorldConfig{}));
    check_section("arch", json(ArchitectureConfig{}));
    check_section("lp", json{{"bins", 0}, {"window", 0}, {"floor", 0}});
    ExperimentConfig cfg;
    if (j.contains("task")) cfg.task = task_from_string(j.at("task").get<std::string>());
    cfg.world = cfg.task == Task::OneSphere ? WorldConfig::one_sphere() : WorldConfig::two_sphere();
    if (j.contains("world")) {
      j.at("world").get_to(cfg.world);
      cfg.world.task = cfg.task;
    }
    cfg.arch.target_scale = std::max(cfg.world.half_extent_x, cfg.world.half_extent_y);
    if (j.contains("arch")) j.at("arch").get_to(cfg.arch);
    if (j.contains("strategies")) {
      cfg.strategies.clear();
      for (const auto& s : j.at("strategies")) cfg.strategies.push_back(strategy_from_string(s.get<std::string>()));
    }
    auto get = [&](const char* key, auto& out) {
      if (j.contains(key)) j.at(key).get_to(out);
    };
    get("seeds", cfg.seeds);
    get("n_iter", cfg.n_iter);
    get("m_init", cfg.m_init);
    get("m_cand", cfg.m_cand);
    get("k", cfg.k);
    get("m_train", cfg.m_train);
    get("learning_rate", cfg.learning_rate);
    get("test_grid", cfg.test_grid);
    get("eval_interval", cfg.eval_interval);
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    get("checkpoint_every", cfg.checkpoint_every);
    get("log_candidates", cfg.log_candidates);
    get("threads", cfg.threads);
    if (j.contains("lp")) {
      const auto& lp = j.at("lp");
      if (lp.contains("bins")) lp.at("bins").get_to(cfg.lp.bins);
      if (lp.contains("window")) lp.at("window").get_to(cfg.lp.window);
      if (lp.contains("floor")) lp.at("floor").get_to(cfg.lp.floor);
    }
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
  json strategies = json::array();
  for (Strategy s : cfg.strategies) strategies.push_back(to_string(s));
  return {{"task", to_string(cfg.task)},
          {"strategies", strategies},
          {"seeds", cfg.seeds},
          {"n_iter", cfg.n_iter},
          {"m_init", cfg.m_init},
          {"m_cand", cfg.m_cand},
          {"k", cfg.k},
          {"m_train", cfg.m_train},
          {"learning_rate", cfg.learning_rate},
          {"test_grid", cfg.grid_resolution()},
          {"eval_interval", cfg.eval_interval},
          {"output_dir", cfg.output_dir.string()},
          {"checkpoint_every", cfg.checkpoint_every},
          {"log_candidates", cfg.log_candidates},
          {"threads", cfg.threads},
          {"world", cfg.world},
          {"arch", cfg.arch},
          {"lp", {{"bins", cfg.lp.bins}, {"window", cfg.lp.window}, {"floor", cfg.lp.floor}}}};
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must be key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::stringstream path(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& child = (*node)[parts[i]];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("override path through non-object: " + key);
    node = &child;
  }
  (*node)[parts.back()] = value;
}

std::uint64_t test_grid_key(const WorldConfig& world, const std::vector<int>& resolution) {
  json key{{"world", world}, {"resolution", resolution}};
  return fnv1a(key.dump());
}

namespace {

std::uint64_t grid_checksum(const std::vector<InputPoint>& pts, const std::vector<Effect>& truth) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](double v) {
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(&v), sizeof v), h);
  };
  for (std::size_t i = 0; i < pts.size(); ++i) {
    mix(pts[i].alpha);
    mix(pts[i].pos.x);
    mix(pts[i].pos.y);
    mix(truth[i].delta.x);
    mix(truth[i].delta.y);
  }
  return h;
}

void finish_grid(TestGrid& g, const WorldConfig& world) {
  g.encoded.resize(static_cast<Eigen::Index>(g.points.size()), 4);
  for (std::size_t i = 0; i < g.points.size(); ++i)
    g.encoded.row(static_cast<Eigen::Index>(i)) = encode(g.points[i], world).transpose();
  g.checksum = grid_checksum(g.points, g.truth);
}

double lerp_axis(double lo, double hi, int i, int n) {
  return n == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (n - 1);
}

}  // namespace

TestGrid make_test_grid(const WorldConfig& world, const std::vector<int>& res) {
  if (res.size() != 3) throw ConfigError("test grid resolution needs three entries");
  const PlacementBox box = placement_box(world);
  TestGrid g;
  for (int a = 0; a < res[0]; ++a) {
    const double alpha = lerp_axis(kAlphaMin, kAlphaMax, a, res[0]);
    for (int i = 0; i < res[1]; ++i) {
      for (int j = 0; j < res[2]; ++j) {
        const Vec2 pos{lerp_axis(box.x_min, box.x_max, i, res[1]),
                       lerp_axis(box.y_min, box.y_max, j, res[2])};
        if (!is_valid_position(world, pos)) continue;
        const InputPoint x{alpha, pos};
        g.points.push_back(x);
        g.truth.push_back(execute_and_observe(world, x));
      }
    }
  }
  finish_grid(g, world);
  return g;
}

TestGrid load_or_make_test_grid(const WorldConfig& world, const std::vector<int>& res,
                                const fs::path& cache_dir) {
  const std::uint64_t key = test_grid_key(world, res);
  const fs::path path = cache_dir / ("grid_" + std::to_string(key) + ".json");
  if (fs::exists(path)) {
    try {
      std::ifstream is(path);
      const json j = json::parse(is);
      TestGrid g;
      for (const auto& row : j.at("points")) {
        g.points.push_back({row[0].get<double>(), {row[1].get<double>(), row[2].get<double>()}});
        g.truth.push_back({{row[3].get<double>(), row[4].get<double>()}});
      }
      finish_grid(g, world);
      if (j.at("key").get<std::uint64_t>() == key && j.at("checksum").get<std::uint64_t>() == g.checksum)
        return g;
      std::cerr << "warning: test grid cache " << path << " failed its checksum; rebuilding\n";
    } catch (const std::exception& e) {
      std::cerr << "warning: unreadable test grid cache " << path << ": " << e.what() << '\n';
    }
  }
  TestGrid g = make_test_grid(world, res);
  fs::create_directories(cache_dir);
  json pts = json::array();
  for (std::size_t i = 0; i < g.points.size(); ++i)
    pts.push_back({g.points[i].alpha, g.points[i].pos.x, g.points[i].pos.y, g.truth[i].delta.x,
                   g.truth[i].delta.y});
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    os << json{{"key", key}, {"checksum", g.checksum}, {"resolution", res}, {"world", world},
               {"points", pts}}
              .dump()
       << '\n';
  }
  fs::rename(tmp, path);
  return g;
}

double eval_rmse(const Model& model, const TestGrid& grid) {
  if (grid.points.empty()) throw ConfigError("eval_rmse on an empty grid");
  const auto preds = predict_batch(model, grid.encoded);
  double se = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double dx = preds[i].mean(0) - grid.truth[i].delta.x;
    const double dy = preds[i].mean(1) - grid.truth[i].delta.y;
    se += dx * dx + dy * dy;
  }
  return std::sqrt(se / static_cast<double>(preds.size()));
}

std::string run_log_name(Task task, Strategy s, std::uint64_t seed) {
  return to_string(task) + "_" + to_string(s) + "_seed" + std::to_string(seed) + ".jsonl";
}

namespace {

json header_config(const ExperimentConfig& cfg) {
  json j = experiment_config_to_json(cfg);
  // Neither affects results; kept out so logs compare byte-for-byte.
  j.erase("output_dir");
  j.erase("threads");
  return j;
}

json selection_json(const SelectionRecord& s) {
  return {{"cand", s.candidate},
          {"alpha", s.input.alpha},
          {"pos", {s.input.pos.x, s.input.pos.y}},
          {"effect", {s.effect.delta.x, s.effect.delta.y}},
          {"sigma", s.breakdown.sigma},
          {"min_dist", s.breakdown.min_dist},
          {"lp", s.breakdown.lp},
          {"u_model", s.breakdown.u_model},
          {"score", s.score},
          {"error", s.error}};
}

}  // namespace

RunOutcome run_logged(const ExperimentConfig& cfg, Strategy strategy, std::uint64_t seed,
                      const TestGrid& grid, std::ostream& os, std::ostream* timing,
                      std::ostream* candidates, const fs::path& checkpoint_prefix) {
  RunOutcome out{strategy, seed, {}, false, {}, {}};
  os << json{{"type", "header"},
             {"task", to_string(cfg.task)},
             {"strategy", to_string(strategy)},
             {"seed", seed},
             {"grid_checksum", grid.checksum},
             {"config", header_config(cfg)}}
            .dump()
     << '\n';
  if (timing) *timing << "iter,wall_seconds\n";
  if (candidates) {
    *candidates << "iter,cand_id,alpha,pos_x,pos_y,sigma,min_dist,lp,u_model,selected\n";
    candidates->precision(17);
  }

  auto observer = [&](const RunState& st, const IterationRecord& rec, const IterationView& view) {
    json line{{"type", "iter"},
              {"iter", rec.iter},
              {"loss", rec.training.mean_loss},
              {"train_samples", rec.training.samples}};
    json sel = json::array();
    for (const auto& s : rec.selected) sel.push_back(selection_json(s));
    line["selected"] = sel;
    json lp = json::array();
    for (const auto& [r, v] : rec.lp_updates) lp.push_back({r, v});
    line["lp_updates"] = lp;
    if (rec.iter % cfg.eval_interval == 0 || rec.iter == cfg.n_iter) {
      const double rmse = eval_rmse(st.model, grid);
      line["rmse"] = rmse;
      out.rmse[rec.iter] = rmse;
    }
    os << line.dump() << '\n';
    if (timing) *timing << rec.iter << ',' << rec.wall_seconds << '\n';
    if (candidates && !view.breakdowns.empty()) {
      std::set<std::size_t> chosen;
      for (const auto& s : rec.selected) chosen.insert(s.candidate);
      for (std::size_t c = 0; c < view.candidates.size(); ++c) {
        const auto& x = view.candidates[c];
        const auto& u = view.breakdowns[c];
        *candidates << rec.iter << ',' << c << ',' << x.alpha << ',' << x.pos.x << ',' << x.pos.y
                    << ',' << u.sigma << ',' << u.min_dist << ',' << u.lp << ',' << u.u_model << ','
                    << (chosen.count(c) ? 1 : 0) << '\n';
      }
    }
    if (cfg.checkpoint_every > 0 && rec.iter % cfg.checkpoint_every == 0 && !checkpoint_prefix.empty())
      save_checkpoint(st.model, checkpoint_prefix.string() + ".ckpt_" + std::to_string(rec.iter) + ".json");
  };

  std::size_t reached = 0;
  try {
    RunState st = init_run(cfg.loop_config(), strategy, seed);
    for (std::size_t i = 0; i < cfg.n_iter; ++i) {
      reached = i + 1;
      run_iteration(st, observer);
    }
    os << json{{"type", "end"}, {"iterations", cfg.n_iter}, {"dataset_size", st.data.size()}}.dump()
       << '\n';
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
    os << json{{"type", "error"}, {"iter", reached}, {"message", out.error}}.dump() << '\n';
  }
  os.flush();
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path runs_dir = cfg.output_dir / "runs";
  fs::create_directories(runs_dir);
  {
    std::ofstream os(cfg.output_dir / "config.json");
    os << experiment_config_to_json(cfg).dump(2) << '\n';
  }
  const TestGrid grid = load_or_make_test_grid(cfg.world, cfg.grid_resolution(), cfg.output_dir / "cache");

  struct Job {
    Strategy strategy;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Strategy s : cfg.strategies)
    for (std::uint64_t seed : cfg.seeds) jobs.push_back({s, seed});

  ExperimentResult result;
  result.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& job = jobs[i];
      const std::string name = run_log_name(cfg.task, job.strategy, job.seed);
      const fs::path log_path = runs_dir / name;
      const fs::path stem = runs_dir / name.substr(0, name.size() - 6);
      std::ofstream os(log_path);
      std::ofstream timing(stem.string() + ".timing.csv");
      std::ofstream cands;
      if (cfg.log_candidates) cands.open(stem.string() + ".candidates.csv");
      RunOutcome outcome = run_logged(cfg, job.strategy, job.seed, grid, os, &timing,
                                      cfg.log_candidates ? &cands : nullptr, stem);
      outcome.log_path = log_path;
      {
        std::lock_guard lock(report);
        if (!outcome.ok)
          std::cerr << "run " << name << " failed: " << outcome.error << '\n';
      }
      result.runs[i] = std::move(outcome);
    }
  };
  unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(jobs.size()));
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();

  // Aggregate this experiment's runs only, not stale files in the directory.
  std::vector<RunLog> logs;
  for (const auto& r : result.runs) {
    std::ifstream is(r.log_path);
    logs.push_back(parse_run_log(is));
  }
  result.aggregate_path = cfg.output_dir / "aggregate.csv";
  std::ofstream agg(result.aggregate_path);
  write_aggregate_csv(agg, aggregate_rmse(logs));
  return result;
}

}  // namespace musel
