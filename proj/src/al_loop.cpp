#include "musel/al_loop.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "musel/errors.hpp"

namespace musel {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Random: return "random";
    case Strategy::SigmaOnly: return "sigma";
    case Strategy::LpOnly: return "lp";
    case Strategy::MdOnly: return "md";
    case Strategy::Musel: return "musel";
    case Strategy::MuselNoSigma: return "musel_no_sigma";
    case Strategy::MuselNoLp: return "musel_no_lp";
    case Strategy::MuselNoMd: return "musel_no_md";
  }
  return "unknown";
}

const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> all{Strategy::Random,       Strategy::SigmaOnly,
                                         Strategy::LpOnly,       Strategy::MdOnly,
                                         Strategy::Musel,        Strategy::MuselNoSigma,
                                         Strategy::MuselNoLp,    Strategy::MuselNoMd};
  return all;
}

Strategy strategy_from_string(const std::string& name) {
  for (Strategy s : all_strategies())
    if (to_string(s) == name) return s;
  throw ConfigError("unknown strategy '" + name + "'");
}

double strategy_score(Strategy s, const UncertaintyBreakdown& u) {
  switch (s) {
    case Strategy::Random: return 0.0;
    case Strategy::SigmaOnly: return u.sigma;
    case Strategy::LpOnly: return u.lp;
    case Strategy::MdOnly: return u.min_dist;
    case Strategy::Musel: return u.u_model;
    case Strategy::MuselNoSigma: return u.min_dist * u.lp;
    case Strategy::MuselNoLp: return u.sigma * u.min_dist;
    case Strategy::MuselNoMd: return u.sigma * u.lp;
  }
  return 0.0;
}

LoopConfig LoopConfig::defaults(const WorldConfig& world) {
  LoopConfig cfg;
  cfg.world = world;
  cfg.arch.target_scale = std::max(world.half_extent_x, world.half_extent_y);
  return cfg;
}

void RunState::append(const InputPoint& x, const Effect& y) {
  inputs.push_back(x);
  effects.push_back(y);
  const Eigen::Vector4d enc = encode(x, cfg.world);
  data.inputs.emplace_back(enc);
  data.targets.emplace_back(Eigen::Vector2d(y.delta.x, y.delta.y));
  observed.add(enc);
}

std::vector<InputPoint> create_set(const WorldConfig& cfg, RngStream& rng, std::size_t m_init) {
  if (m_init < 1) throw ConfigError("m_init must be at least 1");
  return sample_input_space(cfg, rng, m_init);
}

std::vector<std::size_t> select_top_k(const std::vector<double>& scores, std::size_t k) {
  if (k < 1 || k > scores.size()) throw ConfigError("select_top_k: need 1 <= k <= |candidates|");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  return idx;
}

RunState init_run(const LoopConfig& cfg, Strategy strategy, std::uint64_t seed) {
  cfg.world.validate();
  if (cfg.k < 1 || cfg.m_cand < cfg.k) throw ConfigError("need 1 <= k <= m_cand");
  RunState st{.cfg = cfg,
              .strategy = strategy,
              .seed = seed,
              .inputs = {},
              .effects = {},
              .data = {},
              .observed = {},
              .model = {},
              .grid = LpGrid(cfg.world, cfg.lp),
              .iteration = 0,
              .candidate_rng = RngStream(seed, "candidates"),
              .env_rng = RngStream(seed, "environment"),
              .train_rng = RngStream(seed, "training"),
              .log = {}};
  for (const auto& x : create_set(cfg.world, st.env_rng, cfg.m_init))
    st.append(x, execute_and_observe(cfg.world, x));
  st.model = init_model(fnv1a("model", seed), cfg.arch);
  return st;
}

void run_iteration(RunState& st, const IterationObserver& observer) {
  const auto t0 = std::chrono::steady_clock::now();
  const LoopConfig& cfg = st.cfg;
  IterationRecord rec;
  rec.iter = ++st.iteration;

  rec.training = train_epoch(st.model, st.data, cfg.learning_rate, cfg.m_train, st.train_rng);

  const std::vector<InputPoint> candidates = sample_input_space(cfg.world, st.candidate_rng, cfg.m_cand);
  std::vector<UncertaintyBreakdown> breakdowns;
  std::vector<double> scores;
  std::vector<std::size_t> chosen;
  if (st.strategy == Strategy::Random) {
    // Pool members are already i.i.d. draws; take the first k.
    chosen.resize(cfg.k);
    std::iota(chosen.begin(), chosen.end(), 0);
  } else {
    breakdowns = estimate_model_uncertainty(st.model, st.grid, st.observed, candidates, cfg.world);
    scores.reserve(breakdowns.size());
    for (const auto& u : breakdowns) scores.push_back(strategy_score(st.strategy, u));
    chosen = select_top_k(scores, cfg.k);
  }

  for (std::size_t c : chosen) {
    const InputPoint& x = candidates[c];
    const Prediction pred = predict(st.model, encode(x, cfg.world));
    SelectionRecord sel;
    sel.candidate = c;
    sel.input = x;
    if (breakdowns.empty()) {
      sel.breakdown = combine_uncertainty({pred}, st.grid, st.observed, {x}, cfg.world).front();
    } else {
      sel.breakdown = breakdowns[c];
      sel.score = scores[c];
    }
    sel.effect = execute_and_observe(cfg.world, x);
    sel.error = std::hypot(pred.mean(0) - sel.effect.delta.x, pred.mean(1) - sel.effect.delta.y);
    st.grid.record_error(x, pred, sel.effect);
    rec.selected.push_back(sel);
  }
  // Appended only after every selection was scored against the same dataset.
  for (const auto& sel : rec.selected) st.append(sel.input, sel.effect);

  for (std::size_t r : st.grid.snapshot_errors())
    rec.lp_updates.emplace_back(r, st.grid.learning_progress(r));

  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  st.log.push_back(rec);
  if (observer) observer(st, st.log.back(), IterationView{candidates, breakdowns, scores});
}

RunState run(const LoopConfig& cfg, Strategy strategy, std::uint64_t seed, std::size_t n_iter,
             const IterationObserver& observer) {
  RunState st = init_run(cfg, strategy, seed);
  for (std::size_t i = 0; i < n_iter; ++i) run_iteration(st, observer);
  return st;
}

}  // namespace musel
