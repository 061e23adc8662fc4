#include <doctest.h>

#include <cstdio>
#include <cstring>

#include "musel/al_loop.hpp"
#include "musel/errors.hpp"

using namespace musel;

namespace {

LoopConfig small_config() {
  LoopConfig cfg = LoopConfig::defaults(WorldConfig::one_sphere());
  cfg.m_cand = 40;
  return cfg;
}

// FNV-1a over the raw bytes of every stored input and effect.
std::uint64_t dataset_checksum(const RunState& s) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](double v) {
    unsigned char b[sizeof v];
    std::memcpy(b, &v, sizeof v);
    for (unsigned char c : b) h = (h ^ c) * 1099511628211ULL;
  };
  for (std::size_t i = 0; i < s.inputs.size(); ++i) {
    mix(s.inputs[i].alpha);
    mix(s.inputs[i].pos.x);
    mix(s.inputs[i].pos.y);
    mix(s.effects[i].delta.x);
    mix(s.effects[i].delta.y);
  }
  return h;
}

}  // namespace

TEST_CASE("top-k selection order and tie rule") {
  CHECK(select_top_k({1, 3, 2}, 1) == std::vector<std::size_t>{1});
  CHECK(select_top_k({5, 5, 5}, 1) == std::vector<std::size_t>{0});
  CHECK(select_top_k({1, 3, 2}, 3) == std::vector<std::size_t>{1, 2, 0});
  CHECK(select_top_k({2, 7, 2, 7}, 3) == std::vector<std::size_t>{1, 3, 0});
}

TEST_CASE("strategy names round trip and scores drop exactly one factor") {
  for (Strategy s : all_strategies()) CHECK(strategy_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(strategy_from_string("greedy"), ConfigError);
  const UncertaintyBreakdown u{2.0, 0.5, 0.25, 0.25};
  CHECK(strategy_score(Strategy::Musel, u) == 0.25);
  CHECK(strategy_score(Strategy::SigmaOnly, u) == 2.0);
  CHECK(strategy_score(Strategy::MdOnly, u) == 0.5);
  CHECK(strategy_score(Strategy::LpOnly, u) == 0.25);
  CHECK(strategy_score(Strategy::MuselNoSigma, u) == 0.125);
  CHECK(strategy_score(Strategy::MuselNoLp, u) == 1.0);
  CHECK(strategy_score(Strategy::MuselNoMd, u) == 0.5);
}

TEST_CASE("initial set is valid and deterministic") {
  const auto w = WorldConfig::two_sphere();
  RngStream a(1, "init"), b(1, "init");
  const auto xs = create_set(w, a, 5);
  CHECK(xs.size() == 5);
  CHECK(xs == create_set(w, b, 5));
  for (const auto& x : xs) CHECK(is_valid_position(w, x.pos));
  CHECK(create_set(w, a, 1).size() == 1);
}

TEST_CASE("zero iterations leave only the seed samples") {
  const RunState s = run(small_config(), Strategy::Musel, 3, 0);
  CHECK(s.inputs.size() == 1);
  CHECK(s.data.size() == 1);
  CHECK(s.observed.size() == 1);
  CHECK(s.log.empty());
}

TEST_CASE("dataset grows by k per iteration and never mutates") {
  LoopConfig cfg = small_config();
  cfg.k = 3;
  RunState s = init_run(cfg, Strategy::Musel, 4);
  std::vector<InputPoint> before;
  for (int i = 0; i < 6; ++i) {
    before = s.inputs;
    run_iteration(s);
    REQUIRE(s.inputs.size() == before.size() + 3);
    CHECK(std::equal(before.begin(), before.end(), s.inputs.begin()));
    CHECK(s.log.back().selected.size() == 3);
    CHECK(s.data.size() == s.inputs.size());
  }
}

TEST_CASE("logged selections agree with their breakdowns") {
  std::vector<std::vector<UncertaintyBreakdown>> seen;
  const IterationObserver obs = [&](const RunState&, const IterationRecord& rec, const IterationView& v) {
    seen.push_back(v.breakdowns);
    REQUIRE(v.candidates.size() == 40);
    const auto& sel = rec.selected.front();
    CHECK(v.candidates[sel.candidate] == sel.input);
    for (std::size_t i = 0; i < v.breakdowns.size(); ++i) {
      const auto& b = v.breakdowns[i];
      CHECK(v.scores[i] == b.sigma * b.lp);
      CHECK(v.scores[i] <= sel.score);
      CHECK(b.lp >= 1e-4);
      CHECK(b.lp <= 1.0);
    }
  };
  const RunState s = run(small_config(), Strategy::MuselNoMd, 5, 15, obs);
  CHECK(seen.size() == 15);
  for (const auto& rec : s.log) CHECK(rec.selected.front().effect == execute_and_observe(s.cfg.world, rec.selected.front().input));
}

TEST_CASE("identical seeds reproduce the run; strategies share candidate pools") {
  auto pools = [](Strategy st) {
    std::vector<std::vector<InputPoint>> out;
    run(small_config(), st, 6, 8,
        [&](const RunState&, const IterationRecord&, const IterationView& v) { out.push_back(v.candidates); });
    return out;
  };
  const auto musel = pools(Strategy::Musel);
  CHECK(musel == pools(Strategy::Musel));
  CHECK(musel == pools(Strategy::Random));
  CHECK(musel == pools(Strategy::SigmaOnly));

  const RunState a = run(small_config(), Strategy::Musel, 6, 8);
  const RunState b = run(small_config(), Strategy::Musel, 6, 8);
  CHECK(a.inputs == b.inputs);
  CHECK(flatten_parameters(a.model) == flatten_parameters(b.model));
  CHECK(run(small_config(), Strategy::Musel, 7, 8).inputs != a.inputs);
}

TEST_CASE("random strategy reproduces its reference dataset") {
  const RunState s = run(small_config(), Strategy::Random, 11, 25);
  CHECK(s.inputs.size() == 26);
  const std::uint64_t sum = dataset_checksum(s);
  CHECK(sum == 2997456787001414493ULL);
}
