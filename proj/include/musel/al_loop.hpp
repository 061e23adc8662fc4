#pragma once

// The active-learning loop: train, draw a candidate pool, score, execute the
// top-k, append.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "musel/dkl.hpp"
#include "musel/env_sim.hpp"
#include "musel/rng.hpp"
#include "musel/uncertainty.hpp"

namespace musel {

enum class Strategy { Random, SigmaOnly, LpOnly, MdOnly, Musel, MuselNoSigma, MuselNoLp, MuselNoMd };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);
const std::vector<Strategy>& all_strategies();

/// Ranking score of a candidate. Ablations replace the dropped factor by 1.
/// Not meaningful for Random, which does not score.
double strategy_score(Strategy s, const UncertaintyBreakdown& u);

struct LoopConfig {
  WorldConfig world;
  ArchitectureConfig arch;
  LpConfig lp;
  std::size_t m_init = 1;
  std::size_t m_cand = 500;
  std::size_t k = 1;
  std::size_t m_train = 2000;
  double learning_rate = 5e-3;

  /// Defaults with the target scale tied to the table size.
  static LoopConfig defaults(const WorldConfig& world);
};

struct SelectionRecord {
  std::size_t candidate = 0;
  InputPoint input;
  Effect effect;
  UncertaintyBreakdown breakdown;
  double score = 0.0;
  /// Error of the pre-execution prediction.
  double error = 0.0;
};

struct IterationRecord {
  std::size_t iter = 0;
  std::vector<SelectionRecord> selected;
  EpochStats training;
  /// (region, new LP) for every region snapshotted this iteration.
  std::vector<std::pair<std::size_t, double>> lp_updates;
  double wall_seconds = 0.0;
};

struct RunState {
  LoopConfig cfg;
  Strategy strategy = Strategy::Musel;
  std::uint64_t seed = 0;
  std::vector<InputPoint> inputs;
  std::vector<Effect> effects;
  Dataset data;
  TrainingSet observed;
  Model model;
  LpGrid grid;
  std::size_t iteration = 0;
  RngStream candidate_rng;
  RngStream env_rng;
  RngStream train_rng;
  std::vector<IterationRecord> log;

  void append(const InputPoint& x, const Effect& y);
};

/// m_init i.i.d. valid inputs.
std::vector<InputPoint> create_set(const WorldConfig& cfg, RngStream& rng, std::size_t m_init);

/// Indices of the k largest scores; ties go to the lower index. Result is in
/// descending score order.
std::vector<std::size_t> select_top_k(const std::vector<double>& scores, std::size_t k);

/// Seeds the dataset with m_init executed inputs and initializes the model.
RunState init_run(const LoopConfig& cfg, Strategy strategy, std::uint64_t seed);

/// Candidate pool and its scores for observers. Breakdowns are empty for
/// Random, which does not score.
struct IterationView {
  const std::vector<InputPoint>& candidates;
  const std::vector<UncertaintyBreakdown>& breakdowns;
  const std::vector<double>& scores;
};

using IterationObserver =
    std::function<void(const RunState&, const IterationRecord&, const IterationView&)>;

/// One loop iteration; appends its record to state.log.
void run_iteration(RunState& state, const IterationObserver& observer = {});


/// init_run followed by n_iter iterations.
RunState run(const LoopConfig& cfg, Strategy strategy, std::uint64_t seed, std::size_t n_iter,
             const IterationObserver& observer = {});

}  // namespace musel
