#pragma once

// Model-uncertainty score: predictive std x distance to the nearest training
// input x region-level learning progress.

#include <array>
#include <cstddef>
#include <deque>
#include <vector>

#include <Eigen/Core>

#include "musel/dkl.hpp"
#include "musel/env_sim.hpp"

namespace musel {

struct LpConfig {
  int bins = 7;  // per axis of (alpha, pos_x, pos_y)
  std::size_t window = 10;
  double floor = 1e-4;
};

/// Uniform partition of (alpha, pos_x, pos_y) over the push-angle range and the
/// full table, with per-region error history and learning progress.
class LpGrid {
 public:
  LpGrid(const WorldConfig& world, const LpConfig& cfg = {});

  std::size_t num_regions() const { return lp_.size(); }
  int bins() const { return cfg_.bins; }
  const LpConfig& config() const { return cfg_; }

  /// Throws std::out_of_range for inputs outside the partitioned ranges.
  std::array<int, 3> region_coords(const InputPoint& x) const;
  std::size_t region_of(const InputPoint& x) const;
  std::size_t flat_index(int ia, int ix, int iy) const {
    return static_cast<std::size_t>((ia * cfg_.bins + ix) * cfg_.bins + iy);
  }

  /// Bin edges along one axis: 0 alpha (radians), 1 pos_x, 2 pos_y.
  std::vector<double> edges(int axis) const;

  /// Adds e = ||pred.mean - observed|| to the region's pending accumulator.
  void record_error(const InputPoint& x, const Prediction& pred, const Effect& observed);
  void add_error(std::size_t region, double error);

  /// Pushes each non-empty accumulator mean onto its ring buffer and refreshes
  /// that region's LP. Returns the updated regions in ascending order.
  std::vector<std::size_t> snapshot_errors();

  double learning_progress(std::size_t region) const { return lp_.at(region); }
  const std::deque<double>& history(std::size_t region) const { return history_.at(region); }
  /// Replaces a region's history (keeps the newest `window` entries).
  void set_history(std::size_t region, const std::vector<double>& errors);

 private:
  void refresh(std::size_t region);
  double edge(int axis, int i) const { return lo_[axis] + (hi_[axis] - lo_[axis]) * i / cfg_.bins; }

  LpConfig cfg_;
  std::array<double, 3> lo_{};
  std::array<double, 3> hi_{};
  std::vector<std::deque<double>> history_;
  std::vector<double> pending_sum_;
  std::vector<std::size_t> pending_count_;
  std::vector<double> lp_;
};

/// Least-squares slope of errors against t = 1..n.
double least_squares_slope(const std::deque<double>& errors);

/// LP from an error history: 1 with fewer than two entries, otherwise
/// clamp(-(2/pi) atan(slope), floor, 1) for slope <= 0 and floor for slope > 0.
double learning_progress_from(const std::deque<double>& errors, double floor = 1e-4);

/// Encoded training inputs with exact nearest-neighbor distance queries.
class TrainingSet {
 public:
  void add(const Eigen::Vector4d& encoded) { points_.push_back(encoded); }
  std::size_t size() const { return points_.size(); }
  const std::vector<Eigen::Vector4d>& points() const { return points_; }
  /// Exact Euclidean distance to the nearest stored point. Requires size() > 0.
  double min_distance(const Eigen::Vector4d& query) const;

 private:
  std::vector<Eigen::Vector4d> points_;
};

double min_distance(const InputPoint& x, const TrainingSet& observed, const WorldConfig& world);

struct UncertaintyBreakdown {
  double sigma = 0.0;
  double min_dist = 0.0;
  double lp = 0.0;
  double u_model = 0.0;
};

/// Scores every candidate; pure in (model, grid, observed).
std::vector<UncertaintyBreakdown> estimate_model_uncertainty(const Model& model, const LpGrid& grid,
                                                             const TrainingSet& observed,
                                                             const std::vector<InputPoint>& candidates,
                                                             const WorldConfig& world);

/// Same as above for precomputed predictions (one per candidate).
std::vector<UncertaintyBreakdown> combine_uncertainty(const std::vector<Prediction>& predictions,
                                                      const LpGrid& grid,
                                                      const TrainingSet& observed,
                                                      const std::vector<InputPoint>& candidates,
                                                      const WorldConfig& world);

}  // namespace musel
