#include "musel/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace musel {

LpGrid::LpGrid(const WorldConfig& world, const LpConfig& cfg)
    : cfg_(cfg),
      lo_{kAlphaMin, -world.half_extent_x, -world.half_extent_y},
      hi_{kAlphaMax, world.half_extent_x, world.half_extent_y} {
  if (cfg.bins < 1 || cfg.window < 2 || !(cfg.floor > 0.0 && cfg.floor <= 1.0))
    throw std::invalid_argument("invalid LP grid configuration");
  const auto n = static_cast<std::size_t>(cfg.bins * cfg.bins * cfg.bins);
  history_.resize(n);
  pending_sum_.assign(n, 0.0);
  pending_count_.assign(n, 0);
  lp_.assign(n, 1.0);
}

std::array<int, 3> LpGrid::region_coords(const InputPoint& x) const {
  const std::array<double, 3> v{x.alpha, x.pos.x, x.pos.y};
  std::array<int, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (!(v[a] >= lo_[a] && v[a] <= hi_[a]))
      throw std::out_of_range("input outside LP grid range on axis " + std::to_string(a));
    const double u = (v[a] - lo_[a]) / (hi_[a] - lo_[a]);
    int i = std::clamp(static_cast<int>(std::floor(u * cfg_.bins)), 0, cfg_.bins - 1);
    // Settle rounding at the edges against the same formula edges() reports.
    while (i + 1 < cfg_.bins && v[a] >= edge(a, i + 1)) ++i;
    while (i > 0 && v[a] < edge(a, i)) --i;
    out[a] = i;
  }
  return out;
}

std::size_t LpGrid::region_of(const InputPoint& x) const {
  const auto c = region_coords(x);
  return flat_index(c[0], c[1], c[2]);
}

std::vector<double> LpGrid::edges(int axis) const {
  std::vector<double> e;
  for (int i = 0; i <= cfg_.bins; ++i)
    e.push_back(edge(axis, i));
  return e;
}

void LpGrid::record_error(const InputPoint& x, const Prediction& pred, const Effect& observed) {
  const double dx = pred.mean(0) - observed.delta.x;
  const double dy = pred.mean(1) - observed.delta.y;
  add_error(region_of(x), std::hypot(dx, dy));
}

void LpGrid::add_error(std::size_t region, double error) {
  pending_sum_.at(region) += error;
  ++pending_count_.at(region);
}

std::vector<std::size_t> LpGrid::snapshot_errors() {
  std::vector<std::size_t> updated;
  for (std::size_t r = 0; r < lp_.size(); ++r) {
    if (pending_count_[r] == 0) continue;
    history_[r].push_back(pending_sum_[r] / static_cast<double>(pending_count_[r]));
    while (history_[r].size() > cfg_.window) history_[r].pop_front();
    pending_sum_[r] = 0.0;
    pending_count_[r] = 0;
    refresh(r);
    updated.push_back(r);
  }
  return updated;
}

void LpGrid::set_history(std::size_t region, const std::vector<double>& errors) {
  auto& h = history_.at(region);
  h.assign(errors.begin(), errors.end());
  while (h.size() > cfg_.window) h.pop_front();
  refresh(region);
}

void LpGrid::refresh(std::size_t region) {
  lp_[region] = learning_progress_from(history_[region], cfg_.floor);
}

double least_squares_slope(const std::deque<double>& errors) {
  const double n = static_cast<double>(errors.size());
  const double t_mean = (n + 1.0) / 2.0;
  double e_mean = 0.0;
  for (double e : errors) e_mean += e;
  e_mean /= n;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    const double dt = static_cast<double>(i + 1) - t_mean;
    num += dt * (errors[i] - e_mean);
    den += dt * dt;
  }
  return num / den;
}

double learning_progress_from(const std::deque<double>& errors, double floor) {
  if (errors.size() < 2) return 1.0;
  const double slope = least_squares_slope(errors);
  if (slope > 0.0) return floor;
  return std::clamp(-(2.0 / std::numbers::pi) * std::atan(slope), floor, 1.0);
}

double TrainingSet::min_distance(const Eigen::Vector4d& query) const {
  if (points_.empty()) throw std::logic_error("min_distance on an empty training set");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : points_) best = std::min(best, (p - query).squaredNorm());
  return std::sqrt(best);
}

double min_distance(const InputPoint& x, const TrainingSet& observed, const WorldConfig& world) {
  return observed.min_distance(encode(x, world));
}

std::vector<UncertaintyBreakdown> combine_uncertainty(const std::vector<Prediction>& predictions,
                                                      const LpGrid& grid,
                                                      const TrainingSet& observed,
                                                      const std::vector<InputPoint>& candidates,
                                                      const WorldConfig& world) {
  std::vector<UncertaintyBreakdown> out(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto& u = out[i];
    u.sigma = predictions[i].std.norm();
    u.min_dist = min_distance(candidates[i], observed, world);
    u.lp = grid.learning_progress(grid.region_of(candidates[i]));
    u.u_model = u.sigma * u.min_dist * u.lp;
  }
  return out;
}

std::vector<UncertaintyBreakdown> estimate_model_uncertainty(const Model& model, const LpGrid& grid,
                                                             const TrainingSet& observed,
                                                             const std::vector<InputPoint>& candidates,
                                                             const WorldConfig& world) {
  Eigen::MatrixXd enc(static_cast<Eigen::Index>(candidates.size()), 4);
  for (std::size_t i = 0; i < candidates.size(); ++i)
    enc.row(static_cast<Eigen::Index>(i)) = encode(candidates[i], world).transpose();
  return combine_uncertainty(predict_batch(model, enc), grid, observed, candidates, world);
}

}  // namespace musel
