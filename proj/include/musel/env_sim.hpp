#pragma once

// Tabletop push environment: one controlled sphere, four boundary walls, a
// diagonal wall cutting the +x/+y corner and (optionally) a second sphere that
// is reset to a fixed position before every push.

#include <array>
#include <cmath>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "musel/rng.hpp"

namespace musel {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  bool operator==(const Vec2&) const = default;
};

enum class Task { OneSphere, TwoSphere };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

/// Geometry and physical constants of the table. Lengths are in table units,
/// times in seconds.
struct WorldConfig {
  double half_extent_x = 4.0;
  double half_extent_y = 4.0;
  /// Diagonal wall endpoints, each on one of two adjacent table edges.
  Vec2 diagonal_a{1.5, 4.0};
  Vec2 diagonal_b{4.0, 1.5};
  double sphere_radius = 0.25;
  /// End-effector offset from the sphere center at push start/end.
  double push_offset = 0.5;
  double push_speed = 6.0;
  /// Constant rolling-friction deceleration.
  double friction_decel = 2.0;
  double restitution = 0.9;
  Task task = Task::OneSphere;
  Vec2 fixed_sphere{1.5, 1.5};
  double margin = 0.05;
  int max_placement_attempts = 10000;
  int max_events = 10000;

  static WorldConfig one_sphere();
  static WorldConfig two_sphere();

  /// Throws ConfigError if any invariant is violated.
  void validate() const;

  double stopping_distance() const {
    return push_speed * push_speed / (2.0 * friction_decel);
  }
  double table_diagonal() const {
    return 2.0 * std::hypot(half_extent_x, half_extent_y);
  }
};

void to_json(nlohmann::json& j, const WorldConfig& cfg);
void from_json(const nlohmann::json& j, WorldConfig& cfg);

/// Push angle bounds.
inline constexpr double kAlphaMax = 1.0471975511965976;  // pi / 3
inline constexpr double kAlphaMin = -kAlphaMax;

/// A state-action pair: push angle and initial sphere position.
struct InputPoint {
  double alpha = 0.0;
  Vec2 pos;

  /// (sin a, cos a, pos_x / sx, pos_y / sy); positions scaled into [-1, 1].
  Eigen::Vector4d encoded(double scale_x, double scale_y) const {
    return {std::sin(alpha), std::cos(alpha), pos.x / scale_x, pos.y / scale_y};
  }
  bool operator==(const InputPoint&) const = default;
};

inline Eigen::Vector4d encode(const InputPoint& x, const WorldConfig& cfg) {
  return x.encoded(cfg.half_extent_x, cfg.half_extent_y);
}

/// Displacement of the controlled sphere, final minus initial position.
struct Effect {
  Vec2 delta;
  bool operator==(const Effect&) const = default;
};

/// A wall as a constraint on sphere centers: normal . p <= offset.
struct HalfPlane {
  Vec2 normal;  // unit, pointing out of the table
  double offset = 0.0;
  double violation(Vec2 p) const { return normal.dot(p) - offset; }
};

/// Center constraints for a sphere of the configured radius: four edges, then
/// the diagonal wall.
std::vector<HalfPlane> center_constraints(const WorldConfig& cfg);

/// Signed clearance of a sphere surface to the nearest wall (negative if it
/// penetrates).
double wall_clearance(const WorldConfig& cfg, Vec2 pos);

bool is_valid_position(const WorldConfig& cfg, Vec2 pos);

/// Axis-aligned box that contains every valid placement.
struct PlacementBox {
  double x_min, x_max, y_min, y_max;
};
PlacementBox placement_box(const WorldConfig& cfg);

/// Draws m i.i.d. inputs: alpha uniform on [-pi/3, pi/3], position uniform on
/// the valid region by rejection. Throws SimulationError past the attempt cap.
std::vector<InputPoint> sample_input_space(const WorldConfig& cfg, RngStream& rng,
                                           std::size_t m);

/// End-effector path of the push: pos -/+ r (cos a, sin a).
std::pair<Vec2, Vec2> push_endpoints(const WorldConfig& cfg, const InputPoint& x);

struct TrajectoryEvent {
  double t = 0.0;
  Vec2 pos;
  Vec2 vel;
  std::string event;
};

struct RollResult {
  Vec2 rest;
  /// Rest position of the second sphere (TwoSphere only; fixed position otherwise).
  Vec2 second_rest;
  int events = 0;
  double duration = 0.0;
  /// Controlled-sphere states at each event; filled only when requested.
  std::vector<TrajectoryEvent> trace;
};

/// Event-driven rolling under constant friction deceleration with restitution
/// on walls and (TwoSphere) on the second sphere. Throws SimulationError if the
/// event cap is exceeded.
RollResult simulate_roll_detailed(const WorldConfig& cfg, Vec2 pos0, Vec2 dir, double v0,
                                  bool record_trace = false);

inline Vec2 simulate_roll(const WorldConfig& cfg, Vec2 pos0, Vec2 dir, double v0) {
  return simulate_roll_detailed(cfg, pos0, dir, v0).rest;
}

/// Launches the sphere from x.pos along (cos a, sin a) at the push speed.
Effect execute_and_observe(const WorldConfig& cfg, const InputPoint& x);

/// CSV rows (t, x, y, vx, vy, event) with a header line.
void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryEvent>& trace);

}  // namespace musel
