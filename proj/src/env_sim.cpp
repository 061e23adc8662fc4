#include "musel/env_sim.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <ostream>

#include "musel/errors.hpp"

namespace musel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSpeedEps = 1e-12;

bool on_vertical_edge(const WorldConfig& c, Vec2 p) {
  return std::abs(std::abs(p.x) - c.half_extent_x) < 1e-12 &&
         std::abs(p.y) <= c.half_extent_y + 1e-12;
}
bool on_horizontal_edge(const WorldConfig& c, Vec2 p) {
  return std::abs(std::abs(p.y) - c.half_extent_y) < 1e-12 &&
         std::abs(p.x) <= c.half_extent_x + 1e-12;
}

// Polynomial in ascending coefficient order, degree <= 4.
using Poly = std::vector<double>;

double eval(const Poly& p, double t) {
  double acc = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) acc = acc * t + *it;
  return acc;
}

Poly derivative(const Poly& p) {
  Poly d;
  for (std::size_t i = 1; i < p.size(); ++i) d.push_back(static_cast<double>(i) * p[i]);
  return d;
}

double bisect(const Poly& p, double lo, double hi) {
  double flo = eval(p, lo);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double fm = eval(p, mid);
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return hi;
}

// Sorted real roots of p on (a, b), isolated through the roots of p'.
std::vector<double> roots_in(const Poly& p, double a, double b) {
  if (p.size() <= 1) return {};
  std::vector<double> knots{a};
  for (double r : roots_in(derivative(p), a, b)) knots.push_back(r);
  knots.push_back(b);
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const double fa = eval(p, knots[i]);
    const double fb = eval(p, knots[i + 1]);
    if ((fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0))
      out.push_back(bisect(p, knots[i], knots[i + 1]));
    else if (fb == 0.0 && i + 2 < knots.size())
      out.push_back(knots[i + 1]);
  }
  return out;
}

// Earliest t in [0, horizon] where gap(t) = |d(t)|^2 - D^2 goes from positive
// to non-positive, or 0 if the pair is already touching and approaching.
double first_contact(const Poly& gap, double horizon) {
  const double g0 = eval(gap, 0.0);
  const double dg0 = gap.size() > 1 ? gap[1] : 0.0;
  if (g0 <= 0.0 && dg0 < 0.0) return 0.0;
  std::vector<double> knots{0.0};
  for (double r : roots_in(derivative(gap), 0.0, horizon)) knots.push_back(r);
  knots.push_back(horizon);
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const double fa = eval(gap, knots[i]);
    const double fb = eval(gap, knots[i + 1]);
    if (fa > 0.0 && fb <= 0.0) return fb == 0.0 ? knots[i + 1] : bisect(gap, knots[i], knots[i + 1]);
  }
  return kInf;
}

struct Body {
  Vec2 p;
  Vec2 u{1.0, 0.0};
  double speed = 0.0;

  Vec2 vel() const { return u * speed; }
  bool moving() const { return speed > 0.0; }
  void set_velocity(Vec2 v) {
    const double s = v.norm();
    if (s <= kSpeedEps) {
      speed = 0.0;
    } else {
      speed = s;
      u = v * (1.0 / s);
    }
  }
};

// Time for a body decelerating at mu to cover distance len, or inf.
double time_to_cover(double speed, double mu, double len) {
  if (len <= 0.0) return 0.0;
  const double disc = speed * speed - 2.0 * mu * len;
  if (disc < 0.0) return kInf;
  return 2.0 * len / (speed + std::sqrt(disc));
}

void advance(Body& b, double mu, double tau) {
  if (!b.moving() || tau <= 0.0) return;
  const double travel = b.speed * tau - 0.5 * mu * tau * tau;
  b.p += b.u * travel;
  b.speed = std::max(0.0, b.speed - mu * tau);
}

}  // namespace

std::string to_string(Task task) {
  return task == Task::OneSphere ? "one_sphere" : "two_sphere";
}

Task task_from_string(const std::string& name) {
  if (name == "one_sphere" || name == "OneSphere") return Task::OneSphere;
  if (name == "two_sphere" || name == "TwoSphere") return Task::TwoSphere;
  throw ConfigError("unknown task '" + name + "'");
}

WorldConfig WorldConfig::one_sphere() { return WorldConfig{}; }

WorldConfig WorldConfig::two_sphere() {
  WorldConfig cfg;
  cfg.task = Task::TwoSphere;
  return cfg;
}

void WorldConfig::validate() const {
  if (!(half_extent_x > 0.0 && half_extent_y > 0.0))
    throw ConfigError("table half-extents must be positive");
  if (!(sphere_radius > 0.0)) throw ConfigError("sphere radius must be positive");
  if (!(push_offset > sphere_radius))
    throw ConfigError("push offset must exceed the sphere radius");
  if (!(push_speed > 0.0)) throw ConfigError("push speed must be positive");
  if (!(friction_decel > 0.0)) throw ConfigError("friction deceleration must be positive");
  if (!(restitution > 0.0 && restitution <= 1.0))
    throw ConfigError("restitution must lie in (0, 1]");
  if (!(margin >= 0.0)) throw ConfigError("margin must be non-negative");
  if (max_placement_attempts < 1 || max_events < 1)
    throw ConfigError("attempt and event caps must be positive");
  const bool adjacent = (on_vertical_edge(*this, diagonal_a) && on_horizontal_edge(*this, diagonal_b)) ||
                        (on_horizontal_edge(*this, diagonal_a) && on_vertical_edge(*this, diagonal_b));
  if (!adjacent) throw ConfigError("diagonal wall endpoints must lie on two adjacent table edges");
  if (task == Task::TwoSphere) {
    WorldConfig solo = *this;
    solo.task = Task::OneSphere;
    if (!is_valid_position(solo, fixed_sphere))
      throw ConfigError("fixed sphere position is not a valid placement");
  }
  const PlacementBox box = placement_box(*this);
  if (!(box.x_min < box.x_max && box.y_min < box.y_max))
    throw ConfigError("sphere and margin do not fit on the table");
}

void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = nlohmann::json{
      {"half_extent_x", c.half_extent_x},
      {"half_extent_y", c.half_extent_y},
      {"diagonal_a", {c.diagonal_a.x, c.diagonal_a.y}},
      {"diagonal_b", {c.diagonal_b.x, c.diagonal_b.y}},
      {"sphere_radius", c.sphere_radius},
      {"push_offset", c.push_offset},
      {"push_speed", c.push_speed},
      {"friction_decel", c.friction_decel},
      {"restitution", c.restitution},
      {"task", to_string(c.task)},
      {"fixed_sphere", {c.fixed_sphere.x, c.fixed_sphere.y}},
      {"margin", c.margin},
      {"max_placement_attempts", c.max_placement_attempts},
      {"max_events", c.max_events},
      {"units",
       {{"length", "table unit"},
        {"half_extent_x", "length"},
        {"half_extent_y", "length"},
        {"diagonal_a", "length"},
        {"diagonal_b", "length"},
        {"sphere_radius", "length"},
        {"push_offset", "length"},
        {"push_speed", "length/s"},
        {"friction_decel", "length/s^2"},
        {"restitution", "dimensionless"},
        {"fixed_sphere", "length"},
        {"margin", "length"}}},
  };
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
  auto vec = [&](const char* key, Vec2& out) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 2) throw ConfigError(std::string(key) + " must be a 2-array");
    out = {a[0].get<double>(), a[1].get<double>()};
  };
  auto num = [&](const char* key, auto& out) {
    if (j.contains(key)) j.at(key).get_to(out);
  };
  num("half_extent_x", c.half_extent_x);
  num("half_extent_y", c.half_extent_y);
  vec("diagonal_a", c.diagonal_a);
  vec("diagonal_b", c.diagonal_b);
  num("sphere_radius", c.sphere_radius);
  num("push_offset", c.push_offset);
  num("push_speed", c.push_speed);
  num("friction_decel", c.friction_decel);
  num("restitution", c.restitution);
  if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
  vec("fixed_sphere", c.fixed_sphere);
  num("margin", c.margin);
  num("max_placement_attempts", c.max_placement_attempts);
  num("max_events", c.max_events);
}

std::vector<HalfPlane> center_constraints(const WorldConfig& cfg) {
  const double r = cfg.sphere_radius;
  std::vector<HalfPlane> walls{
      {{1.0, 0.0}, cfg.half_extent_x - r},
      {{-1.0, 0.0}, cfg.half_extent_x - r},
      {{0.0, 1.0}, cfg.half_extent_y - r},
      {{0.0, -1.0}, cfg.half_extent_y - r},
  };
  const Vec2 t = cfg.diagonal_b - cfg.diagonal_a;
  Vec2 n{t.y, -t.x};
  n = n * (1.0 / n.norm());
  // Outward means away from the table center.
  if (n.dot(cfg.diagonal_a) < 0.0) n = n * -1.0;
  walls.push_back({n, n.dot(cfg.diagonal_a) - r});
  return walls;
}

double wall_clearance(const WorldConfig& cfg, Vec2 pos) {
  double worst = kInf;
  for (const auto& w : center_constraints(cfg)) worst = std::min(worst, -w.violation(pos));
  return worst;
}

bool is_valid_position(const WorldConfig& cfg, Vec2 pos) {
  if (!std::isfinite(pos.x) || !std::isfinite(pos.y)) return false;
  for (const auto& w : center_constraints(cfg))
    if (w.violation(pos) > -cfg.margin) return false;
  if (cfg.task == Task::TwoSphere &&
      (pos - cfg.fixed_sphere).norm() < 2.0 * cfg.sphere_radius + cfg.margin)
    return false;
  return true;
}

PlacementBox placement_box(const WorldConfig& cfg) {
  const double ix = cfg.half_extent_x - cfg.sphere_radius - cfg.margin;
  const double iy = cfg.half_extent_y - cfg.sphere_radius - cfg.margin;
  return {-ix, ix, -iy, iy};
}

std::vector<InputPoint> sample_input_space(const WorldConfig& cfg, RngStream& rng,
                                           std::size_t m) {
  const PlacementBox box = placement_box(cfg);
  std::vector<InputPoint> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    InputPoint x;
    x.alpha = rng.uniform(kAlphaMin, kAlphaMax);
    int attempts = 0;
    do {
      if (++attempts > cfg.max_placement_attempts)
        throw SimulationError("rejection sampling exceeded the attempt cap");
      x.pos = {rng.uniform(box.x_min, box.x_max), rng.uniform(box.y_min, box.y_max)};
    } while (!is_valid_position(cfg, x.pos));
    out.push_back(x);
  }
  return out;
}

std::pair<Vec2, Vec2> push_endpoints(const WorldConfig& cfg, const InputPoint& x) {
  const Vec2 offset{cfg.push_offset * std::cos(x.alpha), cfg.push_offset * std::sin(x.alpha)};
  return {x.pos - offset, x.pos + offset};
}

RollResult simulate_roll_detailed(const WorldConfig& cfg, Vec2 pos0, Vec2 dir, double v0,
                                  bool record_trace) {
  const double mu = cfg.friction_decel;
  const double e = cfg.restitution;
  const double contact = 2.0 * cfg.sphere_radius;
  const auto walls = center_constraints(cfg);
  const bool two = cfg.task == Task::TwoSphere;

  std::vector<Body> bodies(two ? 2 : 1);
  bodies[0].p = pos0;
  bodies[0].set_velocity(dir * (v0 / dir.norm()));
  if (two) bodies[1].p = cfg.fixed_sphere;

  RollResult result;
  double t = 0.0;
  auto log = [&](const char* what) {
    if (record_trace) result.trace.push_back({t, bodies[0].p, bodies[0].vel(), what});
  };
  log("start");

  while (std::any_of(bodies.begin(), bodies.end(), [](const Body& b) { return b.moving(); })) {
    if (result.events >= cfg.max_events)
      throw SimulationError("event cap exceeded in rolling simulation");

    double horizon = kInf;
    std::size_t stopper = 0;
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      if (bodies[i].moving() && bodies[i].speed / mu < horizon) {
        horizon = bodies[i].speed / mu;
        stopper = i;
      }
    }

    // Earliest event; ties resolve by body, then wall index, then sphere contact.
    double best = horizon;
    int kind = 0;  // 0 stop, 1 wall, 2 sphere
    std::size_t who = 0;
    std::size_t which = 0;
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      const Body& b = bodies[i];
      if (!b.moving()) continue;
      for (std::size_t w = 0; w < walls.size(); ++w) {
        const double closing = walls[w].normal.dot(b.u);
        if (closing <= 0.0) continue;
        const double len = -walls[w].violation(b.p) / closing;
        const double tau = time_to_cover(b.speed, mu, len);
        if (tau < best) {
          best = tau;
          kind = 1;
          who = i;
          which = w;
        }
      }
    }
    if (two) {
      // Relative displacement d(tau) = d0 + a tau + c tau^2 within the horizon.
      const Body& b1 = bodies[0];
      const Body& b2 = bodies[1];
      const Vec2 d0 = b1.p - b2.p;
      const Vec2 a = b1.vel() - b2.vel();
      const Vec2 acc1 = b1.moving() ? b1.u * (-0.5 * mu) : Vec2{};
      const Vec2 acc2 = b2.moving() ? b2.u * (-0.5 * mu) : Vec2{};
      const Vec2 c = acc1 - acc2;
      const Poly gap{d0.dot(d0) - contact * contact, 2.0 * d0.dot(a), a.dot(a) + 2.0 * d0.dot(c),
                     2.0 * a.dot(c), c.dot(c)};
      const double tau = first_contact(gap, std::min(best, horizon));
      if (tau < best) {
        best = tau;
        kind = 2;
      }
    }

    for (auto& b : bodies) advance(b, mu, best);
    t += best;
    ++result.events;

    if (kind == 0) {
      bodies[stopper].speed = 0.0;
      for (auto& b : bodies)
        if (b.speed <= kSpeedEps) b.speed = 0.0;
      log("stop");
    } else if (kind == 1) {
      Body& b = bodies[who];
      const HalfPlane& w = walls[which];
      const double pen = w.violation(b.p);
      if (pen > 0.0) b.p = b.p - w.normal * pen;
      const Vec2 v = b.vel();
      const Vec2 reflected = v - w.normal * (2.0 * v.dot(w.normal));
      b.set_velocity(reflected * e);
      if (who == 0) log("wall");
    } else {
      Body& b1 = bodies[0];
      Body& b2 = bodies[1];
      Vec2 n = b2.p - b1.p;
      n = n * (1.0 / n.norm());
      const double closing = (b1.vel() - b2.vel()).dot(n);
      if (closing > 0.0) {
        const double impulse = 0.5 * (1.0 + e) * closing;
        b1.set_velocity(b1.vel() - n * impulse);
        b2.set_velocity(b2.vel() + n * impulse);
      }
      log("sphere");
    }
  }

  result.rest = bodies[0].p;
  result.second_rest = two ? bodies[1].p : cfg.fixed_sphere;
  result.duration = t;
  log("rest");
  return result;
}

Effect execute_and_observe(const WorldConfig& cfg, const InputPoint& x) {
  if (!is_valid_position(cfg, x.pos) || !(x.alpha >= kAlphaMin - 1e-12 && x.alpha <= kAlphaMax + 1e-12))
    throw ConfigError("execute_and_observe: input is not a valid placement");
  const Vec2 dir{std::cos(x.alpha), std::sin(x.alpha)};
  const Vec2 rest = simulate_roll(cfg, x.pos, dir, cfg.push_speed);
  return Effect{rest - x.pos};
}

void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryEvent>& trace) {
  os << "t,x,y,vx,vy,event\n";
  os.precision(17);
  for (const auto& ev : trace)
    os << ev.t << ',' << ev.pos.x << ',' << ev.pos.y << ',' << ev.vel.x << ',' << ev.vel.y << ','
       << ev.event << '\n';
}

}  // namespace musel
