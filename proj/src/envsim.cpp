#include "bcp/envsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bcp::envsim {

namespace {

constexpr std::array<std::string_view, kNumActions> kActionNames{"noop", "gas", "left", "right", "brake"};

double dist_point_segment(Vec2 p, Vec2 a, Vec2 b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = a.x + t * dx - p.x;
  const double qy = a.y + t * dy - p.y;
  return std::sqrt(qx * qx + qy * qy);
}

void paint(Observation& obs, int row, int col, const std::array<std::uint8_t, 3>& rgb) {
  std::uint8_t* px = obs.at(row, col);
  px[0] = rgb[0];
  px[1] = rgb[1];
  px[2] = rgb[2];
}

}  // namespace

std::string_view action_name(Action a) { return kActionNames.at(static_cast<std::size_t>(a)); }

std::optional<Action> parse_action(std::string_view name) {
  for (int i = 0; i < kNumActions; ++i) {
    if (kActionNames[static_cast<std::size_t>(i)] == name) return static_cast<Action>(i);
  }
  return std::nullopt;
}

Action action_from_index(int index) {
  if (index < 0 || index >= kNumActions) throw InputError("action index out of range: " + std::to_string(index));
  return static_cast<Action>(index);
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

void EnvParams::validate() const {
  if (!(dt > 0 && a_gas > 0 && a_brake > 0 && friction > 0 && v_max > 0 && steer_delta > 0 && capture_radius > 0 &&
        off_margin > 0 && max_off_streak > 0 && lap_reward_total > 0)) {
    throw ConfigError("EnvParams: dynamics and reward constants must be positive");
  }
  if (per_step_penalty > 0 || off_track_penalty > 0) throw ConfigError("EnvParams: penalties must be <= 0");
  if (t_max < 1) throw ConfigError("EnvParams: t_max must be >= 1");
}

void RenderConfig::validate() const {
  if (height < kCarSpriteHeight || width < kCarSpriteWidth) throw ConfigError("RenderConfig: frame too small");
  if (!(world_units_per_view > 0) || !(speed_per_gauge_pixel > 0)) {
    throw ConfigError("RenderConfig: scales must be positive");
  }
  if (gauge_rows < 0 || gauge_rows > height) throw ConfigError("RenderConfig: bad gauge_rows");
}

int EnvState::visited_count() const {
  return static_cast<int>(std::count(visited.begin(), visited.end(), std::uint8_t{1}));
}

Track generate_track(std::uint64_t seed, int n_waypoints, double base_radius, double radial_noise,
                     double half_width) {
  if (n_waypoints < 8) throw ConfigError("generate_track: need at least 8 waypoints, got " + std::to_string(n_waypoints));
  if (!(radial_noise >= 0.0 && radial_noise < 1.0)) throw ConfigError("generate_track: radial_noise must be in [0,1)");
  if (!(base_radius > 0.0) || !(half_width > 0.0)) throw ConfigError("generate_track: radius and half_width must be > 0");

  Rng rng(seed);
  Track track;
  track.seed = seed;
  track.half_width = half_width;
  track.waypoints.reserve(static_cast<std::size_t>(n_waypoints));
  for (int k = 0; k < n_waypoints; ++k) {
    const double u = radial_noise > 0.0 ? rng.uniform(-radial_noise, radial_noise) : 0.0;
    const double r = base_radius * (1.0 + u);
    const double angle = 2.0 * std::numbers::pi * k / n_waypoints;
    track.waypoints.push_back({r * std::cos(angle), r * std::sin(angle)});
  }
  return track;
}

Track generate_track(std::uint64_t seed, const TrackParams& params) {
  return generate_track(seed, params.n_waypoints, params.base_radius, params.radial_noise, params.half_width);
}

EnvState reset(const Track& track) {
  const Vec2 w0 = track.waypoints.at(0);
  const Vec2 w1 = track.waypoints.at(1);
  EnvState s;
  s.position = w0;
  s.heading = std::atan2(w1.y - w0.y, w1.x - w0.x);
  s.visited.assign(track.waypoints.size(), 0);
  s.visited[0] = 1;
  return s;
}

double distance_to_centerline(const Track& track, Vec2 p) {
  const int n = track.size();
  double best = INFINITY;
  for (int k = 0; k < n; ++k) {
    best = std::min(best, dist_point_segment(p, track.waypoints[k], track.waypoints[(k + 1) % n]));
  }
  return best;
}

StepResult step(const EnvState& state, Action action, const Track& track, const EnvParams& params) {
  if (state.done) throw ContractError("step called on a finished episode");
  StepResult out{state, 0.0, false};
  EnvState& s = out.state;

  switch (action) {
    case Action::Gas: s.speed += params.a_gas; break;
    case Action::Brake: s.speed -= params.a_brake; break;
    case Action::Left: s.heading = wrap_angle(s.heading + params.steer_delta); break;
    case Action::Right: s.heading = wrap_angle(s.heading - params.steer_delta); break;
    case Action::Noop: break;
  }
  s.speed -= params.friction;
  s.speed = std::clamp(s.speed, 0.0, params.v_max);
  s.position.x += s.speed * std::cos(s.heading) * params.dt;
  s.position.y += s.speed * std::sin(s.heading) * params.dt;

  const int n = track.size();
  double reward = params.per_step_penalty;
  const int target = s.next_waypoint();
  const Vec2 w = track.waypoints[static_cast<std::size_t>(target)];
  if (std::hypot(s.position.x - w.x, s.position.y - w.y) <= params.capture_radius) {
    s.visited[static_cast<std::size_t>(target)] = 1;
    s.progress += 1;
    reward += params.lap_reward_total / n;
  }

  if (distance_to_centerline(track, s.position) > track.half_width + params.off_margin) {
    reward += params.off_track_penalty;
    s.off_track_streak += 1;
  } else {
    s.off_track_streak = 0;
  }

  const bool lap_done = s.progress >= n;
  s.done = lap_done || s.off_track_streak > params.max_off_streak || s.step_index + 1 >= params.t_max;
  s.step_index += 1;
  out.reward = reward;
  out.done = s.done;
  return out;
}

Vec2 pixel_to_world(const EnvState& state, const RenderConfig& config, int row, int col) {
  const double scale = config.world_units_per_view / config.width;
  const double right_px = col + 0.5 - config.width / 2.0;
  const double up_px = 3.0 * config.height / 4.0 - (row + 0.5);
  const double c = std::cos(state.heading);
  const double s = std::sin(state.heading);
  // forward = (c, s), right = (s, -c)
  return {state.position.x + scale * (up_px * c + right_px * s), state.position.y + scale * (up_px * s - right_px * c)};
}

Observation render(const EnvState& state, const Track& track, const RenderConfig& config) {
  config.validate();
  const int h = config.height;
  const int w = config.width;
  Observation obs(h, w);

  // Only segments that can reach the view need testing per pixel.
  const double scale = config.world_units_per_view / w;
  const double reach = scale * std::hypot(w / 2.0 + 1.0, 3.0 * h / 4.0 + 1.0) + track.half_width;
  const int n = track.size();
  std::vector<std::pair<Vec2, Vec2>> near;
  for (int k = 0; k < n; ++k) {
    const Vec2 a = track.waypoints[k];
    const Vec2 b = track.waypoints[(k + 1) % n];
    if (dist_point_segment(state.position, a, b) <= reach) near.emplace_back(a, b);
  }

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Vec2 p = pixel_to_world(state, config, r, c);
      bool road = false;
      for (const auto& [a, b] : near) {
        if (dist_point_segment(p, a, b) <= track.half_width) {
          road = true;
          break;
        }
      }
      paint(obs, r, c, road ? kRoadColor : kGrassColor);
    }
  }

  const int r0 = 3 * h / 4 - kCarSpriteHeight / 2;
  const int c0 = w / 2 - kCarSpriteWidth / 2;
  for (int r = r0; r < r0 + kCarSpriteHeight; ++r) {
    for (int c = c0; c < c0 + kCarSpriteWidth; ++c) paint(obs, r, c, kCarColor);
  }

  const int lit = std::min(w, static_cast<int>(std::floor(state.speed / config.speed_per_gauge_pixel)));
  for (int r = h - config.gauge_rows; r < h; ++r) {
    for (int c = 0; c < lit; ++c) paint(obs, r, c, kGaugeColor);
  }
  return obs;
}

}  // namespace bcp::envsim
