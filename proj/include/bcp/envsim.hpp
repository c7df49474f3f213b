#pragma once

// TrackWorld: a deterministic top-down driving environment. A closed loop of
// waypoints defines the road centerline; the car is steered with five
// discrete actions and rewarded for capturing waypoints in order.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bcp/common.hpp"

namespace bcp::envsim {

enum class Action : std::uint8_t { Noop = 0, Gas = 1, Left = 2, Right = 3, Brake = 4 };

inline constexpr int kNumActions = 5;

std::string_view action_name(Action a);
std::optional<Action> parse_action(std::string_view name);
/// Throws InputError for values outside 0..4.
Action action_from_index(int index);
inline int index_of(Action a) { return static_cast<int>(a); }

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Vec2&) const = default;
};

struct Track {
  std::uint64_t seed = 0;
  std::vector<Vec2> waypoints;  // closed loop: the last connects back to the first
  double half_width = 2.0;

  int size() const { return static_cast<int>(waypoints.size()); }
};

struct TrackParams {
  int n_waypoints = 30;
  double base_radius = 90.0;
  double radial_noise = 0.03;
  double half_width = 2.0;
};

struct EnvParams {
  double dt = 1.0;
  double a_gas = 0.2;
  double a_brake = 0.4;
  double friction = 0.02;
  double v_max = 3.0;
  double steer_delta = 0.08;  // radians per Left/Right step
  double capture_radius = 2.0;
  double off_margin = 1.0;
  int max_off_streak = 20;
  int t_max = 1000;
  double per_step_penalty = -0.1;
  double off_track_penalty = -0.5;
  double lap_reward_total = 1000.0;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

struct EnvState {
  Vec2 position;
  double heading = 0.0;  // radians, counterclockwise from +x
  double speed = 0.0;
  int step_index = 0;
  std::vector<std::uint8_t> visited;  // one flag per waypoint
  int progress = 0;                   // rewarded captures so far, 0..n
  int off_track_streak = 0;
  bool done = false;

  int visited_count() const;
  /// Waypoint the car must reach next. Waypoint 0 is both start and finish.
  int next_waypoint() const { return (progress + 1) % static_cast<int>(visited.size()); }

  bool operator==(const EnvState&) const = default;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

/// H x W x 3 interleaved RGB bytes, row-major.
struct Observation {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Observation() = default;
  Observation(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::size_t size() const { return pixels.size(); }
  std::uint8_t* at(int row, int col) { return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3; }
  const std::uint8_t* at(int row, int col) const {
    return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }

  bool operator==(const Observation&) const = default;
};

struct RenderConfig {
  int height = 64;
  int width = 64;
  double world_units_per_view = 40.0;  // world span covered by the frame width
  // Speed gauge along the bottom rows: one lit pixel per this many speed units.
  double speed_per_gauge_pixel = 0.1;
  int gauge_rows = 2;

  void validate() const;
};

inline constexpr std::array<std::uint8_t, 3> kRoadColor{102, 102, 102};
inline constexpr std::array<std::uint8_t, 3> kGrassColor{51, 153, 51};
inline constexpr std::array<std::uint8_t, 3> kCarColor{0, 0, 0};
inline constexpr std::array<std::uint8_t, 3> kGaugeColor{255, 255, 255};
inline constexpr int kCarSpriteWidth = 4;
inline constexpr int kCarSpriteHeight = 8;

Track generate_track(std::uint64_t seed, int n_waypoints, double base_radius, double radial_noise,
                     double half_width = 2.0);
Track generate_track(std::uint64_t seed, const TrackParams& params);

EnvState reset(const Track& track);

/// Advances one step. Throws ContractError when `state.done` is already set.
StepResult step(const EnvState& state, Action action, const Track& track, const EnvParams& params);

/// Distance from `p` to the nearest centerline segment.
double distance_to_centerline(const Track& track, Vec2 p);

/// Egocentric frame: car anchored at pixel (W/2, 3H/4), heading up.
Observation render(const EnvState& state, const Track& track, const RenderConfig& config);

/// Pixel -> world mapping used by render, exposed for tests and tooling.
Vec2 pixel_to_world(const EnvState& state, const RenderConfig& config, int row, int col);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

}  // namespace bcp::envsim
