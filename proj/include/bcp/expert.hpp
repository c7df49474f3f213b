#pragma once

// Scripted demonstrator: a pure-pursuit style rule cascade over the
// simulator state, plus the demonstration collector built on it.

#include <cstdint>

#include "bcp/dataset.hpp"
#include "bcp/envsim.hpp"

namespace bcp::expert {

struct ExpertParams {
  int lookahead = 1;            // 1 = aim at the next uncaptured waypoint
  double angle_deadband = 0.1;  // radians
  double v_target = 2.0;
  double brake_curvature = 0.3;  // radians of turn at the upcoming waypoint

  void validate(const envsim::EnvParams& env) const;
};

/// Everything needed to roll an episode out and render it.
struct EnvConfig {
  envsim::TrackParams track;
  envsim::EnvParams env;
  envsim::RenderConfig render;
};

/// Signed angle from the car heading to the lookahead waypoint
/// (positive = counterclockwise).
double heading_error(const envsim::EnvState& state, const envsim::Track& track, int lookahead);

/// Unsigned turn angle of the centerline at waypoint `k`.
double turn_angle_at(const envsim::Track& track, int k);

envsim::Action expert_action(const envsim::EnvState& state, const envsim::Track& track, const ExpertParams& params);

/// Runs one expert episode, returning total reward (no rendering).
double expert_episode_reward(const envsim::Track& track, const envsim::EnvParams& env, const ExpertParams& params);

/// One episode per track seed seed+e, e in [0, n_episodes). All poison flags
/// are false. Episodes may be collected concurrently; records are stored in
/// episode order.
data::Dataset collect_demos(const EnvConfig& env, const ExpertParams& params, int n_episodes, std::uint64_t seed);

}  // namespace bcp::expert
