#include "bcp/expert.hpp"

#include <cmath>

namespace bcp::expert {

using envsim::Action;

void ExpertParams::validate(const envsim::EnvParams& env) const {
  if (lookahead < 1) throw ConfigError("ExpertParams: lookahead must be >= 1");
  if (!(angle_deadband > 0)) throw ConfigError("ExpertParams: angle_deadband must be > 0");
  if (!(v_target > 0 && v_target <= env.v_max)) throw ConfigError("ExpertParams: v_target must be in (0, v_max]");
}

double heading_error(const envsim::EnvState& state, const envsim::Track& track, int lookahead) {
  const int n = track.size();
  const int target = (state.progress + lookahead) % n;
  const envsim::Vec2 w = track.waypoints[static_cast<std::size_t>(target)];
  const double bearing = std::atan2(w.y - state.position.y, w.x - state.position.x);
  return envsim::wrap_angle(bearing - state.heading);
}

double turn_angle_at(const envsim::Track& track, int k) {
  const int n = track.size();
  const envsim::Vec2 prev = track.waypoints[static_cast<std::size_t>((k - 1 + n) % n)];
  const envsim::Vec2 cur = track.waypoints[static_cast<std::size_t>(k % n)];
  const envsim::Vec2 next = track.waypoints[static_cast<std::size_t>((k + 1) % n)];
  const double in = std::atan2(cur.y - prev.y, cur.x - prev.x);
  const double out = std::atan2(next.y - cur.y, next.x - cur.x);
  return std::abs(envsim::wrap_angle(out - in));
}

Action expert_action(const envsim::EnvState& state, const envsim::Track& track, const ExpertParams& params) {
  const double alpha = heading_error(state, track, params.lookahead);
  if (std::abs(alpha) > params.angle_deadband) return alpha > 0 ? Action::Left : Action::Right;
  const double kappa = turn_angle_at(track, state.next_waypoint());
  if (kappa > params.brake_curvature && state.speed > params.v_target / 2) return Action::Brake;
  if (state.speed < params.v_target) return Action::Gas;
  return Action::Noop;
}

double expert_episode_reward(const envsim::Track& track, const envsim::EnvParams& env, const ExpertParams& params) {
  envsim::EnvState s = envsim::reset(track);
  double total = 0.0;
  while (!s.done) {
    auto r = envsim::step(s, expert_action(s, track, params), track, env);
    total += r.reward;
    s = std::move(r.state);
  }
  return total;
}

data::Dataset collect_demos(const EnvConfig& env, const ExpertParams& params, int n_episodes, std::uint64_t seed) {
  if (n_episodes < 1) throw ConfigError("collect_demos: n_episodes must be >= 1");
  env.env.validate();
  env.render.validate();
  params.validate(env.env);

  data::Dataset d;
  d.height = env.render.height;
  d.width = env.render.width;
  d.episodes.resize(static_cast<std::size_t>(n_episodes));

#pragma omp parallel for schedule(dynamic)
  for (int e = 0; e < n_episodes; ++e) {
    const envsim::Track track = envsim::generate_track(seed + static_cast<std::uint64_t>(e), env.track);
    envsim::EnvState s = envsim::reset(track);
    auto& records = d.episodes[static_cast<std::size_t>(e)];
    while (!s.done) {
      const Action a = expert_action(s, track, params);
      data::DemoRecord rec;
      rec.observation = envsim::render(s, track, env.render);
      rec.action = a;
      auto r = envsim::step(s, a, track, env.env);
      rec.reward = static_cast<float>(r.reward);
      records.push_back(std::move(rec));
      s = std::move(r.state);
    }
  }
  return d;
}

}  // namespace bcp::expert
