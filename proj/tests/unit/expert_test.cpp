#include <doctest.h>

#include "bcp/expert.hpp"

using namespace bcp;
using namespace bcp::envsim;

namespace {

// 30-gon: every corner turns by 12 degrees, well under the brake threshold.
Track circle() { return generate_track(1, 30, 90.0, 0.0); }

}  // namespace

TEST_CASE("rule cascade") {
  const Track t = circle();
  const expert::ExpertParams p;
  EnvState s = reset(t);
  REQUIRE(expert::heading_error(s, t, 1) == doctest::Approx(0.0).epsilon(1e-12));

  SUBCASE("dead ahead at rest accelerates") { CHECK(expert::expert_action(s, t, p) == Action::Gas); }
  SUBCASE("target to the left steers left") {
    s.heading -= 0.5;
    CHECK(expert::heading_error(s, t, 1) == doctest::Approx(0.5));
    CHECK(expert::expert_action(s, t, p) == Action::Left);
  }
  SUBCASE("target to the right steers right") {
    s.heading += 0.5;
    CHECK(expert::expert_action(s, t, p) == Action::Right);
  }
  SUBCASE("cruising on a gentle curve holds") {
    s.speed = p.v_target;
    CHECK(expert::turn_angle_at(t, s.next_waypoint()) < p.brake_curvature);
    CHECK(expert::expert_action(s, t, p) == Action::Noop);
  }
  SUBCASE("sharp corner ahead at speed brakes") {
    Track sharp = t;
    sharp.waypoints[2] = {sharp.waypoints[1].x - 40.0, sharp.waypoints[1].y + 5.0};
    s.speed = p.v_target;
    REQUIRE(expert::turn_angle_at(sharp, 1) > p.brake_curvature);
    CHECK(expert::expert_action(s, sharp, p) == Action::Brake);
  }
}

TEST_CASE("collect_demos is deterministic and clean") {
  expert::EnvConfig env;
  env.render.height = env.render.width = 32;
  const expert::ExpertParams p;
  const data::Dataset a = expert::collect_demos(env, p, 2, 5);
  const data::Dataset b = expert::collect_demos(env, p, 2, 5);
  CHECK(a == b);
  REQUIRE(a.episodes.size() == 2);
  for (const auto& ep : a.episodes) {
    for (const auto& r : ep) CHECK_FALSE(r.poisoned);
  }
}

TEST_CASE("expert completes laps with a substantial gas share") {
  expert::EnvConfig env;
  env.render.height = env.render.width = 32;
  const expert::ExpertParams p;
  const data::Dataset d = expert::collect_demos(env, p, 6, 1);
  const auto stats = data::dataset_stats(d);
  const double gas = static_cast<double>(stats.action_counts[index_of(Action::Gas)]) / stats.total;
  CHECK(gas >= 0.2);
  for (std::uint64_t seed = 10000; seed < 10005; ++seed) {
    const Track t = generate_track(seed, env.track);
    CHECK(expert::expert_episode_reward(t, env.env, p) > 0.9 * env.env.lap_reward_total);
  }
}

TEST_CASE("expert params validation") {
  const EnvParams env;
  expert::ExpertParams p;
  p.v_target = env.v_max + 1.0;
  CHECK_THROWS_AS(p.validate(env), ConfigError);
  p = {};
  p.lookahead = 0;
  CHECK_THROWS_AS(p.validate(env), ConfigError);
}
