#include "bcp/attack.hpp"

#include <algorithm>
#include <array>
#include <memory>

namespace bcp::attack {

namespace {
constexpr std::array<std::string_view, 3> kModeNames{"none", "random", "entropy"};
}

std::string_view mode_name(Mode m) { return kModeNames.at(static_cast<std::size_t>(m)); }

std::optional<Mode> parse_mode(std::string_view name) {
  for (std::size_t i = 0; i < kModeNames.size(); ++i) {
    if (kModeNames[i] == name) return static_cast<Mode>(i);
  }
  return std::nullopt;
}

void AttackConfig::validate(int height, int width) const {
  if (budget < 0) throw ConfigError("attack budget must be >= 0");
  if (mode == Mode::Entropy && !(entropy_threshold > 0.0)) throw ConfigError("entropy threshold must be > 0");
  if (mode != Mode::None) {
    patch.spec.validate(height, width);
    if (patch.spec.kind != data::TriggerKind::ColorShift &&
        patch.block.size() != static_cast<std::size_t>(patch.spec.size) * patch.spec.size * 3) {
      throw ConfigError("attack patch has not been materialized");
    }
  }
}

BlackBoxPolicy black_box(const policy::PolicyNet& net) {
  auto ws = std::make_shared<policy::Workspace>(net);
  return {net.height, net.width,
          [&net, ws](const envsim::Observation& obs) { return ws->forward(net, obs); }};
}

std::vector<int> plan_random_schedule(int budget, int t_max, std::uint64_t seed) {
  if (budget < 0 || t_max < 0 || budget > t_max) {
    throw ConfigError("random schedule needs 0 <= budget <= t_max (budget " + std::to_string(budget) + ", t_max " +
                      std::to_string(t_max) + ")");
  }
  std::vector<int> steps(static_cast<std::size_t>(t_max));
  for (int i = 0; i < t_max; ++i) steps[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (int i = 0; i < budget; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(t_max - i));
    std::swap(steps[static_cast<std::size_t>(i)], steps[j]);
  }
  steps.resize(static_cast<std::size_t>(budget));
  std::sort(steps.begin(), steps.end());
  return steps;
}

StepDecision entropy_decision(const ActionDistribution& dist, const AttackConfig& cfg, int budget_remaining) {
  StepDecision d;
  d.entropy = policy::entropy(dist);
  d.pre_attack_argmax = policy::argmax(dist);
  d.attacked = budget_remaining > 0 && d.entropy < cfg.entropy_threshold && d.pre_attack_argmax != cfg.target_action;
  d.budget_remaining = d.attacked ? budget_remaining - 1 : budget_remaining;
  return d;
}

RolloutRecord run_attacked_rollout(const envsim::Track& track, const BlackBoxPolicy& policy,
                                   const envsim::EnvParams& env, const envsim::RenderConfig& render,
                                   const AttackConfig& cfg) {
  if (policy.height != render.height || policy.width != render.width) {
    throw ConfigError("policy expects " + std::to_string(policy.height) + "x" + std::to_string(policy.width) +
                      " frames but the environment renders " + std::to_string(render.height) + "x" +
                      std::to_string(render.width));
  }
  cfg.validate(render.height, render.width);
  env.validate();

  std::vector<std::uint8_t> scheduled;
  if (cfg.mode == Mode::Random) {
    scheduled.assign(static_cast<std::size_t>(env.t_max), 0);
    for (int t : plan_random_schedule(cfg.budget, env.t_max, cfg.schedule_seed)) {
      scheduled[static_cast<std::size_t>(t)] = 1;
    }
  }
  Rng sampler(cfg.sample_seed);

  RolloutRecord rec;
  int budget = cfg.budget;
  envsim::EnvState state = envsim::reset(track);
  while (!state.done) {
    envsim::Observation obs = envsim::render(state, track, render);
    const ActionDistribution clean = policy.query(obs);
    StepDecision decision = entropy_decision(clean, cfg, budget);
    switch (cfg.mode) {
      case Mode::None:
        decision.attacked = false;
        break;
      case Mode::Random:
        decision.attacked = budget > 0 && scheduled[static_cast<std::size_t>(state.step_index)] != 0;
        break;
      case Mode::Entropy:
        break;
    }

    ActionDistribution acting = clean;
    if (decision.attacked) {
      data::apply_trigger_in_place(obs, cfg.patch);
      acting = policy.query(obs);
      budget -= 1;
    }

    Action action = policy::argmax(acting);
    if (cfg.sample_actions) {
      double u = sampler.uniform01();
      for (int a = 0; a < envsim::kNumActions; ++a) {
        u -= acting[static_cast<std::size_t>(a)];
        if (u < 0.0 || a == envsim::kNumActions - 1) {
          action = static_cast<Action>(a);
          break;
        }
      }
    }

    envsim::StepResult r = envsim::step(state, action, track, env);
    rec.steps.push_back({action, r.reward, decision.entropy, decision.attacked, decision.pre_attack_argmax});
    rec.total_reward += r.reward;
    if (decision.attacked) {
      rec.attacks_used += 1;
      if (action == cfg.target_action) rec.induced_target += 1;
    }
    state = std::move(r.state);
  }
  rec.lap_completed = state.progress >= track.size();
  return rec;
}

}  // namespace bcp::attack
