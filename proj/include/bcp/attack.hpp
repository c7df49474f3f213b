#pragma once

// Test-time trigger scheduling against a black-box policy: a random-timing
// baseline and an entropy-thresholded scheduler that fires only where the
// policy is confident about a non-target action.

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "bcp/dataset.hpp"
#include "bcp/envsim.hpp"
#include "bcp/policy.hpp"

namespace bcp::attack {

using envsim::Action;
using policy::ActionDistribution;

enum class Mode : std::uint8_t { None, Random, Entropy };

std::string_view mode_name(Mode m);
std::optional<Mode> parse_mode(std::string_view name);

struct AttackConfig {
  Mode mode = Mode::None;
  int budget = 0;
  double entropy_threshold = 0.005;  // nats
  Action target_action = Action::Gas;
  data::TriggerPatch patch;
  std::uint64_t schedule_seed = 0;
  // Sample the executed action from the policy distribution instead of
  // taking its argmax.
  bool sample_actions = false;
  std::uint64_t sample_seed = 0;

  /// Throws ConfigError when the budget, threshold, or patch is invalid for
  /// frames of the given size.
  void validate(int height, int width) const;
};

/// The only view of the policy the attacker gets: frame size and a query
/// returning the action distribution for an observation.
struct BlackBoxPolicy {
  int height = 0;
  int width = 0;
  std::function<ActionDistribution(const envsim::Observation&)> query;
};

/// Wraps a net (read-only) as a black box. Each returned object owns its own
/// scratch buffers, so use one per concurrent rollout.
BlackBoxPolicy black_box(const policy::PolicyNet& net);

struct StepDecision {
  bool attacked = false;
  double entropy = 0.0;
  Action pre_attack_argmax = Action::Noop;
  int budget_remaining = 0;  // after this step's decision
};

/// B distinct timesteps drawn uniformly from [0, t_max), sorted.
/// Throws ConfigError unless 0 <= B <= t_max.
std::vector<int> plan_random_schedule(int budget, int t_max, std::uint64_t seed);

/// Attack iff budget remains, entropy < threshold, and argmax != target.
StepDecision entropy_decision(const ActionDistribution& dist, const AttackConfig& cfg, int budget_remaining);

struct StepRecord {
  Action action = Action::Noop;  // executed
  double reward = 0.0;
  double entropy = 0.0;  // of the clean-observation distribution
  bool attacked = false;
  Action pre_attack_argmax = Action::Noop;
};

struct RolloutRecord {
  std::vector<StepRecord> steps;
  double total_reward = 0.0;
  int attacks_used = 0;
  int induced_target = 0;  // attacked steps whose executed action was the target
  bool lap_completed = false;

  int n_steps() const { return static_cast<int>(steps.size()); }
};

RolloutRecord run_attacked_rollout(const envsim::Track& track, const BlackBoxPolicy& policy,
                                   const envsim::EnvParams& env, const envsim::RenderConfig& render,
                                   const AttackConfig& cfg);

}  // namespace bcp::attack
