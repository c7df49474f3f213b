#pragma once

// Flat key=value experiment configuration. One struct holds every knob the
// CLI and the sweep runner understand; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bcp/attack.hpp"
#include "bcp/dataset.hpp"
#include "bcp/envsim.hpp"
#include "bcp/expert.hpp"
#include "bcp/policy.hpp"

namespace bcp::config {

struct ExperimentConfig {
  std::uint64_t seed = 1;  // base seed: cell seeds are seed, seed+1, ...

  // demonstrations and environment
  int demo_episodes = 40;
  std::uint64_t demo_seed = 1;
  int obs_size = 64;
  expert::EnvConfig env;  // render height/width follow obs_size
  expert::ExpertParams expert;

  // policy and training
  policy::Widths widths;
  policy::TrainConfig train;

  // poisoning
  envsim::Action target_action = envsim::Action::Gas;
  double poison_fraction = 0.05;
  data::TriggerSpec patch;

  // evaluation and test-time attack
  int n_rollouts = 20;
  std::uint64_t eval_track_seed = 10000;
  int attack_rollouts = 30;
  int budget = 100;
  double entropy_threshold = 0.005;
  bool sample_actions = false;

  // sweeps
  int sweep_seeds = 3;
  std::vector<std::string> sweeps{"fraction", "size", "type"};
  std::vector<double> fraction_grid{0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 0.7, 0.8, 0.9, 1.0};
  std::vector<data::TriggerKind> fraction_patch_types{data::TriggerKind::RedPatch};
  std::vector<int> size_grid{1, 2, 3, 5, 10, 15, 25, 50, 0};  // 0 = full frame (obs_size)
  std::vector<double> size_fractions{0.05, 0.2};
  std::vector<data::TriggerKind> type_grid{data::TriggerKind::RedPatch, data::TriggerKind::GaussianPatch,
                                           data::TriggerKind::ColorShift};
  double type_fraction = 0.05;

  // execution and I/O (not part of the config hash)
  int workers = 0;  // 0 = OpenMP default
  bool record_timing = false;
  std::filesystem::path out_dir = "out";
  std::filesystem::path input_dataset;
  std::filesystem::path input_checkpoint;
  std::filesystem::path input_csv;

  /// Sets one key from its text form. Throws ConfigError for unknown keys
  /// and malformed values.
  void set(std::string_view key, std::string_view value);

  /// Cross-field checks. Throws ConfigError.
  void validate() const;

  /// Every key in a fixed order, one `key=value` per line.
  std::string to_text() const;

  /// 16 hex digits of FNV-1a over the result-affecting keys.
  std::string hash() const;

  /// Resolves size grid entries (0 -> obs_size).
  int resolve_size(int n) const { return n == 0 ? obs_size : n; }

  /// Trigger spec at the given size/kind, other fields from `patch`.
  data::TriggerSpec trigger(data::TriggerKind kind, int size) const;
};

/// Parses `key=value` lines; `#` starts a comment; blank lines are ignored.
/// Errors name the line number. The result is validated.
ExperimentConfig parse_config(std::string_view text, std::string_view source = "<string>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// All recognised keys, in canonical order.
std::vector<std::string> known_keys();

}  // namespace bcp::config
