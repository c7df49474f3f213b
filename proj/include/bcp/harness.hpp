#pragma once

// Metrics and sweep orchestration: mean episode reward, backdoor control
// rate, the poisoning sweeps, and the CSV record they produce.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bcp/attack.hpp"
#include "bcp/config.hpp"
#include "bcp/dataset.hpp"
#include "bcp/policy.hpp"

namespace bcp::harness {

struct EvalConfig {
  int n_rollouts = 20;
  std::uint64_t track_seed_base = 10000;
  envsim::TrackParams track;
  envsim::EnvParams env;
  envsim::RenderConfig render;
  attack::AttackConfig attack;  // mode None for plain evaluation
  int workers = 0;

  void validate() const;
};

EvalConfig eval_config(const config::ExperimentConfig& cfg);

struct EvalReport {
  double mean_reward = 0.0;
  double se_reward = 0.0;  // sample stddev / sqrt(n); 0 when n = 1
  std::vector<attack::RolloutRecord> rollouts;
  std::vector<std::uint64_t> track_seeds;
  int attacks_used = 0;
  int induced_target = 0;
};

/// Rollouts on tracks seeded base..base+n-1, optionally under attack. Each
/// rollout sees the policy only through a black-box wrapper.
EvalReport evaluate_policy(const policy::PolicyNet& net, const EvalConfig& cfg);

/// Mean and standard error (sample stddev / sqrt(n), 0 for n = 1).
std::pair<double, double> mean_se(const std::vector<double>& xs);

struct ControlRate {
  double rate = 0.0;            // over all frames
  double rate_nontarget = 0.0;  // over frames whose expert action != target
  std::size_t n_frames = 0;
  std::size_t n_nontarget = 0;
};

/// Share of frames whose triggered version is classified as `target`.
/// Throws InputError for an empty frame set.
ControlRate control_rate(const policy::PolicyNet& net, const data::Dataset& dataset,
                         const std::vector<data::FrameIndex>& frames, const data::TriggerPatch& patch,
                         envsim::Action target);

// ---------------------------------------------------------------------------
// CSV

struct CsvRow {
  std::string experiment_id;  // "<config hash>/<sweep>"
  std::uint64_t seed = 0;
  int obs_size = 0;
  double poison_fraction = 0.0;
  std::string patch_type;
  int patch_size = 0;
  std::string attack_mode = "none";
  int budget = 0;
  double entropy_threshold = 0.0;
  int n_rollouts = 0;
  double mean_reward = 0.0;
  double se_reward = 0.0;
  double control_rate = 0.0;
  double control_rate_nontarget = 0.0;
  double train_holdout_acc = 0.0;
  double wall_seconds = 0.0;
  std::string error;  // non-empty for a failed cell; metrics are then NaN

  std::string config_hash() const;
  std::string sweep() const;
};

extern const std::vector<std::string> kCsvColumns;

void write_csv(std::ostream& out, const std::vector<CsvRow>& rows);
void write_csv(const std::filesystem::path& path, const std::vector<CsvRow>& rows);
/// Throws FormatError on a bad header or malformed row.
std::vector<CsvRow> read_csv(std::istream& in);
std::vector<CsvRow> read_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sweeps

enum class Axis { PoisonFraction, PatchSize, PatchType };

struct SweepSpec {
  std::string name;  // "fraction-red", "size-0.05", "type-0.05", ...
  Axis axis = Axis::PoisonFraction;
  std::vector<double> grid;  // fractions, patch sizes, or TriggerKind values
  double fraction = 0.05;    // fixed fraction for size/type sweeps
  data::TriggerKind kind = data::TriggerKind::RedPatch;  // fixed kind for fraction/size sweeps
  int patch_size = 3;                                    // fixed size for fraction/type sweeps
  int seeds = 3;

  void validate() const;
};

/// The sweeps named in cfg.sweeps, in a fixed order.
std::vector<SweepSpec> default_sweeps(const config::ExperimentConfig& cfg);

/// One trained cell: everything a row needs, plus the net for callers that
/// want to keep evaluating it.
struct CellResult {
  double mean_reward = 0.0;
  double se_reward = 0.0;
  ControlRate control;
  double holdout_accuracy = 0.0;
  double wall_seconds = 0.0;
  std::size_t n_poisoned = 0;
  policy::PolicyNet net;
  std::vector<data::FrameIndex> holdout;
};

struct CellKey {
  double fraction = 0.0;
  data::TriggerSpec trigger;
  std::uint64_t seed = 0;
};

/// Per-cell seed streams.
std::uint64_t poison_seed(std::uint64_t cell_seed);
std::uint64_t init_seed(std::uint64_t cell_seed);
std::uint64_t shuffle_seed(std::uint64_t cell_seed);

/// Poison (if fraction > 0), train a fresh net, evaluate it, and measure
/// control on the clean versions of its held-out frames.
CellResult run_cell(const config::ExperimentConfig& cfg, const data::Dataset& clean, const CellKey& key);

struct SweepOutput {
  std::vector<CsvRow> rows;
  std::size_t cells_trained = 0;  // distinct trainings after memoization
};

/// Runs every spec's grid x seeds. Identical cells across specs are trained
/// once. Failures become error rows. Rows come out in spec, grid, seed order.
SweepOutput run_sweep(const config::ExperimentConfig& cfg, const data::Dataset& clean,
                      const std::vector<SweepSpec>& specs);

// ---------------------------------------------------------------------------
// Test-time attack comparison

struct AttackSummary {
  attack::Mode mode = attack::Mode::None;
  EvalReport report;
  double induced_rate = 0.0;  // attacked steps that executed the target / attacked steps
};

/// Unattacked, Random and Entropy modes on the same track seeds.
std::vector<AttackSummary> compare_attacks(const policy::PolicyNet& net, const EvalConfig& base,
                                           const data::TriggerPatch& patch, int budget, double threshold,
                                           std::uint64_t schedule_seed);

std::string format_attack_table(const std::vector<AttackSummary>& rows);

}  // namespace bcp::harness
