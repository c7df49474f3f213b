// Command-line front end: demonstrations, poisoning, training, evaluation,
// test-time attacks, sweeps and reports.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bcp/attack.hpp"
#include "bcp/config.hpp"
#include "bcp/dataset.hpp"
#include "bcp/expert.hpp"
#include "bcp/harness.hpp"
#include "bcp/policy.hpp"
#include "bcp/report.hpp"

namespace fs = std::filesystem;
using namespace bcp;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> fraction;
  std::optional<std::string> patch_type;
  std::optional<int> patch_size;
  std::optional<int> budget;
  std::optional<double> entropy_threshold;
  std::optional<std::string> out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "key=value config file");
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--fraction", o.fraction, "poisoned fraction of target-action frames");
  cmd->add_option("--patch-type", o.patch_type, "red | gaussian | colorshift");
  cmd->add_option("--patch-size", o.patch_size, "trigger edge in pixels");
  cmd->add_option("--budget", o.budget, "test-time attack budget");
  cmd->add_option("--entropy-threshold", o.entropy_threshold, "entropy threshold (nats)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--set", o.sets, "extra key=value override (repeatable)");
}

config::ExperimentConfig resolve(const Overrides& o) {
  config::ExperimentConfig cfg = o.config_path.empty() ? config::ExperimentConfig{} : config::load_config(o.config_path);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.set("seed", std::to_string(*o.seed));
  if (o.fraction) cfg.poison_fraction = *o.fraction;
  if (o.patch_type) cfg.set("patch_type", *o.patch_type);
  if (o.patch_size) cfg.patch.size = *o.patch_size;
  if (o.budget) cfg.budget = *o.budget;
  if (o.entropy_threshold) cfg.entropy_threshold = *o.entropy_threshold;
  if (o.out) cfg.out_dir = *o.out;
  cfg.validate();
  return cfg;
}

fs::path demos_path(const config::ExperimentConfig& c) { return c.out_dir / "demos.bcd"; }
fs::path poisoned_path(const config::ExperimentConfig& c) { return c.out_dir / "poisoned.bcd"; }
fs::path checkpoint_path(const config::ExperimentConfig& c) {
  return c.input_checkpoint.empty() ? c.out_dir / "policy.bcpk" : c.input_checkpoint;
}

data::Dataset collect(const config::ExperimentConfig& cfg) {
  return expert::collect_demos(cfg.env, cfg.expert, cfg.demo_episodes, cfg.demo_seed);
}

// Clean demonstrations: an explicit input, the saved gen-demos output, or a
// fresh collection.
data::Dataset clean_demos(const config::ExperimentConfig& cfg) {
  if (!cfg.input_dataset.empty()) return data::load_dataset(cfg.input_dataset);
  if (fs::exists(demos_path(cfg))) return data::load_dataset(demos_path(cfg));
  std::fprintf(stderr, "collecting %d demonstration episodes\n", cfg.demo_episodes);
  return collect(cfg);
}

void print_stats(const data::Dataset& d) {
  const auto st = data::dataset_stats(d);
  std::printf("frames %zu in %zu episodes\n", st.total, d.episodes.size());
  for (int a = 0; a < envsim::kNumActions; ++a) {
    const auto au = static_cast<std::size_t>(a);
    std::printf("  %-6s %7zu (%5.1f%%)  poisoned %zu\n", std::string(envsim::action_name(envsim::action_from_index(a))).c_str(),
                st.action_counts[au], 100.0 * static_cast<double>(st.action_counts[au]) / static_cast<double>(st.total),
                st.poisoned_counts[au]);
  }
}

harness::CsvRow base_row(const config::ExperimentConfig& cfg, const std::string& sweep) {
  harness::CsvRow r;
  r.experiment_id = cfg.hash() + "/" + sweep;
  r.seed = cfg.seed;
  r.obs_size = cfg.obs_size;
  r.poison_fraction = cfg.poison_fraction;
  r.patch_type = std::string(data::trigger_name(cfg.patch.kind));
  r.patch_size = cfg.patch.size;
  return r;
}

int cmd_gen_demos(const config::ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const data::Dataset d = collect(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  data::save_dataset(d, demos_path(cfg));
  print_stats(d);
  double total = 0.0;
  for (const auto& ep : d.episodes) {
    for (const auto& r : ep) total += r.reward;
  }
  std::printf("expert mean episode reward %.2f\n", total / static_cast<double>(d.episodes.size()));
  std::printf("wrote %s (%.1fs)\n", demos_path(cfg).string().c_str(), secs);
  return 0;
}

int cmd_poison(const config::ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const data::Dataset clean = clean_demos(cfg);
  const auto patch = data::make_trigger(cfg.patch, clean.height, clean.width);
  auto [poisoned, rep] =
      data::poison_dataset(clean, cfg.target_action, cfg.poison_fraction, patch, harness::poison_seed(cfg.seed));
  data::save_dataset(poisoned, poisoned_path(cfg));
  std::printf("poisoned %zu of %zu %s frames (%.2f%% of the dataset) with a %dx%d %s trigger\n", rep.n_poisoned,
              rep.n_target_frames, std::string(envsim::action_name(cfg.target_action)).c_str(),
              100.0 * rep.overall_fraction, cfg.patch.size, cfg.patch.size,
              std::string(data::trigger_name(cfg.patch.kind)).c_str());
  print_stats(poisoned);
  std::printf("wrote %s\n", poisoned_path(cfg).string().c_str());
  return 0;
}

int cmd_train(const config::ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  fs::path in = cfg.input_dataset;
  if (in.empty()) in = fs::exists(poisoned_path(cfg)) ? poisoned_path(cfg) : demos_path(cfg);
  const data::Dataset d = data::load_dataset(in);
  std::printf("training on %s (%zu frames)\n", in.string().c_str(), d.total_frames());
  policy::PolicyNet net = policy::init_policy(d.height, d.width, cfg.widths, harness::init_seed(cfg.seed));
  policy::TrainConfig tc = cfg.train;
  tc.shuffle_seed = harness::shuffle_seed(cfg.seed);
  const auto log = policy::train_bc(net, d, tc);
  for (const auto& e : log.epochs) {
    std::printf("epoch %d  loss %.4f  train_acc %.4f  holdout_acc %.4f  %.1fs\n", e.epoch, e.train_loss,
                e.train_accuracy, e.holdout_accuracy, e.wall_seconds);
  }
  policy::save_checkpoint(net, checkpoint_path(cfg));
  std::printf("wrote %s (%zu parameters)\n", checkpoint_path(cfg).string().c_str(), net.parameter_count());
  return 0;
}

int cmd_eval(const config::ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const policy::PolicyNet net = policy::load_checkpoint(checkpoint_path(cfg));
  const auto rep = harness::evaluate_policy(net, harness::eval_config(cfg));
  std::printf("mean reward %.2f +- %.2f (SE) over %d rollouts\n", rep.mean_reward, rep.se_reward, cfg.n_rollouts);

  harness::CsvRow row = base_row(cfg, "eval");
  row.n_rollouts = cfg.n_rollouts;
  row.mean_reward = rep.mean_reward;
  row.se_reward = rep.se_reward;

  // Control on the clean held-out frames of the split `train` used.
  const data::Dataset clean = clean_demos(cfg);
  const auto split = policy::split_frames(clean, cfg.train.holdout_fraction,
                                          derive_seed(harness::shuffle_seed(cfg.seed), 1));
  const auto patch = data::make_trigger(cfg.patch, clean.height, clean.width);
  const auto cr = harness::control_rate(net, clean, split.holdout, patch, cfg.target_action);
  std::printf("control rate %.4f (non-%s frames %.4f) over %zu held-out frames\n", cr.rate,
              std::string(envsim::action_name(cfg.target_action)).c_str(), cr.rate_nontarget, cr.n_frames);
  row.control_rate = cr.rate;
  row.control_rate_nontarget = cr.rate_nontarget;
  row.train_holdout_acc = policy::accuracy(net, clean, split.holdout);
  harness::write_csv(cfg.out_dir / "eval.csv", {row});
  return 0;
}

int cmd_attack_eval(const config::ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const policy::PolicyNet net = policy::load_checkpoint(checkpoint_path(cfg));
  harness::EvalConfig ec = harness::eval_config(cfg);
  ec.n_rollouts = cfg.attack_rollouts;
  const auto patch = data::make_trigger(cfg.patch, net.height, net.width);
  const auto rows =
      harness::compare_attacks(net, ec, patch, cfg.budget, cfg.entropy_threshold, derive_seed(cfg.seed, 51));
  std::printf("budget %d, entropy threshold %g, %d rollouts\n", cfg.budget, cfg.entropy_threshold,
              cfg.attack_rollouts);
  std::fputs(harness::format_attack_table(rows).c_str(), stdout);

  std::vector<harness::CsvRow> out;
  for (const auto& r : rows) {
    harness::CsvRow row = base_row(cfg, "attack-" + std::string(data::trigger_name(cfg.patch.kind)));
    row.attack_mode = std::string(attack::mode_name(r.mode));
    row.budget = r.mode == attack::Mode::None ? 0 : cfg.budget;
    row.entropy_threshold = r.mode == attack::Mode::Entropy ? cfg.entropy_threshold : 0.0;
    row.n_rollouts = cfg.attack_rollouts;
    row.mean_reward = r.report.mean_reward;
    row.se_reward = r.report.se_reward;
    row.control_rate = r.induced_rate;
    out.push_back(row);
  }
  harness::write_csv(cfg.out_dir / "attack.csv", out);
  return 0;
}

int cmd_sweep(const config::ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const data::Dataset clean = cfg.input_dataset.empty() ? collect(cfg) : data::load_dataset(cfg.input_dataset);
  const auto specs = harness::default_sweeps(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = harness::run_sweep(cfg, clean, specs);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  harness::write_csv(cfg.out_dir / "sweep.csv", res.rows);
  int failed = 0;
  for (const auto& r : res.rows) {
    if (!r.error.empty()) {
      ++failed;
      std::fprintf(stderr, "cell %s seed %llu failed: %s\n", r.experiment_id.c_str(),
                   static_cast<unsigned long long>(r.seed), r.error.c_str());
    }
  }
  std::printf("%zu rows (%zu trainings, %d failed) in %.0fs\n", res.rows.size(), res.cells_trained, failed, secs);
  const auto emitted = report::emit_report(res.rows, cfg.out_dir);
  for (const auto& f : emitted.files) std::printf("wrote %s\n", f.string().c_str());
  return failed ? 1 : 0;
}

int cmd_report(const config::ExperimentConfig& cfg) {
  const fs::path in = cfg.input_csv.empty() ? cfg.out_dir / "sweep.csv" : cfg.input_csv;
  const auto rows = harness::read_csv(in);
  const auto emitted = report::emit_report(rows, cfg.out_dir);
  for (const auto& f : emitted.files) std::printf("wrote %s\n", f.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clean-label backdoor poisoning lab for behavioral-cloning policies"};
  app.require_subcommand(1);
  Overrides o;
  struct Cmd {
    const char* name;
    const char* help;
    int (*run)(const config::ExperimentConfig&);
  };
  const Cmd cmds[] = {
      {"gen-demos", "collect expert demonstrations", cmd_gen_demos},
      {"poison", "apply clean-label trigger poisoning to the demonstrations", cmd_poison},
      {"train", "train a policy by behavioral cloning", cmd_train},
      {"eval", "mean episode reward and control rate of a checkpoint", cmd_eval},
      {"attack-eval", "compare unattacked, random and entropy-timed trigger attacks", cmd_attack_eval},
      {"sweep", "run the configured poisoning sweeps and write CSV + charts", cmd_sweep},
      {"report", "render charts and a summary from a sweep CSV", cmd_report},
  };
  std::vector<std::pair<CLI::App*, const Cmd*>> subs;
  for (const Cmd& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, o);
    subs.emplace_back(sub, &c);
  }
  CLI11_PARSE(app, argc, argv);

  try {
    const config::ExperimentConfig cfg = resolve(o);
    for (auto& [sub, c] : subs) {
      if (sub->parsed()) return c->run(cfg);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
