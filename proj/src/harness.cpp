#include "bcp/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace bcp::harness {

void EvalConfig::validate() const {
  if (n_rollouts < 1) throw ConfigError("n_rollouts must be >= 1");
  if (workers < 0) throw ConfigError("workers must be >= 0");
  env.validate();
  render.validate();
  if (attack.mode != attack::Mode::None) attack.validate(render.height, render.width);
}

EvalConfig eval_config(const config::ExperimentConfig& cfg) {
  EvalConfig e;
  e.n_rollouts = cfg.n_rollouts;
  e.track_seed_base = cfg.eval_track_seed;
  e.track = cfg.env.track;
  e.env = cfg.env.env;
  e.render = cfg.env.render;
  e.attack.target_action = cfg.target_action;
  e.attack.sample_actions = cfg.sample_actions;
  e.attack.sample_seed = derive_seed(cfg.seed, 41);
  e.workers = cfg.workers;
  return e;
}

std::pair<double, double> mean_se(const std::vector<double>& xs) {
  if (xs.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double n = static_cast<double>(xs.size());
  const double mean = sum / n;
  if (xs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

EvalReport evaluate_policy(const policy::PolicyNet& net, const EvalConfig& cfg) {
  cfg.validate();
  net.require_input(cfg.render.height, cfg.render.width);
  EvalReport rep;
  rep.rollouts.resize(static_cast<std::size_t>(cfg.n_rollouts));
  for (int i = 0; i < cfg.n_rollouts; ++i) rep.track_seeds.push_back(cfg.track_seed_base + static_cast<std::uint64_t>(i));

  std::vector<std::string> errors(static_cast<std::size_t>(cfg.n_rollouts));
  const int threads = cfg.workers > 0 ? cfg.workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (int i = 0; i < cfg.n_rollouts; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    try {
      const envsim::Track track = envsim::generate_track(rep.track_seeds[iu], cfg.track);
      attack::AttackConfig ac = cfg.attack;
      ac.schedule_seed = derive_seed(cfg.attack.schedule_seed, rep.track_seeds[iu]);
      ac.sample_seed = derive_seed(cfg.attack.sample_seed, rep.track_seeds[iu]);
      rep.rollouts[iu] = attack::run_attacked_rollout(track, attack::black_box(net), cfg.env, cfg.render, ac);
    } catch (const std::exception& e) {
      errors[iu] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw ConfigError(e);
  }

  std::vector<double> totals;
  for (const auto& r : rep.rollouts) {
    totals.push_back(r.total_reward);
    rep.attacks_used += r.attacks_used;
    rep.induced_target += r.induced_target;
  }
  std::tie(rep.mean_reward, rep.se_reward) = mean_se(totals);
  return rep;
}

ControlRate control_rate(const policy::PolicyNet& net, const data::Dataset& dataset,
                         const std::vector<data::FrameIndex>& frames, const data::TriggerPatch& patch,
                         envsim::Action target) {
  if (frames.empty()) throw InputError("control_rate: empty frame set");
  net.require_input(dataset.height, dataset.width);
  patch.spec.validate(dataset.height, dataset.width);
  std::vector<envsim::Observation> triggered(frames.size());
  std::vector<const envsim::Observation*> ptrs(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    triggered[i] = data::apply_trigger(data::record_at(dataset, frames[i]).observation, patch);
    ptrs[i] = &triggered[i];
  }
  const auto dists = policy::forward_batch(net, ptrs);
  ControlRate cr;
  cr.n_frames = frames.size();
  std::size_t hit = 0, hit_nt = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const bool to_target = policy::argmax(dists[i]) == target;
    hit += to_target;
    if (data::record_at(dataset, frames[i]).action != target) {
      ++cr.n_nontarget;
      hit_nt += to_target;
    }
  }
  cr.rate = static_cast<double>(hit) / static_cast<double>(cr.n_frames);
  cr.rate_nontarget =
      cr.n_nontarget ? static_cast<double>(hit_nt) / static_cast<double>(cr.n_nontarget) : 0.0;
  return cr;
}

// ---------------------------------------------------------------------------
// CSV

const std::vector<std::string> kCsvColumns{
    "experiment_id", "seed",       "obs_size",    "poison_fraction",   "patch_type",           "patch_size",
    "attack_mode",   "budget",     "entropy_threshold", "n_rollouts",  "mean_reward",          "se_reward",
    "control_rate",  "control_rate_nontarget", "train_holdout_acc", "wall_seconds"};

std::string CsvRow::config_hash() const { return experiment_id.substr(0, experiment_id.find('/')); }

std::string CsvRow::sweep() const {
  const auto slash = experiment_id.find('/');
  return slash == std::string::npos ? std::string() : experiment_id.substr(slash + 1);
}

namespace {

std::string num(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

double parse_double(const std::string& s, int line) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw FormatError("csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

template <typename T>
T parse_int(const std::string& s, int line) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw FormatError("csv line " + std::to_string(line) + ": bad integer '" + s + "'");
  }
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_csv(std::ostream& out, const std::vector<CsvRow>& rows) {
  for (std::size_t i = 0; i < kCsvColumns.size(); ++i) out << (i ? "," : "") << kCsvColumns[i];
  out << '\n';
  for (const CsvRow& r : rows) {
    if (r.experiment_id.find(',') != std::string::npos || r.patch_type.find(',') != std::string::npos) {
      throw InputError("csv fields may not contain commas");
    }
    out << r.experiment_id << ',' << r.seed << ',' << r.obs_size << ',' << num(r.poison_fraction) << ','
        << r.patch_type << ',' << r.patch_size << ',' << r.attack_mode << ',' << r.budget << ','
        << num(r.entropy_threshold) << ',' << r.n_rollouts << ',' << num(r.mean_reward) << ',' << num(r.se_reward)
        << ',' << num(r.control_rate) << ',' << num(r.control_rate_nontarget) << ',' << num(r.train_holdout_acc)
        << ',' << num(r.wall_seconds) << '\n';
  }
}

void write_csv(const std::filesystem::path& path, const std::vector<CsvRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_csv(out, rows);
  if (!out) throw InputError("write failed: " + path.string());
}

std::vector<CsvRow> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("csv: missing header");
  const auto header = split_csv(line);
  if (header != kCsvColumns) throw FormatError("csv: unexpected header '" + line + "'");
  std::vector<CsvRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    if (f.size() != kCsvColumns.size()) {
      throw FormatError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(kCsvColumns.size()) +
                        " fields, got " + std::to_string(f.size()));
    }
    CsvRow r;
    r.experiment_id = f[0];
    r.seed = parse_int<std::uint64_t>(f[1], line_no);
    r.obs_size = parse_int<int>(f[2], line_no);
    r.poison_fraction = parse_double(f[3], line_no);
    r.patch_type = f[4];
    r.patch_size = parse_int<int>(f[5], line_no);
    r.attack_mode = f[6];
    r.budget = parse_int<int>(f[7], line_no);
    r.entropy_threshold = parse_double(f[8], line_no);
    r.n_rollouts = parse_int<int>(f[9], line_no);
    r.mean_reward = parse_double(f[10], line_no);
    r.se_reward = parse_double(f[11], line_no);
    r.control_rate = parse_double(f[12], line_no);
    r.control_rate_nontarget = parse_double(f[13], line_no);
    r.train_holdout_acc = parse_double(f[14], line_no);
    r.wall_seconds = parse_double(f[15], line_no);
    if (std::isnan(r.mean_reward)) r.error = "failed cell";
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<CsvRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_csv(in);
}

// ---------------------------------------------------------------------------
// Sweeps

void SweepSpec::validate() const {
  if (grid.empty()) throw ConfigError("sweep " + name + ": empty grid");
  if (seeds < 1) throw ConfigError("sweep " + name + ": seeds must be >= 1");
}

std::vector<SweepSpec> default_sweeps(const config::ExperimentConfig& cfg) {
  std::vector<SweepSpec> specs;
  for (const std::string& s : cfg.sweeps) {
    if (s == "fraction") {
      for (data::TriggerKind k : cfg.fraction_patch_types) {
        SweepSpec sp;
        sp.name = "fraction-" + std::string(data::trigger_name(k));
        sp.axis = Axis::PoisonFraction;
        sp.grid = cfg.fraction_grid;
        sp.kind = k;
        sp.patch_size = cfg.patch.size;
        sp.seeds = cfg.sweep_seeds;
        specs.push_back(sp);
      }
    } else if (s == "size") {
      for (double f : cfg.size_fractions) {
        SweepSpec sp;
        sp.name = "size-" + num(f);
        sp.axis = Axis::PatchSize;
        for (int n : cfg.size_grid) sp.grid.push_back(cfg.resolve_size(n));
        sp.fraction = f;
        sp.kind = cfg.patch.kind;
        sp.seeds = cfg.sweep_seeds;
        specs.push_back(sp);
      }
    } else if (s == "type") {
      SweepSpec sp;
      sp.name = "type-" + num(cfg.type_fraction);
      sp.axis = Axis::PatchType;
      for (data::TriggerKind k : cfg.type_grid) sp.grid.push_back(static_cast<double>(k));
      sp.fraction = cfg.type_fraction;
      sp.patch_size = cfg.patch.size;
      sp.seeds = cfg.sweep_seeds;
      specs.push_back(sp);
    } else {
      throw ConfigError("unknown sweep '" + s + "'");
    }
  }
  return specs;
}

std::uint64_t poison_seed(std::uint64_t cell_seed) { return derive_seed(cell_seed, 11); }
std::uint64_t init_seed(std::uint64_t cell_seed) { return derive_seed(cell_seed, 12); }
std::uint64_t shuffle_seed(std::uint64_t cell_seed) { return derive_seed(cell_seed, 13); }

namespace {

void require_disjoint(const std::vector<data::FrameIndex>& a, const std::vector<data::FrameIndex>& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) throw ContractError("evaluation frame also used for training");
    if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
}

}  // namespace

CellResult run_cell(const config::ExperimentConfig& cfg, const data::Dataset& clean, const CellKey& key) {
  const auto t0 = std::chrono::steady_clock::now();
  const data::TriggerPatch patch = data::make_trigger(key.trigger, clean.height, clean.width);

  std::optional<data::Dataset> poisoned;
  CellResult res;
  if (key.fraction > 0.0) {
    auto [d, rep] = data::poison_dataset(clean, cfg.target_action, key.fraction, patch, poison_seed(key.seed));
    poisoned = std::move(d);
    res.n_poisoned = rep.n_poisoned;
  }
  const data::Dataset& train_set = poisoned ? *poisoned : clean;

  res.net = policy::init_policy(clean.height, clean.width, cfg.widths, init_seed(key.seed));
  policy::TrainConfig tc = cfg.train;
  tc.shuffle_seed = shuffle_seed(key.seed);
  const policy::TrainLog log = policy::train_bc(res.net, train_set, tc);
  poisoned.reset();
  require_disjoint(log.split.holdout, log.split.train);
  res.holdout = log.split.holdout;
  res.holdout_accuracy = log.epochs.empty() ? policy::accuracy(res.net, train_set, log.split.holdout)
                                            : log.epochs.back().holdout_accuracy;

  EvalConfig ec = eval_config(cfg);
  ec.workers = 1;
  const EvalReport er = evaluate_policy(res.net, ec);
  res.mean_reward = er.mean_reward;
  res.se_reward = er.se_reward;
  res.control = control_rate(res.net, clean, res.holdout, patch, cfg.target_action);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

namespace {

// Cells that train the same net. At fraction 0 the trigger never reaches the
// training set, so it is not part of the identity; control is measured per
// row with the row's own trigger.
bool same_training(const CellKey& a, const CellKey& b) {
  if (a.fraction != b.fraction || a.seed != b.seed) return false;
  if (a.fraction == 0.0) return true;
  const auto& x = a.trigger;
  const auto& y = b.trigger;
  return x.kind == y.kind && x.size == y.size && x.anchor_row == y.anchor_row && x.anchor_col == y.anchor_col &&
         (x.kind != data::TriggerKind::GaussianPatch || x.gaussian_seed == y.gaussian_seed) &&
         (x.kind != data::TriggerKind::ColorShift || x.shift_offset == y.shift_offset);
}

}  // namespace

SweepOutput run_sweep(const config::ExperimentConfig& cfg, const data::Dataset& clean,
                      const std::vector<SweepSpec>& specs) {
  cfg.validate();
  for (const auto& s : specs) s.validate();
  const std::string hash = cfg.hash();

  struct Planned {
    std::size_t spec;
    CellKey key;
    std::size_t unique;
  };
  std::vector<Planned> plan;
  std::vector<CellKey> unique;
  for (std::size_t si = 0; si < specs.size(); ++si) {
    const SweepSpec& sp = specs[si];
    for (double g : sp.grid) {
      for (int s = 0; s < sp.seeds; ++s) {
        CellKey k;
        k.seed = cfg.seed + static_cast<std::uint64_t>(s);
        switch (sp.axis) {
          case Axis::PoisonFraction:
            k.fraction = g;
            k.trigger = cfg.trigger(sp.kind, sp.patch_size);
            break;
          case Axis::PatchSize:
            k.fraction = sp.fraction;
            k.trigger = cfg.trigger(sp.kind, static_cast<int>(g));
            break;
          case Axis::PatchType:
            k.fraction = sp.fraction;
            k.trigger = cfg.trigger(static_cast<data::TriggerKind>(static_cast<int>(g)), sp.patch_size);
            break;
        }
        std::size_t u = 0;
        while (u < unique.size() && !same_training(unique[u], k)) ++u;
        if (u == unique.size()) unique.push_back(k);
        plan.push_back({si, k, u});
      }
    }
  }

  struct Outcome {
    std::optional<CellResult> result;
    std::string error;
  };
  std::vector<Outcome> outcomes(unique.size());
  const int threads = cfg.workers > 0 ? cfg.workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::size_t u = 0; u < unique.size(); ++u) {
    try {
      outcomes[u].result = run_cell(cfg, clean, unique[u]);
    } catch (const std::exception& e) {
      outcomes[u].error = e.what();
    }
  }

  // Control with each row's own trigger (differs from the trained one only
  // for fraction-0 cells shared across trigger kinds).
  std::vector<std::optional<ControlRate>> control(plan.size());
  std::vector<std::string> control_error(plan.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const Outcome& o = outcomes[plan[i].unique];
    if (!o.result) continue;
    const CellKey& trained = unique[plan[i].unique];
    if (same_training(trained, plan[i].key) && trained.trigger.kind == plan[i].key.trigger.kind &&
        trained.trigger.size == plan[i].key.trigger.size) {
      control[i] = o.result->control;
      continue;
    }
    try {
      const auto patch = data::make_trigger(plan[i].key.trigger, clean.height, clean.width);
      control[i] = control_rate(o.result->net, clean, o.result->holdout, patch, cfg.target_action);
    } catch (const std::exception& e) {
      control_error[i] = e.what();
    }
  }

  SweepOutput out;
  out.cells_trained = unique.size();
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const Planned& p = plan[i];
    CsvRow row;
    row.experiment_id = hash + "/" + specs[p.spec].name;
    row.seed = p.key.seed;
    row.obs_size = cfg.obs_size;
    row.poison_fraction = p.key.fraction;
    row.patch_type = std::string(data::trigger_name(p.key.trigger.kind));
    row.patch_size = p.key.trigger.size;
    row.n_rollouts = cfg.n_rollouts;
    const Outcome& o = outcomes[p.unique];
    if (o.result && control[i]) {
      row.mean_reward = o.result->mean_reward;
      row.se_reward = o.result->se_reward;
      row.control_rate = control[i]->rate;
      row.control_rate_nontarget = control[i]->rate_nontarget;
      row.train_holdout_acc = o.result->holdout_accuracy;
      row.wall_seconds = cfg.record_timing ? o.result->wall_seconds : 0.0;
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.mean_reward = row.se_reward = row.control_rate = row.control_rate_nontarget = row.train_holdout_acc = nan;
      row.error = o.result ? control_error[i] : o.error;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attack comparison

std::vector<AttackSummary> compare_attacks(const policy::PolicyNet& net, const EvalConfig& base,
                                           const data::TriggerPatch& patch, int budget, double threshold,
                                           std::uint64_t schedule_seed) {
  std::vector<AttackSummary> out;
  for (attack::Mode m : {attack::Mode::None, attack::Mode::Random, attack::Mode::Entropy}) {
    EvalConfig ec = base;
    ec.attack.mode = m;
    ec.attack.budget = m == attack::Mode::None ? 0 : budget;
    ec.attack.entropy_threshold = threshold;
    ec.attack.patch = patch;
    ec.attack.schedule_seed = schedule_seed;
    AttackSummary s;
    s.mode = m;
    s.report = evaluate_policy(net, ec);
    s.induced_rate = s.report.attacks_used
                         ? static_cast<double>(s.report.induced_target) / static_cast<double>(s.report.attacks_used)
                         : 0.0;
    out.push_back(std::move(s));
  }
  return out;
}

std::string format_attack_table(const std::vector<AttackSummary>& rows) {
  std::ostringstream ss;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-10s %12s %10s %9s %9s %8s\n", "mode", "mean_reward", "se", "attacks",
                "laps", "induced");
  ss << buf;
  for (const auto& r : rows) {
    int laps = 0;
    for (const auto& ro : r.report.rollouts) laps += ro.lap_completed;
    std::snprintf(buf, sizeof(buf), "%-10s %12.2f %10.2f %9d %5d/%-3zu %8.3f\n",
                  std::string(attack::mode_name(r.mode)).c_str(), r.report.mean_reward, r.report.se_reward,
                  r.report.attacks_used, laps, r.report.rollouts.size(), r.induced_rate);
    ss << buf;
  }
  return ss.str();
}

}  // namespace bcp::harness
