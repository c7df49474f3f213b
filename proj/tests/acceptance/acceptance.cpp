// Acceptance run: one PASS/FAIL line per criterion. Criteria 4-7 and 10 share
// one full sweep of the experiment config; 10 runs it a second time.

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bcp/config.hpp"
#include "bcp/expert.hpp"
#include "bcp/harness.hpp"
#include "bcp/report.hpp"
#include "oracles.hpp"
#include "properties.hpp"

namespace fs = std::filesystem;
using namespace bcp;

namespace {

// Tolerances.
constexpr double kFdEps = 1e-3;
constexpr double kFdTol = 1e-3;
constexpr double kForwardTol = 1e-5;
constexpr double kGasShareMin = 0.20;
constexpr double kHoldoutMin = 0.90;
constexpr double kRewardVsExpert = 0.85;
constexpr double kControlMin = 0.90;
constexpr double kRewardBand = 0.10;
constexpr double kHoldoutBand = 0.03;
constexpr double kTypeMargin = 0.30;
constexpr double kCollapseRatio = 0.50;
constexpr double kCleanControlBand = 0.10;
constexpr double kPlateauSlack = 0.05;
constexpr double kPlateauMin = 0.85;
constexpr double kEntropyVsUnattacked = 0.80;

struct AcceptanceConfig {
  fs::path experiment_config;
  double expert_reward_floor = 0.0;
  int expert_tracks = 20;
  int fd_instances = 10;
  int property_cases = 100;
};

AcceptanceConfig load_acceptance(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  AcceptanceConfig c;
  const std::map<std::string, std::function<void(const std::string&)>> keys{
      {"experiment_config", [&](const std::string& v) { c.experiment_config = path.parent_path() / v; }},
      {"expert_reward_floor", [&](const std::string& v) { c.expert_reward_floor = std::stod(v); }},
      {"expert_tracks", [&](const std::string& v) { c.expert_tracks = std::stoi(v); }},
      {"fd_instances", [&](const std::string& v) { c.fd_instances = std::stoi(v); }},
      {"property_cases", [&](const std::string& v) { c.property_cases = std::stoi(v); }},
  };
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path.string() + ":" + std::to_string(n) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(where + "unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const std::logic_error&) {
      throw ConfigError(where + "bad value '" + value + "' for " + key);
    }
  }
  if (c.experiment_config.empty()) throw ConfigError(path.string() + ": experiment_config is required");
  return c;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failed = 0;

void report_line(int id, const char* title, const Outcome& o) {
  if (!o.pass) ++g_failed;
  std::printf("criterion %2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", title, o.detail.c_str());
  std::fflush(stdout);
}

void progress(const std::string& msg) {
  std::printf("  .. %s\n", msg.c_str());
  std::fflush(stdout);
}

// Mean of one metric over the seeds of a (sweep, fraction, type, size) cell.
struct CellStats {
  int n = 0;
  double reward = 0.0, control = 0.0, holdout = 0.0;
};

CellStats cell(const std::vector<harness::CsvRow>& rows, const std::string& sweep, double fraction,
               const std::string& type, int size) {
  CellStats s;
  for (const auto& r : rows) {
    if (r.sweep() != sweep || !r.error.empty()) continue;
    if (std::abs(r.poison_fraction - fraction) > 1e-12 || r.patch_type != type || r.patch_size != size) continue;
    ++s.n;
    s.reward += r.mean_reward;
    s.control += r.control_rate;
    s.holdout += r.train_holdout_acc;
  }
  if (s.n == 0) throw InputError(fmt("no rows for %s f=%g %s N=%d", sweep.c_str(), fraction, type.c_str(), size));
  s.reward /= s.n;
  s.control /= s.n;
  s.holdout /= s.n;
  return s;
}

// Same shortest round-trip form the sweep names use.
std::string fraction_key(double f) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, f);
  return std::string(buf, ptr);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Acceptance {
 public:
  Acceptance(AcceptanceConfig acc, config::ExperimentConfig cfg, fs::path work)
      : acc_(std::move(acc)), cfg_(std::move(cfg)), work_(std::move(work)) {}

  Outcome numeric_core() {
    const auto t0 = Clock::now();
    const auto a = testing::audit_gradients(acc_.fd_instances, kFdEps);
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = a.worst_gradient() < kFdTol && a.conv_forward < kForwardTol && a.pool_forward < kForwardTol && secs < 120;
    o.detail = fmt(
        "max FD rel err conv %.2e linear %.2e relu %.2e pool %.2e softmax-CE %.2e (< %.0e, %d instances); "
        "forward vs oracle conv %.2e pool %.2e (< %.0e); %.1f s",
        a.conv, a.linear, a.relu, a.maxpool, a.softmax_ce, kFdTol, acc_.fd_instances, a.conv_forward, a.pool_forward,
        kForwardTol, secs);
    return o;
  }

  Outcome expert_competence() {
    const auto& env = cfg_.env;
    double sum = 0.0;
    int laps = 0;
    for (int i = 0; i < acc_.expert_tracks; ++i) {
      const auto track = envsim::generate_track(cfg_.eval_track_seed + i, env.track);
      envsim::EnvState s = envsim::reset(track);
      double total = 0.0;
      while (!s.done) {
        const auto r = envsim::step(s, expert::expert_action(s, track, cfg_.expert), track, env.env);
        total += r.reward;
        s = r.state;
      }
      sum += total;
      if (s.visited_count() == static_cast<int>(track.waypoints.size())) ++laps;
    }
    const double mean = sum / acc_.expert_tracks;
    expert_mean_ = mean;
    const auto stats = data::dataset_stats(clean());
    const double gas = static_cast<double>(stats.action_counts[envsim::index_of(envsim::Action::Gas)]) / stats.total;
    Outcome o;
    o.pass = laps == acc_.expert_tracks && mean >= acc_.expert_reward_floor && gas >= kGasShareMin;
    o.detail = fmt("laps %d/%d; mean reward %.2f (floor %.2f); gas share %.3f of %zu demo frames (>= %.2f)", laps,
                   acc_.expert_tracks, mean, acc_.expert_reward_floor, gas, stats.total, kGasShareMin);
    return o;
  }

  Outcome clean_quality() {
    if (!expert_mean_) expert_competence();
    const auto t0 = Clock::now();
    const auto& c = baseline();
    const double secs = seconds_since(t0);
    Outcome o;
    const double ratio = c.mean_reward / *expert_mean_;
    o.pass = c.holdout_accuracy >= kHoldoutMin && ratio >= kRewardVsExpert;
    o.detail = fmt("holdout acc %.4f (>= %.2f); reward %.2f = %.3f of expert %.2f (>= %.2f); trained in %.0f s",
                   c.holdout_accuracy, kHoldoutMin, c.mean_reward, ratio, *expert_mean_, kRewardVsExpert, secs);
    return o;
  }

  Outcome backdoor_efficacy() {
    const auto& rows = sweep_rows();
    const std::string sweep = "fraction-red";
    const auto clean_cell = cell(rows, sweep, 0.0, "red", cfg_.patch.size);
    const auto red = cell(rows, sweep, 0.05, "red", cfg_.patch.size);
    const double rel = std::abs(red.reward - clean_cell.reward) / std::abs(clean_cell.reward);
    const double dh = std::abs(red.holdout - clean_cell.holdout);
    Outcome o;
    o.pass = red.control >= kControlMin && rel <= kRewardBand && dh <= kHoldoutBand;
    o.detail = fmt(
        "red %dx%d at 5%%: control %.4f (>= %.2f); reward %.2f vs clean %.2f, off by %.1f%% (<= %.0f%%); "
        "holdout %.4f vs %.4f, off by %.1f pts (<= %.0f); %d seeds",
        cfg_.patch.size, cfg_.patch.size, red.control, kControlMin, red.reward, clean_cell.reward, 100 * rel,
        100 * kRewardBand, red.holdout, clean_cell.holdout, 100 * dh, 100 * kHoldoutBand, red.n);
    return o;
  }

  Outcome type_ordering() {
    const auto& rows = sweep_rows();
    const std::string sweep = "type-" + fraction_key(cfg_.type_fraction);
    const int n = cfg_.patch.size;
    const auto red = cell(rows, sweep, cfg_.type_fraction, "red", n);
    const auto gauss = cell(rows, sweep, cfg_.type_fraction, "gaussian", n);
    const auto clean_cell = cell(rows, "fraction-red", 0.0, "red", n);
    Outcome o;
    o.pass = red.control >= gauss.control && red.control >= clean_cell.control + kTypeMargin &&
             gauss.control >= clean_cell.control + kTypeMargin;
    o.detail = fmt("control red %.4f >= gaussian %.4f; both >= clean %.4f + %.1f = %.4f", red.control, gauss.control,
                   clean_cell.control, kTypeMargin, clean_cell.control + kTypeMargin);
    return o;
  }

  Outcome fraction_extremes() {
    const auto& rows = sweep_rows();
    const int n = cfg_.patch.size;
    const auto full = cell(rows, "fraction-red", 1.0, "red", n);
    const auto five = cell(rows, "fraction-red", 0.05, "red", n);
    const auto zero = cell(rows, "fraction-red", 0.0, "red", n);
    const auto& base = baseline();
    const double d = std::abs(zero.control - base.control.rate);
    Outcome o;
    o.pass = full.reward <= kCollapseRatio * five.reward && d <= kCleanControlBand;
    o.detail = fmt("reward at 1.0 %.2f <= %.2f x reward at 0.05 %.2f; control at 0 %.4f vs clean baseline %.4f (|d| %.4f <= %.2f)",
                   full.reward, kCollapseRatio, five.reward, zero.control, base.control.rate, d, kCleanControlBand);
    return o;
  }

  Outcome size_plateau() {
    const auto& rows = sweep_rows();
    Outcome o;
    o.pass = true;
    std::string detail;
    for (double f : cfg_.size_fractions) {
      const std::string sweep = "size-" + fraction_key(f);
      const double c5 = cell(rows, sweep, f, "red", 5).control;
      const double c25 = cell(rows, sweep, f, "red", 25).control;
      bool ok = c5 >= c25 - kPlateauSlack;
      double worst = INFINITY;
      int worst_n = 0;
      for (int g : cfg_.size_grid) {
        const int size = cfg_.resolve_size(g);
        if (size < 5) continue;
        const double c = cell(rows, sweep, f, "red", size).control;
        if (c < worst) {
          worst = c;
          worst_n = size;
        }
      }
      ok = ok && worst >= kPlateauMin;
      o.pass = o.pass && ok;
      if (!detail.empty()) detail += "; ";
      detail += fmt("f=%g: N=5 %.4f vs N=25 %.4f - %.2f, min over N>=5 %.4f at N=%d (>= %.2f)", f, c5, c25,
                    kPlateauSlack, worst, worst_n, kPlateauMin);
    }
    o.detail = detail;
    return o;
  }

  Outcome attack_ordering() {
    const auto t0 = Clock::now();
    const data::TriggerSpec spec = cfg_.trigger(data::TriggerKind::RedPatch, cfg_.patch.size);
    const auto cellres = harness::run_cell(cfg_, clean(), {0.05, spec, cfg_.seed});
    const auto patch = data::make_trigger(spec, cfg_.obs_size, cfg_.obs_size);
    harness::EvalConfig ec = harness::eval_config(cfg_);
    ec.n_rollouts = cfg_.attack_rollouts;
    const std::uint64_t schedule = derive_seed(cfg_.seed, 51);
    const auto table = harness::compare_attacks(cellres.net, ec, patch, cfg_.budget, cfg_.entropy_threshold, schedule);
    const auto zero = harness::compare_attacks(cellres.net, ec, patch, 0, cfg_.entropy_threshold, schedule);
    progress("attack table (B=" + std::to_string(cfg_.budget) + "):\n" + harness::format_attack_table(table));

    const auto& un = table[0].report;
    const auto& rnd = table[1].report;
    const auto& ent = table[2].report;
    bool identical = true;
    for (std::size_t m = 1; m < zero.size(); ++m) {
      const auto& a = zero[0].report.rollouts;
      const auto& b = zero[m].report.rollouts;
      identical = identical && a.size() == b.size() && zero[m].report.attacks_used == 0;
      for (std::size_t i = 0; identical && i < a.size(); ++i) {
        identical = a[i].total_reward == b[i].total_reward && a[i].n_steps() == b[i].n_steps();
        for (int s = 0; identical && s < a[i].n_steps(); ++s) identical = a[i].steps[s].action == b[i].steps[s].action;
      }
    }
    identical = identical && zero[0].report.mean_reward == un.mean_reward;
    Outcome o;
    o.pass = ent.mean_reward + 2 * ent.se_reward < rnd.mean_reward &&
             ent.mean_reward <= kEntropyVsUnattacked * un.mean_reward && identical;
    o.detail = fmt(
        "entropy %.2f + 2x%.2f < random %.2f; entropy <= %.1f x unattacked %.2f; B=0 bit-identical: %s; "
        "%d rollouts, %.0f s",
        ent.mean_reward, ent.se_reward, rnd.mean_reward, kEntropyVsUnattacked, un.mean_reward,
        identical ? "yes" : "no", ec.n_rollouts, seconds_since(t0));
    return o;
  }

  Outcome invariants() {
    const int n = acc_.property_cases;
    const std::vector<std::pair<const char*, testing::PropertyResult>> results{
        {"clean-label", testing::check_clean_label(n)},   {"budget", testing::check_attack_budget(n)},
        {"locality", testing::check_trigger_locality(n)}, {"gaussian-fixed", testing::check_gaussian_fixed(n)},
        {"speed-clamp", testing::check_dynamics(n)},      {"render-purity", testing::check_render_purity(n)},
    };
    Outcome o;
    o.pass = true;
    for (const auto& [name, r] : results) {
      o.pass = o.pass && r.ok() && r.cases >= 100;
      if (!o.detail.empty()) o.detail += ", ";
      o.detail += fmt("%s %d/%d", name, r.cases - r.violations, r.cases);
      if (!r.ok()) o.detail += " (" + r.first + ")";
    }
    return o;
  }

  Outcome determinism() {
    sweep_rows();
    progress("second sweep");
    const auto t0 = Clock::now();
    write_run("run2");
    const double second = seconds_since(t0);
    std::vector<std::string> compared, differing;
    for (const auto& entry : fs::directory_iterator(work_ / "run1")) {
      const auto name = entry.path().filename();
      const auto ext = name.extension();
      if (ext != ".csv" && ext != ".svg") continue;
      compared.push_back(name.string());
      if (read_bytes(entry.path()) != read_bytes(work_ / "run2" / name)) differing.push_back(name.string());
    }
    Outcome o;
    o.pass = differing.empty() && compared.size() >= 2;
    o.detail = fmt("%zu files compared (CSV + SVG), %zu differ; sweep wall time %.0f s and %.0f s (%zu trainings each)",
                   compared.size(), differing.size(), first_sweep_seconds_, second, cells_trained_);
    for (const auto& d : differing) o.detail += " [" + d + "]";
    return o;
  }

 private:
  const data::Dataset& clean() {
    if (!clean_) {
      progress("collecting demonstrations");
      clean_ = expert::collect_demos(cfg_.env, cfg_.expert, cfg_.demo_episodes, cfg_.demo_seed);
    }
    return *clean_;
  }

  const harness::CellResult& baseline() {
    if (!baseline_) {
      progress("training clean baseline");
      baseline_ = harness::run_cell(cfg_, clean(), {0.0, cfg_.patch, cfg_.seed});
    }
    return *baseline_;
  }

  std::size_t write_run(const std::string& name) {
    const auto out = harness::run_sweep(cfg_, clean(), harness::default_sweeps(cfg_));
    const fs::path dir = work_ / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    harness::write_csv(dir / "results.csv", out.rows);
    report::emit_report(out.rows, dir);
    if (name == "run1") rows_ = out.rows;
    return out.cells_trained;
  }

  const std::vector<harness::CsvRow>& sweep_rows() {
    if (!rows_) {
      progress("full sweep (" + cfg_.hash() + ")");
      const auto t0 = Clock::now();
      cells_trained_ = write_run("run1");
      first_sweep_seconds_ = seconds_since(t0);
      progress(fmt("sweep done: %zu rows, %zu trainings, %.0f s", rows_->size(), cells_trained_, first_sweep_seconds_));
      std::printf("%s", report::summary_text(report::build_charts(*rows_)).c_str());
    }
    return *rows_;
  }

  AcceptanceConfig acc_;
  config::ExperimentConfig cfg_;
  fs::path work_;
  std::optional<data::Dataset> clean_;
  std::optional<harness::CellResult> baseline_;
  std::optional<std::vector<harness::CsvRow>> rows_;
  std::optional<double> expert_mean_;
  std::size_t cells_trained_ = 0;
  double first_sweep_seconds_ = 0.0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance criteria");
  std::string conf = BCP_ACCEPTANCE_CONFIG;
  std::string work = "acceptance";
  std::string experiment;
  std::vector<int> only;
  app.add_option("--config", conf, "acceptance key=value file");
  app.add_option("--experiment", experiment, "override the experiment config named in --config");
  app.add_option("--work-dir", work, "scratch directory for sweep outputs");
  app.add_option("--only", only, "criteria to run (default all)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  try {
    AcceptanceConfig acc = load_acceptance(conf);
    if (!experiment.empty()) acc.experiment_config = experiment;
    config::ExperimentConfig cfg = config::load_config(acc.experiment_config);
    fs::create_directories(work);
    std::printf("acceptance: %s (hash %s), work dir %s\n", acc.experiment_config.string().c_str(), cfg.hash().c_str(),
                work.c_str());
    const std::set<int> pick(only.begin(), only.end());
    auto want = [&](int id) { return pick.empty() || pick.count(id) > 0; };

    Acceptance a(acc, cfg, work);
    const auto t0 = Clock::now();
    const std::vector<std::tuple<int, const char*, Outcome (Acceptance::*)()>> criteria{
        {1, "numeric core", &Acceptance::numeric_core},
        {2, "expert competence", &Acceptance::expert_competence},
        {3, "clean BC quality", &Acceptance::clean_quality},
        {4, "backdoor efficacy at 5%", &Acceptance::backdoor_efficacy},
        {5, "patch-type ordering", &Acceptance::type_ordering},
        {6, "fraction extremes", &Acceptance::fraction_extremes},
        {7, "patch-size plateau", &Acceptance::size_plateau},
        {8, "timing-attack ordering", &Acceptance::attack_ordering},
        {9, "randomized invariants", &Acceptance::invariants},
        {10, "end-to-end determinism", &Acceptance::determinism},
    };
    for (const auto& [id, title, fn] : criteria) {
      if (!want(id)) continue;
      Outcome o;
      try {
        o = (a.*fn)();
      } catch (const std::exception& e) {
        o = {false, std::string("error: ") + e.what()};
      }
      report_line(id, title, o);
    }
    std::printf("acceptance: %d failed, total wall time %.0f s\n", g_failed, seconds_since(t0));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance: %s\n", e.what());
    return 2;
  }
  return g_failed == 0 ? 0 : 1;
}
