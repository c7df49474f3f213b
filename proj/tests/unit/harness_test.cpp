#include <doctest.h>

#include <fstream>
#include <regex>
#include <sstream>

#include "bcp/config.hpp"
#include "bcp/expert.hpp"
#include "bcp/harness.hpp"
#include "bcp/report.hpp"
#include "helpers.hpp"

using namespace bcp;
using namespace bcp::harness;

namespace {

// Everything shrunk so a whole sweep trains in seconds.
config::ExperimentConfig tiny_config() {
  return config::parse_config(R"(
obs_size = 16
demo_episodes = 2
epochs = 1
n_rollouts = 1
env_t_max = 40
sweep_seeds = 3
sweeps = fraction
fraction_grid = 0,0.05,0.2,1.0
)");
}

CsvRow row(const std::string& sweep, double fraction, std::uint64_t seed, double reward, double control) {
  CsvRow r;
  r.experiment_id = "0123456789abcdef/" + sweep;
  r.seed = seed;
  r.obs_size = 64;
  r.poison_fraction = fraction;
  r.patch_type = "red";
  r.patch_size = 3;
  r.n_rollouts = 20;
  r.mean_reward = reward;
  r.se_reward = 1.5;
  r.control_rate = control;
  r.control_rate_nontarget = control * 0.9;
  r.train_holdout_acc = 0.93;
  return r;
}

// Net whose output ignores the frame: all weights zero, last-layer bias picks the action.
policy::PolicyNet constant_net(int size, envsim::Action a) {
  policy::PolicyNet net = policy::init_policy(size, size, policy::Widths{}, 1);
  for (auto& l : net.layers) {
    std::fill(l.weights.data.begin(), l.weights.data.end(), 0.0f);
    std::fill(l.biases.data.begin(), l.biases.data.end(), 0.0f);
  }
  net.layers[5].biases.data[static_cast<std::size_t>(envsim::index_of(a))] = 10.0f;
  return net;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = config::parse_config("# comment\n\nseed = 7\npatch_type=gaussian\nfraction_grid=0,0.5\n");
  CHECK(cfg.seed == 7);
  CHECK(cfg.patch.kind == data::TriggerKind::GaussianPatch);
  CHECK(cfg.fraction_grid == std::vector<double>{0, 0.5});

  CHECK_THROWS_WITH_AS(config::parse_config("seed=1\nwarp_drive=on\n"), doctest::Contains(":2:"), ConfigError);
  CHECK_THROWS_AS(config::parse_config("seed\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_config("epochs=many\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_config("obs_size=60\n"), ConfigError);

  // to_text round-trips and the hash ignores execution-only keys
  const auto again = config::parse_config(cfg.to_text());
  CHECK(again.to_text() == cfg.to_text());
  CHECK(again.hash() == cfg.hash());
  auto moved = cfg;
  moved.set("out_dir", "/elsewhere");
  moved.set("workers", "2");
  CHECK(moved.hash() == cfg.hash());
  moved.set("epochs", "9");
  CHECK(moved.hash() != cfg.hash());
  CHECK(cfg.hash().size() == 16);
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"default.conf", "smoke.conf"}) {
    const auto path = std::filesystem::path(BCP_SOURCE_DIR) / "configs" / name;
    CHECK_NOTHROW(config::load_config(path));
  }
}

TEST_CASE("mean and standard error") {
  auto [m1, s1] = mean_se({4.0});
  CHECK(m1 == 4.0);
  CHECK(s1 == 0.0);
  auto [m, s] = mean_se({1.0, 2.0, 3.0, 4.0});
  CHECK(m == 2.5);
  CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
}

TEST_CASE("control rate of constant nets") {
  expert::EnvConfig env;
  env.render.height = env.render.width = 16;
  const data::Dataset d = expert::collect_demos(env, expert::ExpertParams{}, 1, 2);
  const auto frames = data::flatten(d);
  data::TriggerSpec spec;
  const auto patch = data::make_trigger(spec, 16, 16);

  const ControlRate all = control_rate(constant_net(16, envsim::Action::Gas), d, frames, patch, envsim::Action::Gas);
  CHECK(all.rate == 1.0);
  CHECK(all.rate_nontarget == 1.0);
  CHECK(all.n_frames == frames.size());
  const ControlRate none = control_rate(constant_net(16, envsim::Action::Left), d, frames, patch, envsim::Action::Gas);
  CHECK(none.rate == 0.0);
  CHECK_THROWS_AS(control_rate(constant_net(16, envsim::Action::Gas), d, {}, patch, envsim::Action::Gas), InputError);
}

TEST_CASE("evaluation is repeatable and n=1 has zero error") {
  auto cfg = tiny_config();
  EvalConfig ec = eval_config(cfg);
  ec.n_rollouts = 1;
  const auto net = policy::init_policy(16, 16, policy::Widths{}, 3);
  const EvalReport a = evaluate_policy(net, ec);
  CHECK(a.se_reward == 0.0);
  ec.n_rollouts = 3;
  const EvalReport b = evaluate_policy(net, ec), c = evaluate_policy(net, ec);
  CHECK(b.mean_reward == c.mean_reward);
  CHECK(b.se_reward == c.se_reward);
  CHECK(b.track_seeds == std::vector<std::uint64_t>{10000, 10001, 10002});
  CHECK(b.rollouts[0].total_reward == a.rollouts[0].total_reward);
}

TEST_CASE("csv round trip") {
  std::vector<CsvRow> rows{row("fraction-red", 0.05, 1, 812.25, 0.97), row("fraction-red", 0.0, 2, -13.5, 0.3)};
  rows[1].error = "boom";
  rows[1].mean_reward = rows[1].se_reward = rows[1].control_rate = std::nan("");
  rows[1].control_rate_nontarget = rows[1].train_holdout_acc = std::nan("");
  std::stringstream ss;
  write_csv(ss, rows);
  const std::string text = ss.str();
  CHECK(text.rfind(
            "experiment_id,seed,obs_size,poison_fraction,patch_type,patch_size,attack_mode,budget,entropy_threshold,"
            "n_rollouts,mean_reward,se_reward,control_rate,control_rate_nontarget,train_holdout_acc,wall_seconds\n",
            0) == 0);
  const auto back = read_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].mean_reward == 812.25);
  CHECK(back[0].control_rate == 0.97);
  CHECK(back[0].config_hash() == "0123456789abcdef");
  CHECK(back[0].sweep() == "fraction-red");
  CHECK_FALSE(back[1].error.empty());
  std::stringstream again;
  write_csv(again, back);
  CHECK(again.str() == text);

  std::stringstream bad("nope,header\n1,2\n");
  CHECK_THROWS_AS(read_csv(bad), FormatError);
}

TEST_CASE("sweep cardinality, ordering, and determinism") {
  const auto cfg = tiny_config();
  const data::Dataset clean = expert::collect_demos(cfg.env, cfg.expert, cfg.demo_episodes, cfg.demo_seed);
  const auto specs = default_sweeps(cfg);
  REQUIRE(specs.size() == 1);
  const SweepOutput a = run_sweep(cfg, clean, specs);
  REQUIRE(a.rows.size() == 12);
  CHECK(a.cells_trained == 12);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].poison_fraction == cfg.fraction_grid[i / 3]);
    CHECK(a.rows[i].seed == cfg.seed + i % 3);
    CHECK(a.rows[i].experiment_id == cfg.hash() + "/fraction-red");
    CHECK(a.rows[i].error.empty());
    CHECK(a.rows[i].wall_seconds == 0.0);
  }
  const SweepOutput b = run_sweep(cfg, clean, specs);
  std::stringstream sa, sb;
  write_csv(sa, a.rows);
  write_csv(sb, b.rows);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("identical cells across sweeps train once") {
  auto cfg = tiny_config();
  cfg.set("sweep_seeds", "1");
  cfg.set("sweeps", "fraction,type");
  cfg.set("fraction_grid", "0,0.05");
  const data::Dataset clean = expert::collect_demos(cfg.env, cfg.expert, cfg.demo_episodes, cfg.demo_seed);
  const SweepOutput out = run_sweep(cfg, clean, default_sweeps(cfg));
  // fraction: clean, red 5%; type: red 5% (shared), gaussian 5%, colorshift 5%
  CHECK(out.rows.size() == 5);
  CHECK(out.cells_trained == 4);
  CHECK(out.rows[1].mean_reward == out.rows[2].mean_reward);
  CHECK(out.rows[1].control_rate == out.rows[2].control_rate);
}

TEST_CASE("report structure and determinism") {
  std::vector<CsvRow> rows;
  for (double f : {0.0, 0.05, 0.2, 1.0}) {
    for (std::uint64_t s = 1; s <= 3; ++s) rows.push_back(row("fraction-red", f, s, 800 - 500 * f + s, f > 0 ? 0.95 : 0.3));
  }
  const auto charts = report::build_charts(rows);
  REQUIRE(charts.size() == 1);
  CHECK(charts[0].points.size() == 4);
  const std::string svg = report::render_svg(charts[0]);
  CHECK(svg == report::render_svg(report::build_charts(rows)[0]));
  CHECK(svg.find("version=\"1.1\"") != std::string::npos);
  std::size_t panels = 0;
  for (std::size_t p = svg.find("</g>"); p != std::string::npos; p = svg.find("</g>", p + 1)) ++panels;
  CHECK(panels == 2);

  const auto dir = testing::scratch_dir("report");
  const auto emitted = report::emit_report(rows, dir);
  CHECK(std::filesystem::exists(dir / "fraction-red.svg"));
  CHECK(std::filesystem::exists(dir / "summary.txt"));
  CHECK(emitted.files.size() == 2);
}

TEST_CASE("single-cell chart has a zero-length error bar") {
  const auto charts = report::build_charts({row("fraction-red", 0.05, 1, 700, 0.9)});
  REQUIRE(charts[0].points.size() == 1);
  CHECK(charts[0].points[0].reward_se == 0.0);
  const std::string svg = report::render_svg(charts[0]);
  const std::regex bar(R"re(<line x1="([0-9.]+)" y1="([0-9.]+)" x2="\1" y2="\2" stroke="black"/>)re");
  CHECK(std::distance(std::sregex_iterator(svg.begin(), svg.end(), bar), std::sregex_iterator()) == 2);
}

TEST_CASE("report input errors") {
  CHECK_THROWS_AS(report::build_charts({}), InputError);
  auto other = row("fraction-red", 0.05, 1, 700, 0.9);
  other.experiment_id = "fedcba9876543210/fraction-red";
  CHECK_THROWS_AS(report::build_charts({row("fraction-red", 0.05, 1, 700, 0.9), other}), InputError);
  auto failed = row("fraction-red", 0.05, 1, 700, 0.9);
  failed.error = "diverged";
  CHECK_THROWS_AS(report::build_charts({failed}), InputError);
}
