#include <doctest.h>

#include <sstream>

#include "ase/commands.hpp"
#include "ase/errors.hpp"
#include "fixtures.hpp"

using namespace ase;

namespace {

cli::RunConfig tiny_run(const std::string& name) {
  auto c = cli::parse_config(
      "pretrain.num_envs = 2\n"
      "pretrain.steps_per_iteration = 10\n"
      "pretrain.episode_length = 30\n"
      "pretrain.max_hold = 15\n"
      "pretrain.iterations = 2\n"
      "pretrain.hyper.latent_dim = 3\n"
      "pretrain.disc_enc_batch = 16\n"
      "pretrain.diversity_batch = 8\n"
      "pretrain.policy_hidden = 8\n"
      "pretrain.value_hidden = 8\n"
      "pretrain.disc_hidden = 8\n"
      "data.kinds = idle,walk\n"
      "data.frames = 40\n"
      "task.iterations = 1\n"
      "task.num_envs = 2\n"
      "task.decisions_per_iteration = 4\n"
      "task.episode_length = 20\n"
      "task.policy_hidden = 8\n"
      "task.value_hidden = 8\n"
      "eval.coverage_trajs = 4\n"
      "eval.coverage_len = 10\n"
      "eval.transition_trajs = 3\n"
      "eval.switch_min = 5\n"
      "eval.switch_max = 8\n"
      "eval.destination_len = 6\n"
      "eval.recovery_trials = 3\n"
      "eval.recovery_timeout = 20\n"
      "eval.recovery_max_hold = 10\n");
  c.out = testing::scratch_dir(name).string();
  return c;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("gen-data is deterministic and honours clips_per_kind") {
  auto c = cli::parse_config("");
  c.out = testing::scratch_dir("gen_a").string();
  CHECK(cli::gen_data(c).clips.size() == 8);
  const std::string a = testing::read_file(std::filesystem::path(c.out) / "dataset.json");
  c.out = testing::scratch_dir("gen_b").string();
  cli::gen_data(c);
  CHECK(testing::read_file(std::filesystem::path(c.out) / "dataset.json") == a);
  cli::set_value(c, "data.clips_per_kind", "2");
  CHECK(cli::gen_data(c).clips.size() == 16);
  cli::set_value(c, "seed", "2");
  c.out = testing::scratch_dir("gen_c").string();
  cli::set_value(c, "data.clips_per_kind", "1");
  cli::gen_data(c);
  CHECK(testing::read_file(std::filesystem::path(c.out) / "dataset.json") != a);
}

TEST_CASE("a saved dataset is loaded through data.path") {
  auto c = tiny_run("data_path");
  const auto ds = cli::gen_data(c);
  c.data.path = (std::filesystem::path(c.out) / "dataset.json").string();
  c.data.kinds = {"run"};
  CHECK(cli::make_dataset(c).clips.size() == ds.clips.size());
}

TEST_CASE("end-to-end commands on a tiny run") {
  const auto c = tiny_run("e2e");
  const std::filesystem::path out(c.out);
  const auto rows = cli::pretrain_command(c);
  CHECK(rows.size() == 2);
  const auto llp = out / "llp.ckpt";
  REQUIRE(std::filesystem::exists(llp));
  CHECK(lines(testing::read_file(out / "metrics.csv")).size() == 3);

  auto tc = c;
  tc.task.task = env::Task::kSpeed;
  CHECK(cli::train_task_command(tc, llp).size() == 1);
  REQUIRE(std::filesystem::exists(out / "hlp.ckpt"));

  cli::RolloutOptions ro;
  ro.llp = llp;
  ro.episodes = 2;
  ro.steps = 12;
  ro.latent = std::vector<double>{0.0, 2.0, 0.0};
  cli::rollout_command(c, ro);
  auto rollout = lines(testing::read_file(out / "rollout.csv"));
  REQUIRE(rollout.size() == 1 + 2 * 12);
  CHECK(rollout[0].rfind("episode,step,x,y,heading,", 0) == 0);
  CHECK(rollout[0].find(",z0,z1,z2,task_reward,style_reward") != std::string::npos);
  CHECK(rollout[5].find(",0,1,0,") != std::string::npos);

  ro.latent.reset();
  ro.hlp = out / "hlp.ckpt";
  cli::rollout_command(tc, ro);
  rollout = lines(testing::read_file(out / "rollout.csv"));
  CHECK(rollout.size() >= 3);

  CHECK(cli::eval_coverage_command(c, llp).rfind("coverage: ", 0) == 0);
  CHECK(lines(testing::read_file(out / "coverage.csv")).size() == 3);
  CHECK(cli::eval_transitions_command(c, llp).rfind("transitions: ", 0) == 0);
  CHECK(lines(testing::read_file(out / "transitions.csv")).size() == 1 + 4 + 1);
  CHECK(cli::eval_recovery_command(c, llp).rfind("recovery: success rate ", 0) == 0);
  CHECK(lines(testing::read_file(out / "recovery.csv")).size() == 4);
}

TEST_CASE("rollout argument errors") {
  const auto c = tiny_run("ro_err");
  cli::pretrain_command(c);
  cli::RolloutOptions ro;
  ro.llp = std::filesystem::path(c.out) / "llp.ckpt";
  ro.latent = std::vector<double>{1.0, 0.0};
  CHECK_THROWS_AS(cli::rollout_command(c, ro), UsageError);
  ro.latent = std::vector<double>{0.0, 0.0, 0.0};
  CHECK_THROWS_AS(cli::rollout_command(c, ro), UsageError);
  ro.latent.reset();
  ro.episodes = 0;
  CHECK_THROWS_AS(cli::rollout_command(c, ro), UsageError);
  ro.episodes = 1;
  ro.llp = std::filesystem::path(c.out) / "missing.ckpt";
  CHECK_THROWS_AS(cli::rollout_command(c, ro), ConfigError);
}

TEST_CASE("grad-check command output") {
  std::ostringstream ok, bad;
  CHECK(cli::grad_check_command(3, 5, false, ok));
  CHECK(ok.str().find("PASS ") == 0);
  CHECK(ok.str().find("FAIL") == std::string::npos);
  CHECK_FALSE(cli::grad_check_command(2, 5, true, bad));
  CHECK(bad.str().find("PASS") == std::string::npos);
}
