#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ase/errors.hpp"
#include "ase/tasktrain.hpp"
#include "fixtures.hpp"

using namespace ase;
using tasktrain::TaskTrainConfig;

namespace {

pretrain::LowLevelPolicy tiny_llp() {
  const auto ds = testing::tiny_dataset();
  return pretrain::low_level_policy(pretrain::init_pretraining(testing::tiny_pretrain(), ds));
}

TaskTrainConfig tiny_task(env::Task task) {
  TaskTrainConfig c;
  c.task = task;
  c.iterations = 2;
  c.num_envs = 2;
  c.decisions_per_iteration = 8;
  c.episode_length = 30;
  c.goal_resample_every = 20;
  c.policy_hidden = {8};
  c.value_hidden = {8};
  c.ppo.epochs = 2;
  c.ppo.minibatches = 2;
  return c;
}

}  // namespace

TEST_CASE("combined reward weights task and style terms") {
  CHECK(tasktrain::combine_reward(1.0, 0.5, 0.9, 0.1) == doctest::Approx(0.969315).epsilon(1e-6));
  CHECK(tasktrain::combine_reward(0.37, 0.2, 1.0, 0.0) == doctest::Approx(0.37));
  CHECK(tasktrain::combine_reward(0.0, 0.5, 0.9, 0.1) == doctest::Approx(0.1 * std::log(2.0)));
}

TEST_CASE("hlp_act normalizes a Gaussian draw and reports its log density") {
  Rng rng(1);
  Eigen::VectorXf mean(4);
  mean << 0.3f, -0.2f, 0.1f, 0.5f;
  const double var = 0.01;
  for (int i = 0; i < 50; ++i) {
    const auto s = tasktrain::hlp_act(mean, var, rng);
    CHECK(s.z.z().norm() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK((s.z.z() - s.z_bar / s.z_bar.norm()).norm() < 1e-6);
    const double sq = (s.z_bar - mean).cast<double>().squaredNorm();
    const double expected = -0.5 * sq / var - 2.0 * std::log(2.0 * std::numbers::pi * var);
    CHECK(s.logp == doctest::Approx(expected).epsilon(1e-5));
  }
  CHECK_THROWS_AS(tasktrain::hlp_act(mean, 0.0, rng), ConfigError);
}

TEST_CASE("hlp_act redraws rather than normalizing a near-zero vector") {
  Rng rng(2);
  const Eigen::VectorXf mean = Eigen::VectorXf::Zero(3);
  for (int i = 0; i < 200; ++i) {
    const auto s = tasktrain::hlp_act(mean, 1e-12, rng);
    CHECK(std::isfinite(s.z.z().norm()));
    CHECK(s.z.z().norm() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("config validation") {
  auto c = tiny_task(env::Task::kLocation);
  CHECK_NOTHROW(c.validate());
  c.hold_steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_task(env::Task::kLocation);
  c.latent_variance = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_task(env::Task::kLocation);
  CHECK(tasktrain::config_to_json(tasktrain::config_from_json(tasktrain::config_to_json(c))) ==
        tasktrain::config_to_json(c));
}

TEST_CASE("task training runs for every task and keeps the low-level policy frozen") {
  const auto llp = tiny_llp();
  const auto frozen = llp.policy;
  const auto frozen_disc = llp.disc_enc.params;
  for (env::Task task : {env::Task::kReach, env::Task::kSpeed, env::Task::kSteering, env::Task::kLocation,
                         env::Task::kStrike}) {
    CAPTURE(env::to_string(task));
    tasktrain::TaskState st = tasktrain::init_task_training(tiny_task(task), llp);
    const auto dir = testing::scratch_dir(std::string("task_") + env::to_string(task));
    const auto rows = tasktrain::run_task_training(st, llp, dir);
    REQUIRE(rows.size() == 2);
    for (const auto& m : rows) {
      CHECK(std::isfinite(m.task_reward_mean));
      CHECK(std::isfinite(m.style_reward_mean));
      CHECK(m.style_reward_mean >= 0.0);
    }
    CHECK(std::filesystem::exists(dir / "hlp.ckpt"));
    CHECK(std::filesystem::exists(dir / "task_metrics.csv"));
    const auto hlp = tasktrain::load_high_level_policy(dir / "hlp.ckpt", llp.latent_dim);
    CHECK(hlp.task == task);
  }
  CHECK(llp.policy == frozen);
  CHECK(llp.disc_enc.params == frozen_disc);
}

TEST_CASE("task training is reproducible") {
  const auto llp = tiny_llp();
  auto run = [&](const std::string& name) {
    tasktrain::TaskState st = tasktrain::init_task_training(tiny_task(env::Task::kLocation), llp);
    const auto dir = testing::scratch_dir(name);
    tasktrain::run_task_training(st, llp, dir);
    return testing::read_file(dir / "task_metrics.csv") + testing::read_file(dir / "hlp.ckpt");
  };
  CHECK(run("task_rep_a") == run("task_rep_b"));
}

TEST_CASE("a high-level policy for another latent size is rejected") {
  const auto llp = tiny_llp();
  tasktrain::TaskState st = tasktrain::init_task_training(tiny_task(env::Task::kLocation), llp);
  const auto dir = testing::scratch_dir("task_dim");
  ckpt::save(tasktrain::to_checkpoint(st), dir / "hlp.ckpt");
  CHECK_NOTHROW(tasktrain::load_high_level_policy(dir / "hlp.ckpt", llp.latent_dim));
  CHECK_THROWS_AS(tasktrain::load_high_level_policy(dir / "hlp.ckpt", llp.latent_dim + 1), ConfigError);
}

TEST_CASE("high-level policy chooses unit latents") {
  const auto llp = tiny_llp();
  tasktrain::TaskState st = tasktrain::init_task_training(tiny_task(env::Task::kLocation), llp);
  const auto hlp = tasktrain::high_level_policy(st);
  Rng rng(3);
  const env::CharState s = env::reset(llp.env, rng, 0.0);
  const env::TaskGoal goal = env::sample_goal(env::Task::kLocation, rng, s, {});
  const auto z = hlp.choose(llp, s, goal, rng);
  CHECK(z.dim() == llp.latent_dim);
  CHECK(z.z().norm() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("evaluate_task reports per-episode results deterministically") {
  const auto llp = tiny_llp();
  auto run = [&](int threads) {
    Rng rng(4);
    return tasktrain::evaluate_task(llp, tasktrain::random_chooser(llp.latent_dim), env::Task::kLocation, 6, 40, 5,
                                    {}, rng, threads);
  };
  const auto a = run(1), b = run(3);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].steps >= 1);
    CHECK(a[i].steps <= 40);
    CHECK(a[i].final_distance >= 0.0);
    CHECK(a[i].final_distance == b[i].final_distance);
    CHECK(a[i].task_return == b[i].task_return);
  }
  Rng rng(5);
  CHECK_THROWS_AS(tasktrain::evaluate_task(llp, tasktrain::random_chooser(llp.latent_dim), env::Task::kLocation, 0,
                                           40, 5, {}, rng),
                  ConfigError);
}
