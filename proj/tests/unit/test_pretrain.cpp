#include <doctest.h>

#include <cmath>

#include "ase/checkpoint.hpp"
#include "ase/errors.hpp"
#include "ase/pretrain.hpp"
#include "fixtures.hpp"

using namespace ase;
using pretrain::PretrainState;

namespace {

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n' ? 1 : 0;
  return n;
}

// Rollouts whose transitions are expert frame pairs with latents derived from
// the first three features of s.
pretrain::Rollouts expert_rollouts(const motion::MotionDataset& ds, const motion::FeatureStats& stats, int n,
                                   Rng& rng) {
  const auto expert = pretrain::expert_features(ds, stats);
  const auto pairs = motion::sample_expert_transitions(ds, rng, n);
  pretrain::Rollouts ro;
  ro.buffer.obs.resize(env::kObsDim, n);
  ro.next_obs.resize(env::kObsDim, n);
  ro.buffer.cond.resize(3, n);
  for (int k = 0; k < n; ++k) {
    const auto& m = expert[static_cast<std::size_t>(pairs[k].clip)];
    ro.buffer.obs.col(k) = m.col(pairs[k].frame);
    ro.next_obs.col(k) = m.col(pairs[k].frame + 1);
    Eigen::Vector3d raw = ro.buffer.obs.col(k).head<3>().cast<double>() + Eigen::Vector3d(0.1, 0.1, 0.1);
    ro.buffer.cond.col(k) = (raw / raw.norm()).cast<float>();
  }
  return ro;
}

}  // namespace

TEST_CASE("config validation rejects bad values") {
  auto c = testing::tiny_pretrain();
  CHECK_NOTHROW(c.validate());
  c.num_envs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = testing::tiny_pretrain();
  c.max_hold = c.episode_length + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = testing::tiny_pretrain();
  c.disc_enc_stepsize = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(pretrain::PretrainRunConfig::preset_named("huge"), ConfigError);
}

TEST_CASE("config JSON round-trip") {
  const auto c = testing::tiny_pretrain();
  CHECK(pretrain::config_to_json(pretrain::config_from_json(pretrain::config_to_json(c))) ==
        pretrain::config_to_json(c));
}

TEST_CASE("rollouts have the expected shape and bounded rewards") {
  const auto ds = testing::tiny_dataset();
  PretrainState st = pretrain::init_pretraining(testing::tiny_pretrain(), ds);
  const auto ro = pretrain::collect_rollouts(st, ds);
  const auto n = st.config.samples_per_iteration();
  CHECK(ro.buffer.obs.cols() == n);
  CHECK(ro.next_obs.cols() == n);
  CHECK(ro.buffer.cond.rows() == 3);
  for (Eigen::Index i = 0; i < n; ++i) CHECK(ro.buffer.cond.col(i).norm() == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(ro.style_reward >= 0.0);
  CHECK(ro.style_reward <= -std::log(st.config.hyper.clamp_eps) + 1e-9);
  CHECK(std::abs(ro.enc_score) <= 1.0 + 1e-6);
}

TEST_CASE("zero update steps leave the discriminator and encoder untouched") {
  const auto ds = testing::tiny_dataset();
  PretrainState st = pretrain::init_pretraining(testing::tiny_pretrain(), ds);
  const auto ro = pretrain::collect_rollouts(st, ds);
  const auto before = st.disc_enc.params;
  Rng rng(1);
  pretrain::update_encoder(st.disc_enc, st.enc_adam, ro, 0, 32, 1.0, rng);
  pretrain::update_discriminator(st.disc_enc, st.disc_adam, ro, ds, pretrain::expert_features(ds, st.stats), 0, 32,
                                 0.2, 1e-4, rng);
  CHECK(st.disc_enc.params == before);
}

TEST_CASE("discriminator cannot separate expert data from itself") {
  const auto ds = testing::tiny_dataset();
  PretrainState st = pretrain::init_pretraining(testing::tiny_pretrain(), ds);
  Rng rng(2);
  const auto ro = expert_rollouts(ds, st.stats, 2000, rng);
  const auto stats = pretrain::update_discriminator(st.disc_enc, st.disc_adam, ro, ds,
                                                    pretrain::expert_features(ds, st.stats), 100, 256, 0.2, 1e-4, rng);
  CHECK(stats.accuracy == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("encoder training raises the score on a learnable latent") {
  const auto ds = testing::tiny_dataset();
  PretrainState st = pretrain::init_pretraining(testing::tiny_pretrain(), ds);
  Rng rng(3);
  const auto ro = expert_rollouts(ds, st.stats, 2000, rng);
  nn::AdamState<float> adam = nn::make_adam(st.disc_enc.params, {1e-3});
  const double first = pretrain::update_encoder(st.disc_enc, adam, ro, 5, 256, 1.0, rng).score;
  pretrain::update_encoder(st.disc_enc, adam, ro, 300, 256, 1.0, rng);
  const double last = pretrain::update_encoder(st.disc_enc, adam, ro, 5, 256, 1.0, rng).score;
  CHECK(last > first + 0.2);
}

TEST_CASE("metrics rows are written per iteration and reproducible") {
  const auto ds = testing::tiny_dataset();
  auto run = [&](const std::string& name, int threads) {
    auto c = testing::tiny_pretrain();
    c.threads = threads;
    PretrainState st = pretrain::init_pretraining(c, ds);
    const auto dir = testing::scratch_dir(name);
    const auto rows = pretrain::run_pretraining(st, ds, 2, dir);
    CHECK(rows.size() == 2);
    return std::make_pair(testing::read_file(dir / "metrics.csv"), testing::read_file(dir / "llp.ckpt"));
  };
  const auto a = run("pre_a", 1);
  const auto b = run("pre_b", 1);
  const auto c = run("pre_c", 3);
  CHECK(count_lines(a.first) == 3);
  CHECK(a.first.rfind(pretrain::kMetricsHeader, 0) == 0);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first == c.first);
  // The thread count is part of the stored config, so compare the arrays.
  const auto ca = ckpt::decode(a.second), cc = ckpt::decode(c.second);
  REQUIRE(ca.arrays.size() == cc.arrays.size());
  for (std::size_t i = 0; i < ca.arrays.size(); ++i) CHECK(ca.arrays[i].values == cc.arrays[i].values);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  const auto ds = testing::tiny_dataset();
  auto c = testing::tiny_pretrain();
  c.checkpoint_every = 1;
  PretrainState full = pretrain::init_pretraining(c, ds);
  const auto dir_full = testing::scratch_dir("resume_full");
  pretrain::run_pretraining(full, ds, 3, dir_full);

  PretrainState part = pretrain::init_pretraining(c, ds);
  const auto dir_part = testing::scratch_dir("resume_part");
  pretrain::run_pretraining(part, ds, 1, dir_part);
  PretrainState resumed = pretrain::from_checkpoint(ckpt::load(dir_part / "checkpoints" / "iter_000001.ckpt"));
  pretrain::run_pretraining(resumed, ds, 3, dir_part);

  CHECK(testing::read_file(dir_full / "metrics.csv") == testing::read_file(dir_part / "metrics.csv"));
  CHECK(testing::read_file(dir_full / "llp.ckpt") == testing::read_file(dir_part / "llp.ckpt"));
}

TEST_CASE("a dataset with different statistics is refused") {
  const auto ds = testing::tiny_dataset();
  PretrainState st = pretrain::init_pretraining(testing::tiny_pretrain(), ds);
  CHECK_THROWS_AS(pretrain::run_pretraining(st, testing::tiny_dataset(99), 1, testing::scratch_dir("stats")),
                  ConfigError);
}

TEST_CASE("low-level policy acts with the policy mean") {
  const auto ds = testing::tiny_dataset();
  const PretrainState st = pretrain::init_pretraining(testing::tiny_pretrain(), ds);
  const auto llp = pretrain::low_level_policy(st);
  Rng rng(4);
  const env::CharState s = env::reset(llp.env, rng, 0.0);
  const auto z = latent::sample_prior(rng, 3);
  const nn::Matrix<float> mean = llp.mean_actions(nn::Matrix<float>(llp.features(s)), nn::Matrix<float>(z.z()));
  const env::Action a = llp.act(s, z);
  const env::Action b = env::decode_action(mean.col(0));
  CHECK(a.fwd == b.fwd);
  CHECK(a.turn == b.turn);
  CHECK(a.balance == b.balance);
  CHECK(a.target2 == b.target2);
  CHECK_THROWS_AS(llp.act(s, latent::sample_prior(rng, 4)), ConfigError);
}
