#include <doctest.h>

#include <cstring>

#include "ase/checkpoint.hpp"
#include "ase/errors.hpp"
#include "ase/pretrain.hpp"
#include "fixtures.hpp"

using namespace ase;
using ckpt::Checkpoint;

namespace {

Checkpoint sample(Rng& rng) {
  const nn::MlpSpec spec{5, {7, 3}, 2, nn::OutputActivation::kLinear};
  Checkpoint c;
  c.manifest["kind"] = "test";
  c.manifest["spec"] = ckpt::spec_to_json(spec);
  c.add_set("net", nn::init_mlp<float>(spec, "p", rng));
  return c;
}

}  // namespace

TEST_CASE("encode and decode round-trip bit-exactly") {
  Rng rng(1);
  const Checkpoint c = sample(rng);
  const std::string bytes = ckpt::encode(c);
  CHECK(bytes.compare(0, 8, ckpt::kMagic) == 0);
  const Checkpoint d = ckpt::decode(bytes);
  CHECK(d.manifest.at("kind") == "test");
  REQUIRE(d.arrays.size() == c.arrays.size());
  for (std::size_t i = 0; i < c.arrays.size(); ++i) {
    CHECK(d.arrays[i].name == c.arrays[i].name);
    CHECK(d.arrays[i].is_vector == c.arrays[i].is_vector);
    CHECK(d.arrays[i].values == c.arrays[i].values);
  }
  CHECK(ckpt::encode(d) == bytes);
}

TEST_CASE("payload is little-endian float32 after the manifest") {
  Checkpoint c;
  nn::ParamSet<float> set;
  set.add("w", nn::Matrix<float>::Constant(1, 1, 1.5f), false);
  c.add_set("s", set);
  const std::string bytes = ckpt::encode(c);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  REQUIRE(bytes.size() == 16 + len + 4);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 16 + len;
  const std::uint32_t bits = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  float v = 0;
  std::memcpy(&v, &bits, 4);
  CHECK(v == 1.5f);
}

TEST_CASE("decode rejects damaged files") {
  Rng rng(2);
  const std::string bytes = ckpt::encode(sample(rng));
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(ckpt::decode(bad), ConfigError);
  CHECK_THROWS_AS(ckpt::decode(bytes.substr(0, bytes.size() - 4)), ConfigError);
  CHECK_THROWS_AS(ckpt::decode(bytes.substr(0, 20)), ConfigError);
  CHECK_THROWS_AS(ckpt::decode(""), ConfigError);
}

TEST_CASE("get_set checks names and shapes") {
  Rng rng(3);
  const Checkpoint c = sample(rng);
  const nn::MlpSpec same{5, {7, 3}, 2, nn::OutputActivation::kLinear};
  const nn::MlpSpec wider{5, {8, 3}, 2, nn::OutputActivation::kLinear};
  CHECK(c.get_set("net", nn::init_mlp<float>(same, "p", rng)) == c.get_prefixed("net"));
  CHECK_THROWS_AS(c.get_set("net", nn::init_mlp<float>(wider, "p", rng)), ConfigError);
  CHECK_THROWS_AS(c.get_set("other", nn::init_mlp<float>(same, "p", rng)), ConfigError);
  CHECK_THROWS_AS(c.get_prefixed("other"), ConfigError);
}

TEST_CASE("spec JSON round-trip") {
  const nn::MlpSpec spec{11, {32, 16}, 4, nn::OutputActivation::kUnitNormalize};
  CHECK(ckpt::spec_from_json(ckpt::spec_to_json(spec)) == spec);
}

TEST_CASE("save and load through a file") {
  Rng rng(4);
  const Checkpoint c = sample(rng);
  const auto path = testing::scratch_dir("ckpt") / "a.ckpt";
  ckpt::save(c, path);
  CHECK(ckpt::encode(ckpt::load(path)) == ckpt::encode(c));
  CHECK_THROWS_AS(ckpt::load(path.parent_path() / "missing.ckpt"), ConfigError);
}

TEST_CASE("pre-training state survives a checkpoint round-trip") {
  const auto ds = testing::tiny_dataset();
  pretrain::PretrainState st = pretrain::init_pretraining(testing::tiny_pretrain(), ds);
  const auto expert = pretrain::expert_features(ds, st.stats);
  pretrain::run_iteration(st, ds, expert);
  const std::string bytes = ckpt::encode(pretrain::to_checkpoint(st));
  const pretrain::PretrainState back = pretrain::from_checkpoint(ckpt::decode(bytes));
  CHECK(ckpt::encode(pretrain::to_checkpoint(back)) == bytes);
  CHECK(back.iteration == st.iteration);
  CHECK(back.policy.params == st.policy.params);
  CHECK(back.disc_enc.params == st.disc_enc.params);
}

TEST_CASE("a non-pretraining checkpoint is rejected") {
  Rng rng(5);
  CHECK_THROWS_AS(pretrain::from_checkpoint(sample(rng)), ConfigError);
}
