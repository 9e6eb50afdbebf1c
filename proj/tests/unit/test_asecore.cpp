#include <doctest.h>

#include <cmath>

#include "ase/errors.hpp"
#include "ase/asecore.hpp"
#include "ase/gradcheck.hpp"

using namespace ase;
using nn::Matrix;
using M = Matrix<double>;

namespace {

core::DiscEncNet<double> zero_net(int obs, int d) {
  Rng rng(1);
  auto net = core::make_disc_enc<double>(obs, d, {4}, rng);
  for (auto& a : net.params) a.values.setZero();
  return net;
}

// Logit = 50 relu(x0) - 50 relu(-x0).
core::DiscEncNet<double> separating_net() {
  auto net = zero_net(1, 2);
  net.params[0].values(0, 0) = 1;
  net.params[0].values(1, 0) = -1;
  net.params[2].values(0, 0) = 50;
  net.params[2].values(0, 1) = -50;
  return net;
}

}  // namespace

TEST_CASE("discriminator probability and clamping") {
  auto net = zero_net(2, 2);
  const M x = M::Random(4, 3);
  CHECK(core::disc_prob(net, x).isApprox(nn::Vector<double>::Constant(3, 0.5)));
  net.params[3].values(0, 0) = 40;
  CHECK(core::disc_prob(net, x)(0) == doctest::Approx(1 - 1e-4).epsilon(1e-12));
  Rng rng(2);
  const auto r = core::make_disc_enc<double>(3, 2, {5, 4}, rng);
  const M in = M::Random(6, 5);
  const M raw = nn::mlp_forward(r.spec, r.params, in);
  const auto p = core::disc_prob(r, in);
  for (int c = 0; c < 5; ++c) CHECK(p(c) == doctest::Approx(std::clamp(1 / (1 + std::exp(-raw(0, c))), 1e-4, 1 - 1e-4)));
}

TEST_CASE("constant discriminator loss is 2 ln 2") {
  const auto net = zero_net(2, 2);
  const auto l = core::disc_loss_and_grads(net, M(M::Random(4, 5)), M(M::Random(4, 7)), 5.0);
  CHECK(l.loss == doctest::Approx(2 * std::log(2.0)).epsilon(1e-9));
  CHECK(l.penalty == 0.0);
}

TEST_CASE("saturated separating discriminator loss is the clamp floor") {
  const auto net = separating_net();
  M real = M::Zero(2, 4), fake = M::Zero(2, 4);
  real.row(0).setConstant(1);
  fake.row(0).setConstant(-1);
  const auto l = core::disc_loss_and_grads(net, real, fake, 0.0);
  CHECK(l.loss == doctest::Approx(-2 * std::log(1 - 1e-4)).epsilon(1e-6));
  CHECK(l.accuracy == 1.0);
}

TEST_CASE("gradient penalty equals the finite-difference input gradient norm") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto net = core::make_disc_enc<double>(3, 2, {6, 5}, rng);
    for (auto& a : net.params)
      if (a.is_vector) a.values.setRandom();
    const M real = M::Random(6, 4), fake = M::Random(6, 4);
    const auto l = core::disc_loss_and_grads(net, real, fake, 1.0);
    double sum = 0;
    for (int c = 0; c < 4; ++c) {
      for (int i = 0; i < 6; ++i) {
        M a = real.col(c), b = real.col(c);
        a(i) += 1e-6;
        b(i) -= 1e-6;
        const double g =
            (nn::mlp_forward(net.spec, net.params, a)(0, 0) - nn::mlp_forward(net.spec, net.params, b)(0, 0)) / 2e-6;
        sum += g * g;
      }
    }
    CHECK(l.penalty == doctest::Approx(sum / 4).epsilon(1e-5));
  }
}

TEST_CASE("every differentiable loss passes the finite-difference check") {
  for (const auto& r : gradcheck::run_all(20, 99)) {
    INFO(r.name);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-4);
  }
  CHECK(gradcheck::run_all(1, 1).size() >= 5);
}

TEST_CASE("NaN injection makes every family fail") {
  for (const auto& r : gradcheck::run_all(1, 5, true)) CHECK_FALSE(r.passed);
}

TEST_CASE("encoder mean is unit norm with a fallback axis") {
  const auto net = zero_net(2, 3);
  const M mu = core::encoder_mean(net, M(M::Random(4, 2)));
  CHECK(mu.col(0) == Eigen::Vector3d(1, 0, 0));
  Rng rng(4);
  const auto r = core::make_disc_enc<double>(3, 4, {5}, rng);
  const M in = M::Random(6, 20);
  const M m = core::encoder_mean(r, in);
  const M raw = nn::mlp_forward(r.spec, r.params, in);
  for (int c = 0; c < 20; ++c) {
    CHECK(std::abs(m.col(c).norm() - 1) < 1e-6);
    CHECK((m.col(c) - raw.col(c).segment(1, 4).normalized()).norm() < 1e-12);
  }
}

TEST_CASE("encoder loss values") {
  const auto net = zero_net(2, 2);  // mu = e1 everywhere
  const M in = M::Random(4, 3);
  M z = M::Zero(2, 3);
  z.row(0).setOnes();
  CHECK(core::encoder_loss_and_grads(net, in, z, 2.0).loss == doctest::Approx(-2.0));
  z.setZero();
  z.row(1).setOnes();
  CHECK(core::encoder_loss_and_grads(net, in, z, 2.0).loss == doctest::Approx(0.0));
}

TEST_CASE("reward arithmetic") {
  CHECK(core::style_reward(0.5) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(core::style_reward(1 - 1e-4) == doctest::Approx(9.21034).epsilon(1e-6));
  CHECK(core::style_reward(1 - 1 / std::exp(1.0)) == doctest::Approx(1.0));
  CHECK(core::skill_reward(1, 0.5, 1) == 0.5);
  CHECK(core::skill_reward(0, 0.5, 1) == 0.0);
  CHECK(core::skill_reward(-1, 0.5, 1) == -0.5);
  core::PretrainHyper h;
  CHECK(core::pretrain_reward(0.5, 1, h) == doctest::Approx(1.193147).epsilon(1e-6));
  CHECK(core::pretrain_reward(1e-4, 0.3, h) == doctest::Approx(1e-4 + 0.15).epsilon(1e-3));
  CHECK(core::pretrain_reward(0.3, 0.2, h) == core::style_reward(0.3) + core::skill_reward(0.2, 0.5, 1.0));
}

TEST_CASE("batched pretrain rewards are bounded") {
  Rng rng(5);
  const auto net = core::make_disc_enc<float>(3, 4, {8}, rng);
  Matrix<float> in = Matrix<float>::Random(6, 50) * 20.0f;
  Matrix<float> z(4, 50);
  for (int c = 0; c < 50; ++c) z.col(c) = latent::sample_prior(rng, 4).z();
  core::PretrainHyper h;
  h.latent_dim = 4;
  const auto r = core::pretrain_rewards(net, in, z, h);
  for (int i = 0; i < 50; ++i) {
    CHECK((r.style[i] >= -std::log(1 - 1e-4) - 1e-6 && r.style[i] <= -std::log(1e-4) + 1e-6));
    CHECK(std::abs(r.skill[i]) <= 0.5 + 1e-6);
    CHECK(r.total[i] == doctest::Approx(r.style[i] + r.skill[i]));
  }
}

TEST_CASE("diversity loss values") {
  const nn::GaussianHead head = nn::GaussianHead::isotropic(1, 0.04);
  const nn::MlpSpec spec{3, {}, 1, nn::OutputActivation::kLinear};
  Rng rng(6);
  auto p = nn::init_mlp<double>(spec, "pi", rng);
  p[0].values << 0.7, 0.0, 0.0;  // ignores the latent
  const M obs = M::Random(1, 5);
  M z1 = M::Zero(2, 5), z2 = M::Zero(2, 5);
  z1.row(0).setOnes();
  z2.row(1).setOnes();
  CHECK(core::diversity_loss_and_grads(spec, p, head, obs, z1, z2, 0.3).loss == doctest::Approx(0.3));
  // KL = a^2 / (2 var) = 0.5 = D_z for orthogonal latents when a = sd.
  p[0].values << 0.7, 0.2, 0.0;
  CHECK(core::diversity_loss_and_grads(spec, p, head, obs, z1, z2, 0.3).loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("discriminator learns a separable toy problem") {
  Rng rng(7);
  auto net = core::make_disc_enc<float>(2, 2, {16, 16}, rng);
  auto adam = nn::make_adam(net.params, {1e-3});
  auto batch = [&](Rng& r, float sign, int n) {
    Matrix<float> x(4, n);
    for (int c = 0; c < n; ++c)
      for (int k = 0; k < 4; ++k) x(k, c) = static_cast<float>(r.normal() * 0.5 + (k == 0 ? sign : 0.0));
    return x;
  };
  for (int it = 0; it < 500; ++it) {
    const auto l = core::disc_loss_and_grads(net, batch(rng, 1, 64), batch(rng, -1, 64), 0.1);
    nn::adam_step(net.params, l.grads, adam);
  }
  Rng held(8);
  const auto pr = core::disc_prob(net, batch(held, 1, 500));
  const auto pf = core::disc_prob(net, batch(held, -1, 500));
  const double acc = ((pr.array() > 0.5).cast<double>().sum() + (pf.array() < 0.5).cast<double>().sum()) / 1000.0;
  CHECK(acc >= 0.95);
}

TEST_CASE("encoder learns latents encoded in the transition") {
  Rng rng(9);
  const int d = 3;
  auto net = core::make_disc_enc<float>(3, d, {32, 32}, rng);
  auto adam = nn::make_adam(net.params, {1e-3});
  auto batch = [&](Rng& r, Matrix<float>& z) {
    Matrix<float> x(6, 64);
    z.resize(d, 64);
    for (int c = 0; c < 64; ++c) {
      z.col(c) = latent::sample_prior(r, d).z();
      for (int k = 0; k < 3; ++k) {
        x(k, c) = static_cast<float>(r.normal());
        x(3 + k, c) = x(k, c) + z(k, c);
      }
    }
    return x;
  };
  Matrix<float> z;
  for (int it = 0; it < 1000; ++it) {
    const Matrix<float> x = batch(rng, z);
    nn::adam_step(net.params, core::encoder_loss_and_grads(net, x, z, 1.0).grads, adam);
  }
  Rng held(10);
  const Matrix<float> x = batch(held, z);
  CHECK(core::encoder_loss_and_grads(net, x, z, 1.0).score >= 0.9);
}
