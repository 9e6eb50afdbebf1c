#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ase/errors.hpp"
#include "ase/gradcheck.hpp"
#include "ase/nn.hpp"

using namespace ase;
using nn::Matrix;

namespace {

// Straight-line re-implementation: loops, no Eigen products.
std::vector<double> oracle_forward(const nn::MlpSpec& spec, const nn::ParamSet<double>& p,
                                   const std::vector<double>& x) {
  std::vector<double> h = x;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const auto& w = p[2 * l].values;
    const auto& b = p[2 * l + 1].values;
    std::vector<double> a(static_cast<std::size_t>(w.rows()));
    for (int r = 0; r < w.rows(); ++r) {
      double s = b(r, 0);
      for (int c = 0; c < w.cols(); ++c) s += w(r, c) * h[static_cast<std::size_t>(c)];
      const bool hidden = l < spec.num_layers() - 1;
      a[static_cast<std::size_t>(r)] = hidden ? std::max(0.0, s) : s;
    }
    h = a;
  }
  if (spec.output_activation == nn::OutputActivation::kSigmoid)
    for (auto& v : h) v = 1.0 / (1.0 + std::exp(-v));
  if (spec.output_activation == nn::OutputActivation::kUnitNormalize) {
    double n = 0;
    for (double v : h) n += v * v;
    for (auto& v : h) v /= std::sqrt(n);
  }
  return h;
}

nn::ParamSet<double> random_net(const nn::MlpSpec& spec, Rng& rng) {
  auto p = nn::init_mlp<double>(spec, "n", rng);
  for (auto& a : p)
    if (a.is_vector)
      for (Eigen::Index i = 0; i < a.values.size(); ++i) a.values.data()[i] = 0.1 * rng.normal();
  return p;
}

}  // namespace

TEST_CASE("zero network maps any input to zero") {
  const nn::MlpSpec spec{3, {4}, 2, nn::OutputActivation::kLinear};
  Rng rng(1);
  auto p = nn::init_mlp<double>(spec, "n", rng);
  for (auto& a : p) a.values.setZero();
  const Matrix<double> x = Matrix<double>::Random(3, 5);
  CHECK(nn::mlp_forward(spec, p, x).isZero(0.0));
}

TEST_CASE("identity linear layer passes the input through") {
  const nn::MlpSpec spec{3, {}, 3, nn::OutputActivation::kLinear};
  Rng rng(1);
  auto p = nn::init_mlp<double>(spec, "n", rng);
  p[0].values = Matrix<double>::Identity(3, 3);
  p[1].values.setZero();
  const Matrix<double> x = Matrix<double>::Random(3, 4);
  CHECK(nn::mlp_forward(spec, p, x) == x);
}

TEST_CASE("forward matches a loop oracle for every output activation") {
  Rng rng(7);
  for (auto act : {nn::OutputActivation::kLinear, nn::OutputActivation::kSigmoid,
                   nn::OutputActivation::kUnitNormalize}) {
    for (int trial = 0; trial < 20; ++trial) {
      const nn::MlpSpec spec{4, {5, 3}, 3, act};
      const auto p = random_net(spec, rng);
      std::vector<double> x(4);
      for (auto& v : x) v = rng.normal();
      const Matrix<double> xin = Eigen::Map<const Eigen::VectorXd>(x.data(), 4);
      const Matrix<double> y = nn::mlp_forward(spec, p, xin);
      const auto oracle = oracle_forward(spec, p, x);
      for (int i = 0; i < 3; ++i) CHECK(y(i, 0) == doctest::Approx(oracle[static_cast<std::size_t>(i)]).epsilon(1e-9));
      if (act == nn::OutputActivation::kUnitNormalize) CHECK(std::abs(y.norm() - 1.0) < 1e-6);
      if (act == nn::OutputActivation::kSigmoid) CHECK((y.array() > 0 && y.array() < 1).all());
    }
  }
}

TEST_CASE("forward rejects a wrong input size") {
  const nn::MlpSpec spec{3, {4}, 2, nn::OutputActivation::kLinear};
  Rng rng(1);
  const auto p = nn::init_mlp<double>(spec, "n", rng);
  CHECK_THROWS_AS(nn::mlp_forward(spec, p, Matrix<double>(Matrix<double>::Zero(2, 1))), ConfigError);
}

TEST_CASE("backward without a cache is a usage error") {
  const nn::MlpSpec spec{3, {4}, 2, nn::OutputActivation::kLinear};
  Rng rng(1);
  const auto p = nn::init_mlp<double>(spec, "n", rng);
  CHECK_THROWS_AS(nn::mlp_backward(spec, p, nn::MlpCache<double>{}, Matrix<double>(Matrix<double>::Zero(2, 1))), UsageError);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  const nn::MlpSpec spec{3, {4}, 2, nn::OutputActivation::kLinear};
  Rng rng(2);
  const auto p = random_net(spec, rng);
  nn::MlpCache<double> cache;
  nn::mlp_forward(spec, p, Matrix<double>(Matrix<double>::Random(3, 4)), &cache);
  const auto g = nn::mlp_backward(spec, p, cache, Matrix<double>(Matrix<double>::Zero(2, 4)));
  for (const auto& a : g.params) CHECK(a.values.isZero(0.0));
  CHECK(g.input.isZero(0.0));
}

TEST_CASE("single linear layer input gradient is W^T g") {
  const nn::MlpSpec spec{3, {}, 2, nn::OutputActivation::kLinear};
  Rng rng(3);
  const auto p = random_net(spec, rng);
  nn::MlpCache<double> cache;
  nn::mlp_forward(spec, p, Matrix<double>(Matrix<double>::Random(3, 1)), &cache);
  const Matrix<double> up = Matrix<double>::Random(2, 1);
  const auto g = nn::mlp_backward(spec, p, cache, up);
  CHECK((g.input - p[0].values.transpose() * up).norm() < 1e-14);
}

TEST_CASE("parameter and input gradients match central differences") {
  Rng rng(11);
  for (auto act : {nn::OutputActivation::kLinear, nn::OutputActivation::kSigmoid,
                   nn::OutputActivation::kUnitNormalize}) {
    for (int trial = 0; trial < 35; ++trial) {
      const nn::MlpSpec spec{4, {6, 5}, 3, act};
      const auto p = random_net(spec, rng);
      const Matrix<double> x = Matrix<double>::Random(4, 3);
      const Matrix<double> up = Matrix<double>::Random(3, 3);
      nn::MlpCache<double> cache;
      nn::mlp_forward(spec, p, x, &cache);
      const auto g = nn::mlp_backward(spec, p, cache, up);
      auto loss = [&](const nn::ParamSet<double>& q) { return nn::mlp_forward(spec, q, x).cwiseProduct(up).sum(); };
      CHECK(gradcheck::relative_error(loss, p, g.params) < 1e-4);

      // Input gradient, elementwise central differences.
      double diff = 0, norm = 0;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        Matrix<double> a = x, b = x;
        a.data()[i] += 1e-6;
        b.data()[i] -= 1e-6;
        const double fd = (nn::mlp_forward(spec, p, a).cwiseProduct(up).sum() -
                           nn::mlp_forward(spec, p, b).cwiseProduct(up).sum()) / 2e-6;
        diff += (fd - g.input.data()[i]) * (fd - g.input.data()[i]);
        norm += fd * fd;
      }
      CHECK(std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12) < 1e-4);
    }
  }
}

TEST_CASE("input-gradient penalty matches finite differences of the penalty") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const nn::MlpSpec spec{4, {6, 5}, 2, nn::OutputActivation::kLinear};
    const auto p = random_net(spec, rng);
    const Matrix<double> x = Matrix<double>::Random(4, 3);
    const Matrix<double> dir = Matrix<double>::Random(2, 3);
    const nn::Vector<double> w = nn::Vector<double>::Random(3).cwiseAbs();
    auto penalty = [&](const nn::ParamSet<double>& q) {
      nn::MlpCache<double> c;
      nn::mlp_forward(spec, q, x, &c);
      return nn::mlp_input_grad_penalty(spec, q, c, dir, w).sq_norms.dot(w);
    };
    nn::MlpCache<double> cache;
    nn::mlp_forward(spec, p, x, &cache);
    const auto pen = nn::mlp_input_grad_penalty(spec, p, cache, dir, w);
    const auto back = nn::mlp_backward(spec, p, cache, dir);
    CHECK((pen.input_grads - back.input).norm() < 1e-12);
    CHECK(gradcheck::relative_error(penalty, p, pen.params) < 1e-4);
  }
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  const nn::MlpSpec spec{2, {3}, 1, nn::OutputActivation::kLinear};
  Rng rng(1);
  auto p = nn::init_mlp<float>(spec, "n", rng);
  const auto before = p;
  auto st = nn::make_adam(p, {});
  nn::adam_step(p, p.zeros_like(), st);
  CHECK(p == before);
  CHECK(st.step_count == 1);
}

TEST_CASE("first adam step matches a hand-unrolled update") {
  nn::ParamSet<double> p;
  p.add("x", Matrix<double>::Constant(1, 1, 0.5), true);
  nn::ParamSet<double> g;
  g.add("x", Matrix<double>::Constant(1, 1, 1.0), true);
  const nn::AdamConfig cfg{1e-3, 0.9, 0.999, 1e-8};
  auto st = nn::make_adam(p, cfg);
  nn::adam_step(p, g, st);
  const double m = 0.1 * 1.0, v = 0.001 * 1.0;
  const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
  const double expected = 0.5 - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(p[0].values(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(0.5 - p[0].values(0, 0) == doctest::Approx(1e-3).epsilon(1e-4));
}

TEST_CASE("adam is deterministic and names non-finite gradients") {
  const nn::MlpSpec spec{2, {3}, 1, nn::OutputActivation::kLinear};
  Rng rng(1);
  auto p1 = nn::init_mlp<float>(spec, "n", rng);
  auto p2 = p1;
  auto g = p1;
  for (auto& a : g) a.values.setConstant(0.3f);
  auto s1 = nn::make_adam(p1, {});
  auto s2 = nn::make_adam(p2, {});
  nn::adam_step(p1, g, s1);
  nn::adam_step(p2, g, s2);
  CHECK(p1 == p2);
  g[1].values(0, 0) = std::numeric_limits<float>::quiet_NaN();
  try {
    nn::adam_step(p1, g, s1);
    FAIL("expected OptimizationError");
  } catch (const OptimizationError& e) {
    CHECK(std::string(e.what()).find(g[1].name) != std::string::npos);
  }
}

TEST_CASE("gaussian log-density analytic values") {
  const nn::GaussianHead h = nn::GaussianHead::isotropic(1, 1.0);
  Eigen::VectorXd m(1), x(1);
  m << 0.3;
  x << 0.3;
  CHECK(nn::gaussian_logprob<double>(h, m, x) == doctest::Approx(-0.918939).epsilon(1e-6));
  m << 0.0;
  x << 1.0;
  CHECK(nn::gaussian_logprob<double>(h, m, x) == doctest::Approx(-0.5 - 0.5 * std::log(2 * std::numbers::pi)));
}

TEST_CASE("gaussian density integrates to one on a grid") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const double var = rng.uniform(0.05, 2.0);
    const nn::GaussianHead h = nn::GaussianHead::isotropic(1, var);
    Eigen::VectorXd m(1), x(1);
    m << rng.normal();
    const double sd = std::sqrt(var);
    const int n = 20000;
    const double lo = m(0) - 10 * sd, dx = 20 * sd / n;
    double sum = 0.0;
    for (int i = 0; i <= n; ++i) {
      x << lo + i * dx;
      sum += std::exp(nn::gaussian_logprob<double>(h, m, x)) * ((i == 0 || i == n) ? 0.5 : 1.0);
    }
    CHECK(std::abs(sum * dx - 1.0) < 1e-3);
  }
}

TEST_CASE("gaussian KL closed form") {
  const nn::GaussianHead h = nn::GaussianHead::isotropic(1, 0.0025);
  Eigen::VectorXd a(1), b(1);
  a << 0.2;
  b << 0.2;
  CHECK(nn::gaussian_kl<double>(a, b, h) == 0.0);
  b << 0.3;
  CHECK(nn::gaussian_kl<double>(a, b, h) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(nn::gaussian_kl<double>(b, a, h) == nn::gaussian_kl<double>(a, b, h));
}

TEST_CASE("gaussian KL agrees with a Monte Carlo estimate") {
  Rng rng(9);
  const nn::GaussianHead h({0.3, 0.8, 1.5});
  Eigen::VectorXd m1(3), m2(3);
  m1 << 0.2, -0.5, 1.0;
  m2 << -0.4, 0.3, 0.2;
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x(3);
    for (int k = 0; k < 3; ++k) x(k) = m1(k) + std::sqrt(h.variance[static_cast<std::size_t>(k)]) * rng.normal();
    const double d = nn::gaussian_logprob<double>(h, m1, x) - nn::gaussian_logprob<double>(h, m2, x);
    sum += d;
    sq += d * d;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  CHECK(std::abs(mean - nn::gaussian_kl<double>(m1, m2, h)) < 3 * se);
}
