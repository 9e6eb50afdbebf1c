#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numbers>

#include "ase/errors.hpp"
#include "ase/latent.hpp"

using namespace ase;
using latent::LatentSkill;

namespace {

LatentSkill unit(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) x(i++) = e;
  return *latent::normalize(x);
}

}  // namespace

TEST_CASE("normalize scales to unit length") {
  const auto z = unit({3, 4});
  CHECK(z.z()(0) == doctest::Approx(0.6));
  CHECK(z.z()(1) == doctest::Approx(0.8));
  const auto u = unit({0, 1, 0});
  CHECK(u.z() == Eigen::Vector3f(0, 1, 0));
}

TEST_CASE("normalize signals a redraw for near-zero input") {
  CHECK_FALSE(latent::normalize(Eigen::VectorXd(Eigen::VectorXd::Zero(4))).has_value());
  CHECK_FALSE(latent::normalize(Eigen::VectorXd(Eigen::VectorXd::Constant(4, 1e-10))).has_value());
}

TEST_CASE("from_stored accepts only unit vectors") {
  CHECK_NOTHROW(LatentSkill::from_stored(Eigen::Vector2f(0.6f, 0.8f)));
  CHECK_THROWS_AS(LatentSkill::from_stored(Eigen::Vector2f(1.0f, 1.0f)), ConfigError);
}

TEST_CASE("prior draws are unit norm with zero-mean components") {
  Rng rng(42);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(8);
  for (int i = 0; i < 10000; ++i) {
    const auto z = latent::sample_prior(rng, 8);
    REQUIRE(std::abs(z.z().cast<double>().norm() - 1.0) < 1e-6);
    sum += z.z().cast<double>();
  }
  for (int k = 0; k < 8; ++k) CHECK(std::abs(sum(k) / 10000) < 0.05);
}

TEST_CASE("prior angles in two dimensions pass a chi-square uniformity test") {
  Rng rng(43);
  std::vector<int> bins(8, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto z = latent::sample_prior(rng, 2);
    double a = std::atan2(z.z()(1), z.z()(0));
    if (a < 0) a += 2 * std::numbers::pi;
    bins[std::min<std::size_t>(7, static_cast<std::size_t>(a / (2 * std::numbers::pi) * 8))]++;
  }
  double chi2 = 0;
  for (int b : bins) chi2 += (b - n / 8.0) * (b - n / 8.0) / (n / 8.0);
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(7), chi2));
  CHECK(p > 0.001);
}

TEST_CASE("latent distance values") {
  const auto z = unit({1, 2, 3});
  const auto neg = unit({-1, -2, -3});
  CHECK(latent::latent_distance(z, z) == doctest::Approx(0.0));
  CHECK(latent::latent_distance(z, neg) == doctest::Approx(1.0));
  CHECK(latent::latent_distance(unit({1, 0}), unit({0, 1})) == doctest::Approx(0.5));
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto a = latent::sample_prior(rng, 5), b = latent::sample_prior(rng, 5);
    const double d = latent::latent_distance(a, b);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK(d == latent::latent_distance(b, a));
  }
}

TEST_CASE("schedule with a full-length hold uses one latent") {
  Rng rng(2);
  const auto s = latent::make_schedule(rng, 10, 10, 10, 4);
  CHECK(s.length() == 10);
  CHECK(s.skills.size() == 1);
  for (int t = 0; t < 10; ++t) CHECK(s.index[t] == 0);
}

TEST_CASE("schedule runs respect the hold bounds") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = latent::make_schedule(rng, 10, 3, 5, 4);
    REQUIRE(s.length() == 10);
    std::vector<int> runs;
    int len = 1;
    for (int t = 1; t < 10; ++t) {
      if (s.index[t] == s.index[t - 1]) {
        ++len;
      } else {
        runs.push_back(len);
        len = 1;
      }
    }
    for (int r : runs) CHECK((r >= 3 && r <= 5));
    CHECK(len <= 5);
    for (const auto& z : s.skills) CHECK(std::abs(z.z().norm() - 1.0f) < 1e-6f);
  }
}

TEST_CASE("schedules are reproducible from the seed") {
  Rng a(9), b(9);
  const auto s1 = latent::make_schedule(a, 300, 1, 150, 8);
  const auto s2 = latent::make_schedule(b, 300, 1, 150, 8);
  CHECK(s1.index == s2.index);
  CHECK(s1.skills == s2.skills);
  CHECK(s1.length() == 300);
}
