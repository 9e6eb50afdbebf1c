#include "ase/gradcheck.hpp"

#include <cmath>
#include <limits>

#include "ase/asecore.hpp"
#include "ase/errors.hpp"
#include "ase/latent.hpp"
#include "ase/rl.hpp"
#include "ase/rng.hpp"

namespace ase::gradcheck {

namespace {

using M = nn::Matrix<double>;
using Loss = std::function<double(const nn::ParamSet<double>&)>;

constexpr int kObs = 3;
constexpr int kLatent = 2;
constexpr int kBatch = 6;

M random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  M m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

M random_latents(Rng& rng, int dim, Eigen::Index cols) {
  M z(dim, cols);
  for (Eigen::Index c = 0; c < cols; ++c) z.col(c) = latent::sample_prior(rng, dim).z().cast<double>();
  return z;
}

// Randomizes biases too so ReLU units are not all aligned at zero.
nn::ParamSet<double> random_params(const nn::MlpSpec& spec, Rng& rng) {
  nn::ParamSet<double> p = nn::init_mlp<double>(spec, "net", rng);
  for (auto& a : p)
    if (a.is_vector)
      for (Eigen::Index i = 0; i < a.values.size(); ++i) a.values.data()[i] = 0.1 * rng.normal();
  return p;
}

struct Instance {
  nn::ParamSet<double> params;
  nn::ParamSet<double> grads;
  Loss loss;
};

Instance disc_instance(Rng& rng) {
  core::DiscEncNet<double> net = core::make_disc_enc<double>(kObs, kLatent, {6, 5}, rng);
  net.params = random_params(net.spec, rng);
  const M real = random_matrix(rng, 2 * kObs, kBatch);
  const M fake = random_matrix(rng, 2 * kObs, kBatch);
  const double w_gp = rng.uniform(0.5, 5.0);
  Instance in;
  in.params = net.params;
  in.grads = core::disc_loss_and_grads(net, real, fake, w_gp).grads;
  in.loss = [spec = net.spec, real, fake, w_gp](const nn::ParamSet<double>& p) {
    return core::disc_loss_and_grads(core::DiscEncNet<double>{spec, p}, real, fake, w_gp).loss;
  };
  return in;
}

Instance encoder_instance(Rng& rng) {
  core::DiscEncNet<double> net = core::make_disc_enc<double>(kObs, kLatent, {6, 5}, rng);
  M input;
  // The unit normalization is singular at zero, so keep raw outputs away from it.
  do {
    net.params = random_params(net.spec, rng);
    input = random_matrix(rng, 2 * kObs, kBatch);
  } while (nn::mlp_forward(net.spec, net.params, input).bottomRows(kLatent).colwise().norm().minCoeff() < 0.1);
  const M z = random_latents(rng, kLatent, kBatch);
  const double kappa = rng.uniform(0.5, 2.0);
  Instance in;
  in.params = net.params;
  in.grads = core::encoder_loss_and_grads(net, input, z, kappa).grads;
  in.loss = [spec = net.spec, input, z, kappa](const nn::ParamSet<double>& p) {
    return core::encoder_loss_and_grads(core::DiscEncNet<double>{spec, p}, input, z, kappa).loss;
  };
  return in;
}

std::vector<double> column_logp(const nn::GaussianHead& head, const M& mean, const M& x) {
  const nn::Vector<double> lp = nn::gaussian_logprob_batch<double>(head, mean, x);
  return {lp.data(), lp.data() + lp.size()};
}

Instance ppo_instance(Rng& rng) {
  const nn::MlpSpec spec{kObs + kLatent, {6, 5}, 3, nn::OutputActivation::kLinear};
  const nn::GaussianHead head = nn::GaussianHead::isotropic(3, rng.uniform(0.05, 0.5));
  const double clip = 0.2;
  nn::ParamSet<double> params = random_params(spec, rng);
  const M input = random_matrix(rng, spec.input_dim, kBatch);
  nn::MlpCache<double> cache;
  const M mean = nn::mlp_forward(spec, params, input, &cache);
  const M actions = mean + 0.3 * random_matrix(rng, 3, kBatch);
  const std::vector<double> logp_new = column_logp(head, mean, actions);
  std::vector<double> logp_old(kBatch);
  std::vector<double> adv(kBatch);
  for (int i = 0; i < kBatch; ++i) {
    // Keep every ratio clear of the clip boundaries, where the loss has kinks.
    double ratio = 1.0;
    do {
      logp_old[static_cast<std::size_t>(i)] = logp_new[static_cast<std::size_t>(i)] + rng.uniform(-0.5, 0.5);
      ratio = std::exp(logp_new[static_cast<std::size_t>(i)] - logp_old[static_cast<std::size_t>(i)]);
    } while (std::abs(ratio - (1.0 + clip)) < 1e-3 || std::abs(ratio - (1.0 - clip)) < 1e-3);
    adv[static_cast<std::size_t>(i)] = rng.normal();
  }
  const rl::PolicyLoss pl = rl::ppo_policy_loss(logp_new, logp_old, adv, clip);
  M up = nn::gaussian_logprob_grad_mean<double>(head, mean, actions);
  for (int c = 0; c < kBatch; ++c) up.col(c) *= pl.grad_logp[static_cast<std::size_t>(c)];
  Instance in;
  in.params = params;
  in.grads = nn::mlp_backward(spec, params, cache, up).params;
  in.loss = [spec, head, input, actions, logp_old, adv, clip](const nn::ParamSet<double>& p) {
    const M m = nn::mlp_forward(spec, p, input);
    return rl::ppo_policy_loss(column_logp(head, m, actions), logp_old, adv, clip).loss;
  };
  return in;
}

Instance value_instance(Rng& rng) {
  const nn::MlpSpec spec{kObs + kLatent, {6, 5}, 1, nn::OutputActivation::kLinear};
  nn::ParamSet<double> params = random_params(spec, rng);
  const M input = random_matrix(rng, spec.input_dim, kBatch);
  std::vector<double> targets(kBatch);
  for (auto& t : targets) t = 2.0 * rng.normal();
  nn::MlpCache<double> cache;
  const M pred = nn::mlp_forward(spec, params, input, &cache);
  const rl::ValueLoss vl = rl::value_loss(std::vector<double>(pred.data(), pred.data() + pred.size()), targets);
  M up(1, kBatch);
  for (int c = 0; c < kBatch; ++c) up(0, c) = vl.grad[static_cast<std::size_t>(c)];
  Instance in;
  in.params = params;
  in.grads = nn::mlp_backward(spec, params, cache, up).params;
  in.loss = [spec, input, targets](const nn::ParamSet<double>& p) {
    const M m = nn::mlp_forward(spec, p, input);
    return rl::value_loss(std::vector<double>(m.data(), m.data() + m.size()), targets).loss;
  };
  return in;
}

Instance diversity_instance(Rng& rng) {
  const nn::MlpSpec spec{kObs + kLatent, {6, 5}, 3, nn::OutputActivation::kLinear};
  const nn::GaussianHead head = nn::GaussianHead::isotropic(3, rng.uniform(0.05, 0.5));
  nn::ParamSet<double> params = random_params(spec, rng);
  const M obs = random_matrix(rng, kObs, kBatch);
  M z1(kLatent, kBatch);
  M z2(kLatent, kBatch);
  for (int c = 0; c < kBatch; ++c) {
    for (;;) {
      const auto a = latent::sample_prior(rng, kLatent);
      const auto b = latent::sample_prior(rng, kLatent);
      if (latent::latent_distance(a, b) < 0.05) continue;
      z1.col(c) = a.z().cast<double>();
      z2.col(c) = b.z().cast<double>();
      break;
    }
  }
  const double w_div = rng.uniform(0.01, 1.0);
  Instance in;
  in.params = params;
  in.grads = core::diversity_loss_and_grads<double>(spec, params, head, obs, z1, z2, w_div).grads;
  in.loss = [spec, head, obs, z1, z2, w_div](const nn::ParamSet<double>& p) {
    return core::diversity_loss_and_grads<double>(spec, p, head, obs, z1, z2, w_div).loss;
  };
  return in;
}

}  // namespace

double relative_error(const Loss& loss, const nn::ParamSet<double>& params, const nn::ParamSet<double>& grads,
                      double h) {
  nn::ParamSet<double> p = params;
  const std::vector<double> analytic = grads.flatten();
  double diff = 0.0;
  double fd_norm = 0.0;
  double an_norm = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double& x = p.flat(i);
    const double saved = x;
    x = saved + h;
    const double up = loss(p);
    x = saved - h;
    const double down = loss(p);
    x = saved;
    const double fd = (up - down) / (2.0 * h);
    diff += (fd - analytic[i]) * (fd - analytic[i]);
    fd_norm += fd * fd;
    an_norm += analytic[i] * analytic[i];
  }
  const double err = std::sqrt(diff) / std::max({std::sqrt(fd_norm), std::sqrt(an_norm), 1e-12});
  return std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
}

std::vector<FamilyResult> run_all(int instances, std::uint64_t seed, bool inject_nan, double tolerance) {
  if (instances < 1) throw ConfigError("grad check needs at least one instance");
  const std::vector<std::pair<std::string, std::function<Instance(Rng&)>>> families = {
      {"discriminator+gradient-penalty", disc_instance},
      {"encoder", encoder_instance},
      {"ppo-policy", ppo_instance},
      {"value", value_instance},
      {"diversity", diversity_instance},
  };
  std::vector<FamilyResult> out;
  for (std::size_t f = 0; f < families.size(); ++f) {
    Rng rng = Rng::stream(seed, f);
    FamilyResult r;
    r.name = families[f].first;
    try {
      for (int k = 0; k < instances; ++k) {
        Instance in = families[f].second(rng);
        if (inject_nan) {
          in.params.flat(0) = std::numeric_limits<double>::quiet_NaN();
          const double v = in.loss(in.params);
          if (!std::isfinite(v)) throw TrainingFault("non-finite loss");
        }
        const double err = relative_error(in.loss, in.params, in.grads);
        r.max_rel_error = std::max(r.max_rel_error, err);
        ++r.instances;
      }
      r.passed = r.max_rel_error < tolerance;
      if (!r.passed) r.note = "relative error above tolerance";
    } catch (const std::exception& e) {
      r.passed = false;
      r.note = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ase::gradcheck
