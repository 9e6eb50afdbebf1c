#pragma once

// Pre-training objective machinery: shared discriminator/encoder network,
// discriminator loss with gradient penalty, vMF encoder loss, the per-step
// pre-training reward and the diversity penalty.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ase/errors.hpp"
#include "ase/latent.hpp"
#include "ase/nn.hpp"
#include "ase/rng.hpp"

namespace ase::core {

using nn::Matrix;
using nn::Vector;

struct PretrainHyper {
  double beta = 0.5;       // skill discovery weight
  double w_gp = 5.0;       // gradient penalty weight
  double w_div = 0.01;     // diversity weight
  double kappa = 1.0;      // encoder scaling
  double clamp_eps = 1e-4;
  int latent_dim = 8;

  void validate() const;
};

// One trunk over concatenated normalized (s, s'); output row 0 is the
// discriminator logit, rows 1..d the unnormalized encoder mean.
template <typename T>
struct DiscEncNet {
  nn::MlpSpec spec;
  nn::ParamSet<T> params;

  int latent_dim() const { return spec.output_dim - 1; }
  int input_dim() const { return spec.input_dim; }
};

nn::MlpSpec disc_enc_spec(int obs_dim, int latent_dim, const std::vector<int>& hidden);

template <typename T>
DiscEncNet<T> make_disc_enc(int obs_dim, int latent_dim, const std::vector<int>& hidden, Rng& rng) {
  DiscEncNet<T> net;
  net.spec = disc_enc_spec(obs_dim, latent_dim, hidden);
  net.params = nn::init_mlp<T>(net.spec, "disc_enc", rng);
  return net;
}

// Concatenates normalized s (rows 0..n-1) and s' (rows n..2n-1).
template <typename T>
Matrix<T> transition_input(const Matrix<T>& s, const Matrix<T>& s_next) {
  Matrix<T> x(s.rows() + s_next.rows(), s.cols());
  x << s, s_next;
  return x;
}

namespace detail {

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T clamp_prob(T p, double eps) {
  return std::clamp(p, static_cast<T>(eps), static_cast<T>(1.0 - eps));
}

template <typename T>
void check_finite(const Vector<T>& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(static_cast<double>(v(i))))
      throw TrainingFault(std::string(what) + ": non-finite value at batch index " + std::to_string(i));
}

}  // namespace detail

// D(s, s') in [eps, 1 - eps], one entry per column of `input`.
template <typename T>
Vector<T> disc_prob(const DiscEncNet<T>& net, const Matrix<T>& input, double eps = 1e-4) {
  const Matrix<T> out = nn::mlp_forward(net.spec, net.params, input);
  Vector<T> p(out.cols());
  for (Eigen::Index c = 0; c < out.cols(); ++c) p(c) = detail::clamp_prob(detail::sigmoid(out(0, c)), eps);
  return p;
}

// Unit encoder means, one column per sample. A zero raw output maps to e1.
template <typename T>
Matrix<T> encoder_mean(const DiscEncNet<T>& net, const Matrix<T>& input) {
  const Matrix<T> out = nn::mlp_forward(net.spec, net.params, input);
  const int d = net.latent_dim();
  Matrix<T> mu(d, out.cols());
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const auto raw = out.col(c).segment(1, d);
    const T norm = raw.norm();
    if (norm > T(nn::kNormalizeGuard)) {
      mu.col(c) = raw / norm;
    } else {
      mu.col(c).setZero();
      mu(0, c) = T(1);
    }
  }
  return mu;
}

template <typename T>
struct DiscLoss {
  T loss = 0;
  T penalty = 0;   // mean squared input-gradient norm of the logit on real samples (unweighted)
  T accuracy = 0;  // fraction classified correctly at threshold 0.5
  nn::ParamSet<T> grads;
};

// -mean log D(real) - mean log(1 - D(fake)) + w_gp mean_real |grad_x l|^2,
// with D = sigmoid(l). The penalty acts on the logit l: on the probability it
// carries a factor D (1 - D) that vanishes once real samples saturate. It is
// differentiated through the network with an explicit double-backward pass.
template <typename T>
DiscLoss<T> disc_loss_and_grads(const DiscEncNet<T>& net, const Matrix<T>& real, const Matrix<T>& fake, double w_gp,
                                double eps = 1e-4) {
  if (real.cols() == 0 || fake.cols() == 0) throw UsageError("disc_loss_and_grads: empty batch");
  const auto n_real = static_cast<T>(real.cols());
  const auto n_fake = static_cast<T>(fake.cols());
  const T lo = static_cast<T>(eps);
  const T hi = static_cast<T>(1.0 - eps);

  DiscLoss<T> result;
  std::size_t correct = 0;

  nn::MlpCache<T> real_cache;
  const Matrix<T> real_out = nn::mlp_forward(net.spec, net.params, real, &real_cache);
  Matrix<T> direction = Matrix<T>::Zero(net.spec.output_dim, real.cols());
  direction.row(0).setOnes();
  const Vector<T> penalty_weights = Vector<T>::Constant(real.cols(), static_cast<T>(w_gp) / n_real);
  nn::InputGradPenalty<T> gp = nn::mlp_input_grad_penalty(net.spec, net.params, real_cache, direction, penalty_weights);

  Vector<T> real_terms(real.cols());
  Matrix<T> upstream = Matrix<T>::Zero(net.spec.output_dim, real.cols());
  for (Eigen::Index c = 0; c < real.cols(); ++c) {
    const T sig = detail::sigmoid(real_out(0, c));
    const T p = std::clamp(sig, lo, hi);
    real_terms(c) = -std::log(p);
    if (p > T(0.5)) ++correct;
    if (sig > lo && sig < hi) upstream(0, c) = -(T(1) - sig) / n_real;
  }
  detail::check_finite(real_terms, "discriminator loss (real batch)");
  nn::MlpGrads<T> real_grads = nn::mlp_backward(net.spec, net.params, real_cache, upstream);

  nn::MlpCache<T> fake_cache;
  const Matrix<T> fake_out = nn::mlp_forward(net.spec, net.params, fake, &fake_cache);
  Vector<T> fake_terms(fake.cols());
  Matrix<T> fake_up = Matrix<T>::Zero(net.spec.output_dim, fake.cols());
  for (Eigen::Index c = 0; c < fake.cols(); ++c) {
    const T sig = detail::sigmoid(fake_out(0, c));
    const T p = std::clamp(sig, lo, hi);
    fake_terms(c) = -std::log(T(1) - p);
    if (p < T(0.5)) ++correct;
    if (sig > lo && sig < hi) fake_up(0, c) = sig / n_fake;
  }
  detail::check_finite(fake_terms, "discriminator loss (fake batch)");
  nn::MlpGrads<T> fake_grads = nn::mlp_backward(net.spec, net.params, fake_cache, fake_up);

  result.penalty = gp.sq_norms.mean();
  if (!std::isfinite(static_cast<double>(result.penalty)))
    throw TrainingFault("discriminator gradient penalty is non-finite");
  result.loss = real_terms.mean() + fake_terms.mean() + static_cast<T>(w_gp) * result.penalty;
  result.accuracy = static_cast<T>(correct) / (n_real + n_fake);
  result.grads = std::move(real_grads.params);
  result.grads.add_scaled(gp.params, T(1));
  result.grads.add_scaled(fake_grads.params, T(1));
  return result;
}

template <typename T>
struct EncoderLoss {
  T loss = 0;
  T score = 0;  // mean mu^T z
  nn::ParamSet<T> grads;
};

// -mean kappa mu_q(s, s')^T z.
template <typename T>
EncoderLoss<T> encoder_loss_and_grads(const DiscEncNet<T>& net, const Matrix<T>& input, const Matrix<T>& latents,
                                      double kappa) {
  const int d = net.latent_dim();
  if (input.cols() == 0) throw UsageError("encoder_loss_and_grads: empty batch");
  if (latents.rows() != d || latents.cols() != input.cols())
    throw ConfigError("encoder_loss_and_grads: latent batch shape mismatch");
  nn::MlpCache<T> cache;
  const Matrix<T> out = nn::mlp_forward(net.spec, net.params, input, &cache);
  const auto n = static_cast<T>(input.cols());
  const T k = static_cast<T>(kappa);
  Matrix<T> upstream = Matrix<T>::Zero(net.spec.output_dim, input.cols());
  T score = 0;
  for (Eigen::Index c = 0; c < input.cols(); ++c) {
    const Vector<T> raw = out.col(c).segment(1, d);
    const T norm = raw.norm();
    if (norm > T(nn::kNormalizeGuard)) {
      const Vector<T> mu = raw / norm;
      const auto z = latents.col(c);
      const T dot = mu.dot(z);
      score += dot;
      upstream.col(c).segment(1, d) = -k / n * (z - mu * dot) / norm;
    } else {
      score += latents(0, c);
    }
  }
  EncoderLoss<T> result;
  result.score = score / n;
  result.loss = -k * result.score;
  if (!std::isfinite(static_cast<double>(result.loss))) throw TrainingFault("encoder loss is non-finite");
  result.grads = nn::mlp_backward(net.spec, net.params, cache, upstream).params;
  return result;
}

// -log(1 - D) for a clamped D.
inline double style_reward(double disc_prob) { return -std::log(1.0 - disc_prob); }

// beta * kappa * mu^T z (log-normalizer of the vMF dropped).
inline double skill_reward(double mu_dot_z, double beta, double kappa) { return beta * kappa * mu_dot_z; }

inline double pretrain_reward(double disc_prob, double mu_dot_z, const PretrainHyper& hyper) {
  return style_reward(disc_prob) + skill_reward(mu_dot_z, hyper.beta, hyper.kappa);
}

struct RewardBatch {
  std::vector<double> style;
  std::vector<double> skill;
  std::vector<double> total;
  std::vector<double> enc_score;  // mu^T z
};

// Rewards for a batch of normalized transitions and their latents.
RewardBatch pretrain_rewards(const DiscEncNet<float>& net, const Matrix<float>& input, const Matrix<float>& latents,
                             const PretrainHyper& hyper);

// ---- Diversity objective --------------------------------------------------

// Minimum latent distance for a diversity pair; closer pairs are redrawn.
inline constexpr double kMinPairDistance = 1e-3;

template <typename T>
struct DiversityLoss {
  T loss = 0;
  nn::ParamSet<T> grads;
};

// Policy input: [normalized observation ; latent].
template <typename T>
Matrix<T> policy_input(const Matrix<T>& obs, const Matrix<T>& latents) {
  Matrix<T> x(obs.rows() + latents.rows(), obs.cols());
  x << obs, latents;
  return x;
}

// w_div * mean_s (KL(pi(.|s,z1) || pi(.|s,z2)) / D_z(z1, z2) - 1)^2 for
// explicit latent pairs (one column each).
template <typename T>
DiversityLoss<T> diversity_loss_and_grads(const nn::MlpSpec& policy_spec, const nn::ParamSet<T>& policy,
                                          const nn::GaussianHead& head, const Matrix<T>& obs, const Matrix<T>& z1,
                                          const Matrix<T>& z2, double w_div) {
  if (obs.cols() == 0) throw UsageError("diversity_loss_and_grads: empty batch");
  nn::MlpCache<T> c1;
  nn::MlpCache<T> c2;
  const Matrix<T> m1 = nn::mlp_forward(policy_spec, policy, policy_input(obs, z1), &c1);
  const Matrix<T> m2 = nn::mlp_forward(policy_spec, policy, policy_input(obs, z2), &c2);
  const auto n = static_cast<T>(obs.cols());
  Matrix<T> up1(m1.rows(), m1.cols());
  T total = 0;
  for (Eigen::Index c = 0; c < obs.cols(); ++c) {
    const T dz = static_cast<T>(0.5) * (T(1) - z1.col(c).dot(z2.col(c)));
    const T kl = nn::gaussian_kl<T>(m1.col(c), m2.col(c), head);
    const T err = kl / dz - T(1);
    total += err * err;
    const T coeff = static_cast<T>(w_div) / n * T(2) * err / dz;
    for (int i = 0; i < head.dim(); ++i)
      up1(i, c) = coeff * (m1(i, c) - m2(i, c)) / static_cast<T>(head.variance[i]);
  }
  DiversityLoss<T> result;
  result.loss = static_cast<T>(w_div) * total / n;
  if (!std::isfinite(static_cast<double>(result.loss))) throw TrainingFault("diversity loss is non-finite");
  result.grads = nn::mlp_backward(policy_spec, policy, c1, up1).params;
  const Matrix<T> up2 = -up1;
  result.grads.add_scaled(nn::mlp_backward(policy_spec, policy, c2, up2).params, T(1));
  return result;
}

// Draws two prior latents per state (redrawing pairs closer than
// kMinPairDistance) and evaluates the diversity loss.
template <typename T>
DiversityLoss<T> diversity_loss_and_grads(const nn::MlpSpec& policy_spec, const nn::ParamSet<T>& policy,
                                          const nn::GaussianHead& head, const Matrix<T>& obs, int latent_dim, Rng& rng,
                                          double w_div) {
  Matrix<T> z1(latent_dim, obs.cols());
  Matrix<T> z2(latent_dim, obs.cols());
  for (Eigen::Index c = 0; c < obs.cols(); ++c) {
    while (true) {
      const latent::LatentSkill a = latent::sample_prior(rng, latent_dim);
      const latent::LatentSkill b = latent::sample_prior(rng, latent_dim);
      if (latent::latent_distance(a, b) < kMinPairDistance) continue;
      z1.col(c) = a.z().cast<T>();
      z2.col(c) = b.z().cast<T>();
      break;
    }
  }
  return diversity_loss_and_grads(policy_spec, policy, head, obs, z1, z2, w_div);
}

}  // namespace ase::core
