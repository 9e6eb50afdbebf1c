#include "ase/asecore.hpp"

namespace ase::core {

void PretrainHyper::validate() const {
  if (beta < 0 || w_gp < 0 || w_div < 0) throw ConfigError("beta, w_gp and w_div must be >= 0");
  if (!(kappa > 0)) throw ConfigError("kappa must be > 0");
  if (!(clamp_eps > 0 && clamp_eps < 0.5)) throw ConfigError("clamp_eps must lie in (0, 0.5)");
  if (latent_dim < 2) throw ConfigError("latent_dim must be >= 2");
}

nn::MlpSpec disc_enc_spec(int obs_dim, int latent_dim, const std::vector<int>& hidden) {
  nn::MlpSpec spec;
  spec.input_dim = 2 * obs_dim;
  spec.hidden_dims = hidden;
  spec.output_dim = 1 + latent_dim;
  spec.output_activation = nn::OutputActivation::kLinear;
  spec.validate();
  return spec;
}

RewardBatch pretrain_rewards(const DiscEncNet<float>& net, const Matrix<float>& input, const Matrix<float>& latents,
                             const PretrainHyper& hyper) {
  const Matrix<float> out = nn::mlp_forward(net.spec, net.params, input);
  const int d = net.latent_dim();
  if (latents.rows() != d || latents.cols() != input.cols())
    throw ConfigError("pretrain_rewards: latent batch shape mismatch");
  RewardBatch r;
  const auto n = static_cast<std::size_t>(input.cols());
  r.style.resize(n);
  r.skill.resize(n);
  r.total.resize(n);
  r.enc_score.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    const double logit = out(0, col);
    const double p = std::clamp(1.0 / (1.0 + std::exp(-logit)), hyper.clamp_eps, 1.0 - hyper.clamp_eps);
    const Eigen::VectorXd raw = out.col(col).segment(1, d).cast<double>();
    const double norm = raw.norm();
    double dot = 0.0;
    if (norm > nn::kNormalizeGuard)
      dot = raw.dot(latents.col(col).cast<double>()) / norm;
    else
      dot = latents(0, col);
    r.style[c] = style_reward(p);
    r.skill[c] = skill_reward(dot, hyper.beta, hyper.kappa);
    r.enc_score[c] = dot;
    r.total[c] = r.style[c] + r.skill[c];
    if (!std::isfinite(r.total[c]))
      throw TrainingFault("pretrain reward is non-finite at batch index " + std::to_string(c));
  }
  return r;
}

}  // namespace ase::core
