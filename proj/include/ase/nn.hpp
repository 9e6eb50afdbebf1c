#pragma once

// Dense ReLU networks with exact backward passes, a double-backward pass for
// input-gradient penalties, diagonal Gaussian heads and Adam.
//
// Batches are stored column-wise: an input batch is (input_dim x batch).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "ase/errors.hpp"
#include "ase/rng.hpp"

namespace ase::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class OutputActivation { kLinear, kSigmoid, kUnitNormalize };

const char* to_string(OutputActivation act);
OutputActivation output_activation_from_string(const std::string& name);

// Hidden layers always use ReLU.
struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int output_dim = 0;
  OutputActivation output_activation = OutputActivation::kLinear;

  void validate() const;
  int num_layers() const { return static_cast<int>(hidden_dims.size()) + 1; }
  int layer_input_dim(int layer) const { return layer == 0 ? input_dim : hidden_dims[layer - 1]; }
  int layer_output_dim(int layer) const {
    return layer == num_layers() - 1 ? output_dim : hidden_dims[layer];
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

// Unit-normalize heads fall back to this axis when the raw output is zero.
inline constexpr double kNormalizeGuard = 1e-12;

template <typename T>
struct ParamArray {
  std::string name;
  Matrix<T> values;  // vectors (biases) are stored as n x 1
  bool is_vector = false;

  std::vector<std::size_t> shape() const {
    if (is_vector) return {static_cast<std::size_t>(values.rows())};
    return {static_cast<std::size_t>(values.rows()), static_cast<std::size_t>(values.cols())};
  }
  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
};

// Ordered collection of named parameter arrays.
template <typename T>
class ParamSet {
 public:
  ParamSet() = default;

  void add(std::string name, Matrix<T> values, bool is_vector) {
    arrays_.push_back({std::move(name), std::move(values), is_vector});
  }

  std::size_t count() const { return arrays_.size(); }
  ParamArray<T>& operator[](std::size_t i) { return arrays_[i]; }
  const ParamArray<T>& operator[](std::size_t i) const { return arrays_[i]; }
  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }
  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += a.size();
    return n;
  }

  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& a : arrays_) out.add(a.name, Matrix<T>::Zero(a.values.rows(), a.values.cols()), a.is_vector);
    return out;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& a : arrays_) out.add(a.name, a.values.template cast<U>(), a.is_vector);
    return out;
  }

  bool same_layout(const ParamSet& other) const {
    if (other.count() != count()) return false;
    for (std::size_t i = 0; i < count(); ++i) {
      if (arrays_[i].name != other.arrays_[i].name || arrays_[i].values.rows() != other.arrays_[i].values.rows() ||
          arrays_[i].values.cols() != other.arrays_[i].values.cols())
        return false;
    }
    return true;
  }

  // this += scale * other
  void add_scaled(const ParamSet& other, T scale) {
    for (std::size_t i = 0; i < count(); ++i) arrays_[i].values += scale * other.arrays_[i].values;
  }

  std::vector<T> flatten() const {
    std::vector<T> out;
    out.reserve(total_size());
    for (const auto& a : arrays_) out.insert(out.end(), a.values.data(), a.values.data() + a.values.size());
    return out;
  }

  // Flat element access across all arrays (column-major within an array).
  T& flat(std::size_t index) {
    for (auto& a : arrays_) {
      if (index < a.size()) return a.values.data()[index];
      index -= a.size();
    }
    throw UsageError("flat parameter index out of range");
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t i = 0; i < a.count(); ++i)
      if (a.arrays_[i].values != b.arrays_[i].values) return false;
    return true;
  }

 private:
  std::vector<ParamArray<T>> arrays_;
};

// Hidden weights ~ U(+-sqrt(6/(fan_in+fan_out))), biases zero; the output
// layer's weights are multiplied by `output_scale`.
template <typename T>
ParamSet<T> init_mlp(const MlpSpec& spec, const std::string& prefix, Rng& rng, double output_scale = 1.0) {
  spec.validate();
  ParamSet<T> params;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int in = spec.layer_input_dim(l);
    const int out = spec.layer_output_dim(l);
    const double limit = std::sqrt(6.0 / (in + out));
    const double scale = (l == spec.num_layers() - 1) ? output_scale : 1.0;
    Matrix<T> w(out, in);
    for (int c = 0; c < in; ++c)
      for (int r = 0; r < out; ++r) w(r, c) = static_cast<T>(scale * rng.uniform(-limit, limit));
    params.add(prefix + "." + std::to_string(l) + ".weight", std::move(w), false);
    params.add(prefix + "." + std::to_string(l) + ".bias", Matrix<T>::Zero(out, 1), true);
  }
  return params;
}

template <typename T>
void check_mlp_params(const MlpSpec& spec, const ParamSet<T>& params) {
  if (params.count() != static_cast<std::size_t>(2 * spec.num_layers()))
    throw ConfigError("parameter set does not match network spec (array count)");
  for (int l = 0; l < spec.num_layers(); ++l) {
    const auto& w = params[2 * l].values;
    const auto& b = params[2 * l + 1].values;
    if (w.rows() != spec.layer_output_dim(l) || w.cols() != spec.layer_input_dim(l) ||
        b.rows() != spec.layer_output_dim(l) || b.cols() != 1)
      throw ConfigError("parameter '" + params[2 * l].name + "' does not match network spec");
  }
}

template <typename T>
struct MlpCache {
  Matrix<T> input;
  std::vector<Matrix<T>> hidden;  // post-ReLU activations per hidden layer
  Matrix<T> raw_output;           // before the output activation
  Matrix<T> output;

  bool empty() const { return input.size() == 0; }
};

namespace detail {

template <typename T>
void apply_output_activation(OutputActivation act, const Matrix<T>& raw, Matrix<T>& out) {
  switch (act) {
    case OutputActivation::kLinear:
      out = raw;
      return;
    case OutputActivation::kSigmoid:
      out = raw.unaryExpr([](T x) { return T(1) / (T(1) + std::exp(-x)); });
      return;
    case OutputActivation::kUnitNormalize:
      out.resize(raw.rows(), raw.cols());
      for (Eigen::Index c = 0; c < raw.cols(); ++c) {
        const T norm = raw.col(c).norm();
        if (norm > T(kNormalizeGuard)) {
          out.col(c) = raw.col(c) / norm;
        } else {
          out.col(c).setZero();
          out(0, c) = T(1);
        }
      }
      return;
  }
}

}  // namespace detail

template <typename T>
Matrix<T> mlp_forward(const MlpSpec& spec, const ParamSet<T>& params, const Matrix<T>& input,
                      MlpCache<T>* cache = nullptr) {
  if (input.rows() != spec.input_dim)
    throw ConfigError("mlp_forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                      std::to_string(spec.input_dim));
  check_mlp_params(spec, params);
  const int layers = spec.num_layers();
  Matrix<T> h = input;
  if (cache) {
    cache->input = input;
    cache->hidden.clear();
  }
  for (int l = 0; l < layers - 1; ++l) {
    Matrix<T> a = params[2 * l].values * h;
    a.colwise() += params[2 * l + 1].values.col(0);
    h = a.cwiseMax(T(0));
    if (cache) cache->hidden.push_back(h);
  }
  Matrix<T> raw = params[2 * (layers - 1)].values * h;
  raw.colwise() += params[2 * (layers - 1) + 1].values.col(0);
  Matrix<T> out;
  detail::apply_output_activation(spec.output_activation, raw, out);
  if (cache) {
    cache->raw_output = std::move(raw);
    cache->output = out;
  }
  return out;
}

template <typename T>
Vector<T> mlp_forward(const MlpSpec& spec, const ParamSet<T>& params, const Vector<T>& input) {
  return mlp_forward(spec, params, Matrix<T>(input)).col(0);
}

template <typename T>
struct MlpGrads {
  ParamSet<T> params;
  Matrix<T> input;
};

// Backpropagates `upstream` (gradient w.r.t. the activated output, same shape
// as the output batch). Parameter gradients are summed over the batch.
template <typename T>
MlpGrads<T> mlp_backward(const MlpSpec& spec, const ParamSet<T>& params, const MlpCache<T>& cache,
                         const Matrix<T>& upstream) {
  if (cache.empty()) throw UsageError("mlp_backward called without a forward cache");
  if (upstream.rows() != spec.output_dim || upstream.cols() != cache.output.cols())
    throw UsageError("mlp_backward: upstream gradient shape does not match cached forward pass");
  const int layers = spec.num_layers();

  Matrix<T> delta;  // gradient w.r.t. the raw output
  switch (spec.output_activation) {
    case OutputActivation::kLinear:
      delta = upstream;
      break;
    case OutputActivation::kSigmoid:
      delta = upstream.cwiseProduct(cache.output.cwiseProduct((T(1) - cache.output.array()).matrix()));
      break;
    case OutputActivation::kUnitNormalize:
      delta.resize(upstream.rows(), upstream.cols());
      for (Eigen::Index c = 0; c < upstream.cols(); ++c) {
        const T norm = cache.raw_output.col(c).norm();
        if (norm > T(kNormalizeGuard)) {
          const auto y = cache.output.col(c);
          delta.col(c) = (upstream.col(c) - y * y.dot(upstream.col(c))) / norm;
        } else {
          delta.col(c).setZero();
        }
      }
      break;
  }

  MlpGrads<T> grads{params.zeros_like(), {}};
  for (int l = layers - 1; l >= 0; --l) {
    const Matrix<T>& layer_in = (l == 0) ? cache.input : cache.hidden[l - 1];
    grads.params[2 * l].values.noalias() = delta * layer_in.transpose();
    grads.params[2 * l + 1].values = delta.rowwise().sum();
    Matrix<T> back = params[2 * l].values.transpose() * delta;
    if (l > 0) {
      const Matrix<T>& h = cache.hidden[l - 1];
      delta = back.cwiseProduct(h.unaryExpr([](T v) { return v > T(0) ? T(1) : T(0); }));
    } else {
      grads.input = std::move(back);
    }
  }
  return grads;
}

template <typename T>
struct InputGradPenalty {
  Matrix<T> input_grads;  // d(direction . raw_output)/d(input), per sample
  Vector<T> sq_norms;     // squared norm of each column of input_grads
  ParamSet<T> params;     // d(sum_n weight_n * sq_norm_n)/d(params)
};

// Double-backward pass: for each sample n the scalar f_n = direction_n . raw_out_n
// has input gradient g_n = W0^T M0 W1^T ... W_L^T direction_n (M = ReLU masks).
// Returns g_n, |g_n|^2 and the parameter gradient of sum_n weight_n |g_n|^2.
// ReLU masks are piecewise constant, so they carry no second-order term.
template <typename T>
InputGradPenalty<T> mlp_input_grad_penalty(const MlpSpec& spec, const ParamSet<T>& params,
                                           const MlpCache<T>& cache, const Matrix<T>& direction,
                                           const Vector<T>& weights) {
  if (cache.empty()) throw UsageError("mlp_input_grad_penalty called without a forward cache");
  const Eigen::Index batch = cache.input.cols();
  if (direction.rows() != spec.output_dim || direction.cols() != batch || weights.size() != batch)
    throw UsageError("mlp_input_grad_penalty: direction/weights shape mismatch");
  const int layers = spec.num_layers();

  // First backward: g_a[l] is the gradient of f w.r.t. layer l's pre-activation
  // (g_a[L-1] = direction); g_x is the input gradient.
  std::vector<Matrix<T>> masks(layers - 1);
  for (int l = 0; l < layers - 1; ++l)
    masks[l] = cache.hidden[l].unaryExpr([](T v) { return v > T(0) ? T(1) : T(0); });

  std::vector<Matrix<T>> g_a(layers);
  g_a[layers - 1] = direction;
  for (int l = layers - 1; l > 0; --l)
    g_a[l - 1] = (params[2 * l].values.transpose() * g_a[l]).cwiseProduct(masks[l - 1]);
  Matrix<T> g_x = params[0].values.transpose() * g_a[0];

  InputGradPenalty<T> result;
  result.sq_norms = g_x.colwise().squaredNorm().transpose();
  result.params = params.zeros_like();

  // Reverse pass over the backward graph. Adjoint of g_x is 2 * weight_n * g_x.
  Matrix<T> adj = g_x * (T(2) * weights).asDiagonal();
  for (int l = 0; l < layers; ++l) {
    // g_in(l) = W_l^T g_a[l]  =>  dW_l += g_a[l] adj^T,  adj(g_a[l]) = W_l adj
    result.params[2 * l].values.noalias() = g_a[l] * adj.transpose();
    if (l == layers - 1) break;
    adj = (params[2 * l].values * adj).eval();
    // g_a[l] = mask_l (.) (W_{l+1}^T g_a[l+1])
    adj = adj.cwiseProduct(masks[l]);
  }
  result.input_grads = std::move(g_x);
  return result;
}

// ---- Gaussian heads -------------------------------------------------------

// Diagonal Gaussian with fixed, state-independent variance.
struct GaussianHead {
  std::vector<double> variance;

  explicit GaussianHead(std::vector<double> var = {}) : variance(std::move(var)) {
    for (double v : variance)
      if (!(v > 0.0)) throw ConfigError("Gaussian head variance must be positive");
  }
  static GaussianHead isotropic(int dim, double var) {
    return GaussianHead(std::vector<double>(static_cast<std::size_t>(dim), var));
  }
  int dim() const { return static_cast<int>(variance.size()); }
  double log_normalizer() const {
    double s = 0.0;
    for (double v : variance) s += std::log(2.0 * std::numbers::pi * v);
    return -0.5 * s;
  }
};

template <typename T, typename DerivedMean, typename DerivedX>
T gaussian_logprob(const GaussianHead& head, const Eigen::MatrixBase<DerivedMean>& mean,
                   const Eigen::MatrixBase<DerivedX>& x) {
  if (mean.size() != head.dim() || x.size() != head.dim())
    throw ConfigError("gaussian_logprob: dimension mismatch");
  double quad = 0.0;
  for (int i = 0; i < head.dim(); ++i) {
    const double d = static_cast<double>(x(i)) - static_cast<double>(mean(i));
    quad += d * d / head.variance[i];
  }
  return static_cast<T>(-0.5 * quad + head.log_normalizer());
}

// Per-column log-densities.
template <typename T>
Vector<T> gaussian_logprob_batch(const GaussianHead& head, const Matrix<T>& mean, const Matrix<T>& x) {
  if (mean.rows() != head.dim() || x.rows() != head.dim() || mean.cols() != x.cols())
    throw ConfigError("gaussian_logprob_batch: dimension mismatch");
  Vector<T> out(mean.cols());
  for (Eigen::Index c = 0; c < mean.cols(); ++c) out(c) = gaussian_logprob<T>(head, mean.col(c), x.col(c));
  return out;
}

// d logp / d mean = (x - mean) / var, per column.
template <typename T>
Matrix<T> gaussian_logprob_grad_mean(const GaussianHead& head, const Matrix<T>& mean, const Matrix<T>& x) {
  Matrix<T> g = x - mean;
  for (int i = 0; i < head.dim(); ++i) g.row(i) /= static_cast<T>(head.variance[i]);
  return g;
}

// KL between two Gaussians sharing the same diagonal variance:
// sum_i (m1_i - m2_i)^2 / (2 var_i).
template <typename T, typename D1, typename D2>
T gaussian_kl(const Eigen::MatrixBase<D1>& mean1, const Eigen::MatrixBase<D2>& mean2,
              const GaussianHead& shared) {
  if (mean1.size() != shared.dim() || mean2.size() != shared.dim())
    throw ConfigError("gaussian_kl: dimension mismatch");
  T kl = T(0);
  for (int i = 0; i < shared.dim(); ++i) {
    const T d = mean1(i) - mean2(i);
    kl += d * d / static_cast<T>(2.0 * shared.variance[i]);
  }
  return kl;
}

// ---- Adam -----------------------------------------------------------------

struct AdamConfig {
  double stepsize = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  ParamSet<T> first_moment;
  ParamSet<T> second_moment;
  std::int64_t step_count = 0;
};

template <typename T>
AdamState<T> make_adam(const ParamSet<T>& params, AdamConfig config) {
  return AdamState<T>{config, params.zeros_like(), params.zeros_like(), 0};
}

template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state) {
  if (!params.same_layout(grads) || !params.same_layout(state.first_moment) ||
      !params.same_layout(state.second_moment))
    throw ConfigError("adam_step: parameter, gradient and moment shapes differ");
  for (const auto& g : grads)
    if (!g.values.allFinite()) throw OptimizationError("non-finite gradient in '" + g.name + "'");

  const auto& cfg = state.config;
  const std::int64_t t = state.step_count + 1;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.stepsize / bias1);
  const T inv_bias2 = static_cast<T>(1.0 / bias2);
  const T eps = static_cast<T>(cfg.epsilon);
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& m = state.first_moment[i].values;
    auto& v = state.second_moment[i].values;
    const auto& g = grads[i].values;
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    params[i].values.array() -= step * m.array() / ((v.array() * inv_bias2).sqrt() + eps);
  }
  state.step_count = t;
}

}  // namespace ase::nn
