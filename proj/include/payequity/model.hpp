#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "payequity/errors.hpp"
#include "payequity/io.hpp"
#include "payequity/workforce.hpp"

namespace payequity {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Prior scales. Population means get Normal(0, hyperprior_mu_scale),
/// population scales and the residual scale get half-Normal priors, fixed
/// effects get Normal(0, fixed_effect_prior_scales[k]).
struct ModelSpec {
  double hyperprior_mu_scale = 5.0;
  double hyperprior_sigma_scale = 1.0;
  std::array<double, 3> fixed_effect_prior_scales{1.0, 1.0, 0.001};
  double residual_sigma_prior_scale = 1.0;

  void validate() const;
};

/// Keys: hyperprior_mu_scale, hyperprior_sigma_scale, beta2_prior_scale,
/// beta3_prior_scale, beta4_prior_scale, residual_sigma_prior_scale.
/// Unknown keys are rejected.
ModelSpec model_spec_from_key_values(const io::KeyValues& kv);
ModelSpec load_model_spec(const std::filesystem::path& path);
/// Applies only the model keys present in `kv` on top of `spec` and erases
/// them from `kv`, leaving foreign keys for the caller to judge.
void apply_model_spec_keys(io::KeyValues& kv, ModelSpec& spec);
io::KeyValues to_key_values(const ModelSpec& spec);

/// Position of each named block inside the flat parameter vector. The same
/// block order is used for the unconstrained state and for natural-scale
/// draws.
struct ParamLayout {
  enum Block {
    ZInterceptG,
    ZSlopeG,
    ZInterceptJ,
    ZSlopeJ,
    HyperMu,
    HyperLogSigma,
    Fixed,
    LogSigmaResid,
    NumBlocks
  };

  int G = 0;
  int J = 0;

  int offset(Block b) const;
  int size(Block b) const;
  int dimension() const { return 2 * G + 2 * J + 12; }
  int latent_count() const { return 2 * G + 2 * J; }

  /// Names of the unconstrained coordinates (z0_g[0], ..., log_sigma_resid).
  std::vector<std::string> unconstrained_names() const;
  /// Names of the natural-scale parameters (beta0_g[0], ..., sigma_resid).
  std::vector<std::string> natural_names() const;
};

/// Indices inside HyperMu / HyperLogSigma.
enum HyperSlot { Intercept_g = 0, Slope_g = 1, Intercept_j = 2, Slope_j = 3 };

struct ParameterCount {
  int total = 0;            // natural-scale parameters
  int non_centered = 0;     // standard-normal latents
  int hyperparameters = 0;  // population means and scales
  int fixed_effects = 0;
  int residual = 0;
};

ParamLayout build_layout(const FactorIndex& index);
ParameterCount count_parameters(const ParamLayout& layout);

/// Natural-scale view of a parameter vector.
template <typename Scalar>
struct NaturalParams {
  VectorX<Scalar> beta0_g, beta1_g, beta0_j, beta1_j;
  std::array<Scalar, 4> mu{};
  std::array<Scalar, 4> sigma{};
  Scalar beta2{0}, beta3{0}, beta4{0};
  Scalar sigma_resid{1};

  /// Natural-scale vector in ParamLayout block order.
  VectorX<Scalar> flatten() const {
    const Eigen::Index G = beta0_g.size(), J = beta0_j.size();
    VectorX<Scalar> out(2 * G + 2 * J + 12);
    out << beta0_g, beta1_g, beta0_j, beta1_j, mu[0], mu[1], mu[2], mu[3],
        sigma[0], sigma[1], sigma[2], sigma[3], beta2, beta3, beta4, sigma_resid;
    return out;
  }

  template <typename Derived>
  static NaturalParams unflatten(const Eigen::MatrixBase<Derived>& flat,
                                 const ParamLayout& layout) {
    NaturalParams p;
    const int G = layout.G, J = layout.J;
    p.beta0_g = flat.segment(0, G);
    p.beta1_g = flat.segment(G, G);
    p.beta0_j = flat.segment(2 * G, J);
    p.beta1_j = flat.segment(2 * G + J, J);
    const int h = 2 * G + 2 * J;
    for (int k = 0; k < 4; ++k) {
      p.mu[k] = flat(h + k);
      p.sigma[k] = flat(h + 4 + k);
    }
    p.beta2 = flat(h + 8);
    p.beta3 = flat(h + 9);
    p.beta4 = flat(h + 10);
    p.sigma_resid = flat(h + 11);
    return p;
  }
};

/// Non-centered transform: effect = mu + exp(log_sigma) * z per block.
template <typename Derived>
NaturalParams<typename Derived::Scalar> to_natural(
    const Eigen::MatrixBase<Derived>& v, const ParamLayout& layout) {
  using Scalar = typename Derived::Scalar;
  using L = ParamLayout;
  if (v.size() != layout.dimension()) {
    throw PreconditionError("parameter vector does not match layout");
  }
  NaturalParams<Scalar> p;
  const auto mu = v.segment(layout.offset(L::HyperMu), 4);
  const auto log_sigma = v.segment(layout.offset(L::HyperLogSigma), 4);
  for (int k = 0; k < 4; ++k) {
    p.mu[k] = mu(k);
    p.sigma[k] = std::exp(log_sigma(k));
  }
  auto effect = [&](L::Block block, int slot) {
    return VectorX<Scalar>(
        (v.segment(layout.offset(block), layout.size(block)).array() *
             p.sigma[slot] +
         p.mu[slot])
            .matrix());
  };
  p.beta0_g = effect(L::ZInterceptG, Intercept_g);
  p.beta1_g = effect(L::ZSlopeG, Slope_g);
  p.beta0_j = effect(L::ZInterceptJ, Intercept_j);
  p.beta1_j = effect(L::ZSlopeJ, Slope_j);
  const int f = layout.offset(L::Fixed);
  p.beta2 = v(f);
  p.beta3 = v(f + 1);
  p.beta4 = v(f + 2);
  p.sigma_resid = std::exp(v(layout.offset(L::LogSigmaResid)));
  return p;
}

/// Linear predictor for one worker at its recorded gender, or at
/// `female_override` when given.
template <typename Scalar>
Scalar predict_log_salary(const NaturalParams<Scalar>& p, const WorkerRecord& w,
                          int g, int j,
                          std::optional<bool> female_override = std::nullopt) {
  if (g < 0 || g >= p.beta0_g.size() || j < 0 || j >= p.beta0_j.size()) {
    throw PreconditionError("group index out of range");
  }
  const Scalar f = female_override.value_or(w.female) ? Scalar(1) : Scalar(0);
  return p.beta0_g(g) + p.beta0_j(j) + f * (p.beta1_g(g) + p.beta1_j(j)) +
         p.beta2 * w.recent_perf + p.beta3 * w.past_perf +
         p.beta4 * w.time_in_job;
}

/// Column-oriented copy of the fields the likelihood touches.
struct ModelData {
  Eigen::VectorXd y;
  Eigen::VectorXd female;                     // 0/1
  Eigen::Matrix<double, Eigen::Dynamic, 3> X;  // recent, past, time_in_job
  std::vector<int> g;
  std::vector<int> j;
  int G = 0;
  int J = 0;

  Eigen::Index size() const { return y.size(); }
};

ModelData make_model_data(const std::vector<WorkerRecord>& records,
                          const FactorIndex& index);

/// Log posterior density with every normalizing constant retained:
/// Gaussian likelihood, standard-normal latents, Normal hyper means,
/// half-Normal scales with exp-transform Jacobians, Normal fixed effects.
/// Throws NumericError naming the block that went non-finite.
double log_posterior(const Eigen::VectorXd& v, const ModelData& data,
                     const ParamLayout& layout, const ModelSpec& spec);

/// Analytic gradient of log_posterior.
Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd& v,
                                   const ModelData& data,
                                   const ParamLayout& layout,
                                   const ModelSpec& spec);

/// Value and gradient in one pass; `grad` is resized as needed.
double log_posterior_and_gradient(const Eigen::VectorXd& v,
                                  const ModelData& data,
                                  const ParamLayout& layout,
                                  const ModelSpec& spec, Eigen::VectorXd& grad);

/// Bundles data, layout and priors into a log-density functor for the
/// sampler.
class HierarchicalModel {
public:
  HierarchicalModel(ModelData data, ModelSpec spec);

  double operator()(const Eigen::VectorXd& v, Eigen::VectorXd& grad) const {
    return log_posterior_and_gradient(v, data_, layout_, spec_, grad);
  }

  const ModelData& data() const { return data_; }
  const ParamLayout& layout() const { return layout_; }
  const ModelSpec& spec() const { return spec_; }
  int dimension() const { return layout_.dimension(); }

private:
  ModelData data_;
  ModelSpec spec_;
  ParamLayout layout_;
};

}  // namespace payequity
