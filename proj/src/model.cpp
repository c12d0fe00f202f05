#include "payequity/model.hpp"

#include <numbers>

namespace payequity {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2*pi)

double normal_lpdf(double x, double scale) {
  const double u = x / scale;
  return -kHalfLog2Pi - std::log(scale) - 0.5 * u * u;
}

double half_normal_lpdf(double x, double scale) {
  return std::numbers::ln2 + normal_lpdf(x, scale);
}

const char* block_name(ParamLayout::Block b) {
  switch (b) {
    case ParamLayout::ZInterceptG: return "z_intercept_g";
    case ParamLayout::ZSlopeG: return "z_slope_g";
    case ParamLayout::ZInterceptJ: return "z_intercept_j";
    case ParamLayout::ZSlopeJ: return "z_slope_j";
    case ParamLayout::HyperMu: return "hyper_mu";
    case ParamLayout::HyperLogSigma: return "hyper_log_sigma";
    case ParamLayout::Fixed: return "fixed";
    case ParamLayout::LogSigmaResid: return "log_sigma_resid";
    default: return "unknown";
  }
}

void require_finite(double value, const std::string& block) {
  if (!std::isfinite(value)) {
    throw NumericError(block, "log posterior is non-finite in block `" + block + "`");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelSpec::validate() const {
  const bool ok = hyperprior_mu_scale > 0 && hyperprior_sigma_scale > 0 &&
                  fixed_effect_prior_scales[0] > 0 &&
                  fixed_effect_prior_scales[1] > 0 &&
                  fixed_effect_prior_scales[2] > 0 &&
                  residual_sigma_prior_scale > 0;
  if (!ok) throw ConfigError("all model prior scales must be > 0");
}

void apply_model_spec_keys(io::KeyValues& kv, ModelSpec& spec) {
  const std::pair<const char*, double*> slots[] = {
      {"hyperprior_mu_scale", &spec.hyperprior_mu_scale},
      {"hyperprior_sigma_scale", &spec.hyperprior_sigma_scale},
      {"beta2_prior_scale", &spec.fixed_effect_prior_scales[0]},
      {"beta3_prior_scale", &spec.fixed_effect_prior_scales[1]},
      {"beta4_prior_scale", &spec.fixed_effect_prior_scales[2]},
      {"residual_sigma_prior_scale", &spec.residual_sigma_prior_scale},
  };
  for (const auto& [key, slot] : slots) {
    auto it = kv.find(key);
    if (it == kv.end()) continue;
    const auto value = io::parse_double(it->second);
    if (!value) throw ConfigError(std::string("`") + key + "` is not a number");
    *slot = *value;
    kv.erase(it);
  }
  spec.validate();
}

ModelSpec model_spec_from_key_values(const io::KeyValues& kv) {
  ModelSpec spec;
  io::KeyValues rest = kv;
  apply_model_spec_keys(rest, spec);
  if (!rest.empty()) {
    throw ConfigError("unknown model key `" + rest.begin()->first + "`");
  }
  return spec;
}

ModelSpec load_model_spec(const std::filesystem::path& path) {
  return model_spec_from_key_values(io::read_key_values(path));
}

io::KeyValues to_key_values(const ModelSpec& spec) {
  return {
      {"hyperprior_mu_scale", io::format_double(spec.hyperprior_mu_scale)},
      {"hyperprior_sigma_scale", io::format_double(spec.hyperprior_sigma_scale)},
      {"beta2_prior_scale", io::format_double(spec.fixed_effect_prior_scales[0])},
      {"beta3_prior_scale", io::format_double(spec.fixed_effect_prior_scales[1])},
      {"beta4_prior_scale", io::format_double(spec.fixed_effect_prior_scales[2])},
      {"residual_sigma_prior_scale",
       io::format_double(spec.residual_sigma_prior_scale)},
  };
}

// ---------------------------------------------------------------------------

int ParamLayout::size(Block b) const {
  switch (b) {
    case ZInterceptG:
    case ZSlopeG: return G;
    case ZInterceptJ:
    case ZSlopeJ: return J;
    case HyperMu:
    case HyperLogSigma: return 4;
    case Fixed: return 3;
    case LogSigmaResid: return 1;
    default: return 0;
  }
}

int ParamLayout::offset(Block b) const {
  int off = 0;
  for (int k = 0; k < b; ++k) off += size(static_cast<Block>(k));
  return off;
}

std::vector<std::string> ParamLayout::unconstrained_names() const {
  std::vector<std::string> names;
  names.reserve(dimension());
  auto block = [&](const char* name, int n) {
    for (int k = 0; k < n; ++k) {
      names.push_back(std::string(name) + "[" + std::to_string(k) + "]");
    }
  };
  block("z0_g", G);
  block("z1_g", G);
  block("z0_j", J);
  block("z1_j", J);
  for (const char* n : {"mu0_g", "mu1_g", "mu0_j", "mu1_j", "log_sigma0_g",
                        "log_sigma1_g", "log_sigma0_j", "log_sigma1_j", "beta2",
                        "beta3", "beta4", "log_sigma_resid"}) {
    names.emplace_back(n);
  }
  return names;
}

std::vector<std::string> ParamLayout::natural_names() const {
  std::vector<std::string> names;
  names.reserve(dimension());
  auto block = [&](const char* name, int n) {
    for (int k = 0; k < n; ++k) {
      names.push_back(std::string(name) + "[" + std::to_string(k) + "]");
    }
  };
  block("beta0_g", G);
  block("beta1_g", G);
  block("beta0_j", J);
  block("beta1_j", J);
  for (const char* n : {"mu0_g", "mu1_g", "mu0_j", "mu1_j", "sigma0_g",
                        "sigma1_g", "sigma0_j", "sigma1_j", "beta2", "beta3",
                        "beta4", "sigma_resid"}) {
    names.emplace_back(n);
  }
  return names;
}

ParamLayout build_layout(const FactorIndex& index) {
  ParamLayout layout;
  layout.G = index.num_gjs_geo();
  layout.J = index.num_job_geo();
  if (layout.G < 1 || layout.J < 1) {
    throw PreconditionError("layout needs at least one GJS-geo and one job-geo");
  }
  return layout;
}

ParameterCount count_parameters(const ParamLayout& layout) {
  ParameterCount c;
  c.non_centered = layout.latent_count();
  c.hyperparameters = 8;
  c.fixed_effects = 3;
  c.residual = 1;
  c.total = c.non_centered + c.hyperparameters + c.fixed_effects + c.residual;
  return c;
}

// ---------------------------------------------------------------------------

ModelData make_model_data(const std::vector<WorkerRecord>& records,
                          const FactorIndex& index) {
  if (index.num_workers() != records.size()) {
    throw PreconditionError("factor index was not built from these records");
  }
  const auto n = static_cast<Eigen::Index>(records.size());
  ModelData d;
  d.y.resize(n);
  d.female.resize(n);
  d.X.resize(n, 3);
  d.g = index.g_of;
  d.j = index.j_of;
  d.G = index.num_gjs_geo();
  d.J = index.num_job_geo();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[i];
    d.y(i) = r.log_salary;
    d.female(i) = r.female ? 1.0 : 0.0;
    d.X.row(i) << r.recent_perf, r.past_perf, r.time_in_job;
  }
  return d;
}

namespace {

// Shared body of the value-only and value+gradient entry points.
double evaluate(const Eigen::VectorXd& v, const ModelData& data,
                const ParamLayout& layout, const ModelSpec& spec,
                Eigen::VectorXd* grad) {
  using L = ParamLayout;
  if (v.size() != layout.dimension() || data.G != layout.G ||
      data.J != layout.J) {
    throw PreconditionError("parameter vector, layout and data disagree");
  }
  const auto p = to_natural(v, layout);
  const int G = layout.G, J = layout.J;

  // (a) likelihood. Residuals scaled by 1/sigma^2 are accumulated per group
  // for the gradient.
  const double sigma = p.sigma_resid;
  const double inv_var = 1.0 / (sigma * sigma);
  Eigen::VectorXd a_g = Eigen::VectorXd::Zero(G), b_g = Eigen::VectorXd::Zero(G);
  Eigen::VectorXd a_j = Eigen::VectorXd::Zero(J), b_j = Eigen::VectorXd::Zero(J);
  Eigen::Vector3d x_score = Eigen::Vector3d::Zero();
  double sum_sq = 0.0;
  const Eigen::Index n = data.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const int g = data.g[i], j = data.j[i];
    const double f = data.female(i);
    const double eta = p.beta0_g(g) + p.beta0_j(j) +
                       f * (p.beta1_g(g) + p.beta1_j(j)) +
                       p.beta2 * data.X(i, 0) + p.beta3 * data.X(i, 1) +
                       p.beta4 * data.X(i, 2);
    const double r = data.y(i) - eta;
    sum_sq += r * r;
    if (grad) {
      const double e = r * inv_var;
      a_g(g) += e;
      b_g(g) += f * e;
      a_j(j) += e;
      b_j(j) += f * e;
      x_score += e * data.X.row(i).transpose();
    }
  }
  const double log_sigma = v(layout.offset(L::LogSigmaResid));
  const double lik = -static_cast<double>(n) * (kHalfLog2Pi + log_sigma) -
                     0.5 * sum_sq * inv_var;
  require_finite(lik, "likelihood");

  double total = lik;
  // (b) standard-normal latents
  for (auto b : {L::ZInterceptG, L::ZSlopeG, L::ZInterceptJ, L::ZSlopeJ}) {
    const auto z = v.segment(layout.offset(b), layout.size(b));
    const double lp = -kHalfLog2Pi * z.size() - 0.5 * z.squaredNorm();
    require_finite(lp, block_name(b));
    total += lp;
  }
  // (c) hyper means, (d) population scales with log-Jacobian
  double lp_mu = 0.0, lp_sigma = 0.0;
  for (int k = 0; k < 4; ++k) {
    lp_mu += normal_lpdf(p.mu[k], spec.hyperprior_mu_scale);
    lp_sigma += half_normal_lpdf(p.sigma[k], spec.hyperprior_sigma_scale) +
                std::log(p.sigma[k]);
  }
  require_finite(lp_mu, block_name(L::HyperMu));
  require_finite(lp_sigma, block_name(L::HyperLogSigma));
  // (e) fixed effects
  const std::array<double, 3> beta{p.beta2, p.beta3, p.beta4};
  double lp_fixed = 0.0;
  for (int k = 0; k < 3; ++k) {
    lp_fixed += normal_lpdf(beta[k], spec.fixed_effect_prior_scales[k]);
  }
  require_finite(lp_fixed, block_name(L::Fixed));
  // (f) residual scale with log-Jacobian
  const double lp_resid =
      half_normal_lpdf(sigma, spec.residual_sigma_prior_scale) + log_sigma;
  require_finite(lp_resid, block_name(L::LogSigmaResid));
  total += lp_mu + lp_sigma + lp_fixed + lp_resid;
  require_finite(total, "total");

  if (grad) {
    Eigen::VectorXd& out = *grad;
    out.resize(v.size());
    const std::array<const Eigen::VectorXd*, 4> score{&a_g, &b_g, &a_j, &b_j};
    const std::array<L::Block, 4> z_block{L::ZInterceptG, L::ZSlopeG,
                                          L::ZInterceptJ, L::ZSlopeJ};
    const int mu_off = layout.offset(L::HyperMu);
    const int ls_off = layout.offset(L::HyperLogSigma);
    for (int k = 0; k < 4; ++k) {
      const int off = layout.offset(z_block[k]);
      const int len = layout.size(z_block[k]);
      const auto z = v.segment(off, len);
      const Eigen::VectorXd& s = *score[k];
      out.segment(off, len) = p.sigma[k] * s - z;
      out(mu_off + k) =
          s.sum() - p.mu[k] / (spec.hyperprior_mu_scale * spec.hyperprior_mu_scale);
      const double s2 = spec.hyperprior_sigma_scale * spec.hyperprior_sigma_scale;
      out(ls_off + k) = p.sigma[k] * z.dot(s) - p.sigma[k] * p.sigma[k] / s2 + 1.0;
    }
    const int f_off = layout.offset(L::Fixed);
    for (int k = 0; k < 3; ++k) {
      const double s = spec.fixed_effect_prior_scales[k];
      out(f_off + k) = x_score(k) - beta[k] / (s * s);
    }
    const double sr = spec.residual_sigma_prior_scale;
    out(layout.offset(L::LogSigmaResid)) =
        -static_cast<double>(n) + sum_sq * inv_var - sigma * sigma / (sr * sr) + 1.0;
  }
  return total;
}

}  // namespace

double log_posterior(const Eigen::VectorXd& v, const ModelData& data,
                     const ParamLayout& layout, const ModelSpec& spec) {
  return evaluate(v, data, layout, spec, nullptr);
}

Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd& v,
                                   const ModelData& data,
                                   const ParamLayout& layout,
                                   const ModelSpec& spec) {
  Eigen::VectorXd grad;
  evaluate(v, data, layout, spec, &grad);
  return grad;
}

double log_posterior_and_gradient(const Eigen::VectorXd& v,
                                  const ModelData& data,
                                  const ParamLayout& layout,
                                  const ModelSpec& spec, Eigen::VectorXd& grad) {
  return evaluate(v, data, layout, spec, &grad);
}

HierarchicalModel::HierarchicalModel(ModelData data, ModelSpec spec)
    : data_(std::move(data)), spec_(spec) {
  spec_.validate();
  layout_.G = data_.G;
  layout_.J = data_.J;
  if (layout_.G < 1 || layout_.J < 1) {
    throw PreconditionError("model needs at least one GJS-geo and one job-geo");
  }
}

}  // namespace payequity
