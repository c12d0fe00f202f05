#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "payequity/io.hpp"
#include "payequity/model.hpp"
#include "payequity/random.hpp"

namespace payequity {

/// Log density with gradient: returns log p(x) and writes d/dx log p(x).
/// May throw NumericError, which the sampler treats as a divergence.
using LogDensity =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

/// Inverse mass matrix adapted during warmup. `diagonal` uses the windowed
/// sample variances. `curvature` uses a dense matrix: the inverse of the
/// negative Hessian averaged over the last draws of each window, which
/// follows long correlated ridges that a diagonal cannot.
enum class MetricKind { diagonal, curvature };

std::string to_string(MetricKind kind);
/// Accepts "diag" and "curvature".
MetricKind parse_metric_kind(const std::string& text);

struct SamplerConfig {
  int n_chains = 2;
  int n_warmup = 1000;
  int n_samples = 3000;
  int leapfrog_steps = 32;
  double target_accept = 0.8;
  std::uint64_t base_seed = 20171005;
  /// Per-transition uniform jitter on the leapfrog step count (fraction).
  double step_jitter = 0.2;
  /// Standard deviation of the Normal(0, .) initial positions.
  double init_scale = 0.1;
  MetricKind metric = MetricKind::diagonal;
  /// Iteration counters on stderr.
  bool progress = false;

  void validate() const;
};

/// Keys: chains, warmup, samples, leapfrog_steps, target_accept, seed,
/// metric.
/// Applied keys are erased from `kv`.
void apply_sampler_keys(io::KeyValues& kv, SamplerConfig& config);
io::KeyValues to_key_values(const SamplerConfig& config);

/// Dual-averaging step-size adaptation with the conventional constants.
class DualAveraging {
public:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;

  DualAveraging(double initial_step, double target_accept);

  void restart(double initial_step);
  /// Feeds one acceptance statistic; returns the step size to use next.
  double update(double accept_prob);
  /// Averaged iterate used once adaptation stops.
  double final_step() const { return std::exp(x_bar_); }

private:
  double target_;
  double mu_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  long counter_ = 0;
};

struct AcceptStats {
  double sum_accept = 0.0;
  long transitions = 0;
  long divergences = 0;

  double mean() const { return transitions ? sum_accept / transitions : 0.0; }
};

struct ChainState {
  Eigen::VectorXd position;
  double log_density = 0.0;
  Eigen::VectorXd gradient;
  double step_size = 0.1;
  Eigen::VectorXd inv_mass_diag;
  /// Full inverse mass when the curvature metric is active, otherwise empty.
  /// `inv_mass_diag` then holds its diagonal.
  Eigen::MatrixXd inv_mass_dense;
  /// Lower Cholesky factor of `inv_mass_dense`.
  Eigen::MatrixXd inv_mass_chol;
  Rng rng;
  long iteration = 0;
  AcceptStats accept_stats;

  /// Evaluates the target at `x0` and sets unit mass.
  static ChainState start(const LogDensity& target, Eigen::VectorXd x0,
                          std::uint64_t seed, double step_size = 0.1);
};

struct PhasePoint {
  Eigen::VectorXd position;
  Eigen::VectorXd momentum;
  Eigen::VectorXd gradient;  // of log density at `position`
  double log_density = 0.0;
};

struct LeapfrogResult {
  PhasePoint point;
  bool divergent = false;
};

/// Velocity-Verlet integration of H(q, p) = -log p(q) + p' M^{-1} p / 2.
/// A non-finite state mid-trajectory stops integration and sets `divergent`.
LeapfrogResult leapfrog(const PhasePoint& start, double step_size, int n_steps,
                        const Eigen::VectorXd& inv_mass_diag,
                        const LogDensity& target);

/// Same integrator under a dense inverse mass matrix.
LeapfrogResult leapfrog_dense(const PhasePoint& start, double step_size, int n_steps,
                              const Eigen::MatrixXd& inv_mass_dense,
                        const LogDensity& target);

double kinetic_energy(const Eigen::VectorXd& momentum,
                      const Eigen::VectorXd& inv_mass_diag);
double kinetic_energy_dense(const Eigen::VectorXd& momentum,
                            const Eigen::MatrixXd& inv_mass_dense);

struct TransitionInfo {
  double accept_prob = 0.0;
  double energy_error = 0.0;  // H(end) - H(start)
  bool accepted = false;
  bool divergent = false;
  int n_steps = 0;
};

/// One HMC transition with momentum refresh and Metropolis correction.
/// Divergent trajectories are rejected and counted in `accept_stats`.
TransitionInfo hmc_transition(ChainState& state, const LogDensity& target,
                              const SamplerConfig& config);

/// Heuristic initial step size: doubles or halves until one leapfrog step
/// crosses an acceptance of 0.8.
double find_initial_step_size(ChainState& state, const LogDensity& target);

/// Warmup adaptation: dual averaging throughout, inverse mass (diagonal or
/// dense per config.metric) re-estimated at the end of each doubling slow
/// window. Returns the
/// per-iteration transition info.
std::vector<TransitionInfo> adapt_warmup(ChainState& state,
                                         const LogDensity& target,
                                         const SamplerConfig& config,
                                         int n_warmup);

struct ChainResult {
  Eigen::MatrixXd draws;  // n_samples x dimension, unconstrained
  Eigen::VectorXd log_density;
  std::uint64_t seed = 0;
  long divergences = 0;
  double step_size = 0.0;
  Eigen::VectorXd inv_mass_diag;
  Eigen::MatrixXd inv_mass_dense;
  double mean_accept = 0.0;
  double duration_seconds = 0.0;
  std::vector<TransitionInfo> sampling_info;
};

/// Warmup then sampling for a single chain started at `x0`.
ChainResult run_chain(const LogDensity& target, const Eigen::VectorXd& x0,
                      const SamplerConfig& config, int chain_index);

/// Runs config.n_chains chains on a generic target from Normal(0,
/// init_scale) starting points; chains execute on separate threads.
std::vector<ChainResult> run_chains(const LogDensity& target, int dimension,
                                    const SamplerConfig& config);

struct ChainDraws {
  Eigen::MatrixXd values;  // n_samples x natural dimension
  Eigen::VectorXd log_density;
  std::uint64_t seed = 0;
  long divergences = 0;
  double step_size = 0.0;
  double mean_accept = 0.0;
  double duration_seconds = 0.0;
};

/// Post-warmup draws on the natural scale.
struct PosteriorDraws {
  ParamLayout layout;
  SamplerConfig config;
  std::vector<ChainDraws> chains;

  int num_params() const { return layout.dimension(); }
  int num_chains() const { return static_cast<int>(chains.size()); }
  std::vector<std::string> names() const { return layout.natural_names(); }
  long total_divergences() const;
  long total_draws() const;
  /// Draws of one parameter, one vector per chain.
  std::vector<Eigen::VectorXd> parameter(int k) const;
  /// Every draw of every chain stacked in chain order.
  Eigen::MatrixXd stacked() const;
};

PosteriorDraws run_chains(const HierarchicalModel& model,
                          const SamplerConfig& config);

/// One `chain_<k>.csv` per chain (parameter columns then lp__) plus a
/// `chain_<k>.json` sidecar carrying seeds, config, divergences, duration
/// and the CSV's SHA-256.
void write_draws(const std::filesystem::path& dir, const PosteriorDraws& draws);
/// Throws IntegrityError when a file is missing, malformed or fails its
/// checksum.
PosteriorDraws read_draws(const std::filesystem::path& dir);

}  // namespace payequity
