#include "payequity/hmc.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "payequity/errors.hpp"

namespace payequity {

std::string to_string(MetricKind kind) {
  return kind == MetricKind::curvature ? "curvature" : "diag";
}

MetricKind parse_metric_kind(const std::string& text) {
  if (text == "diag") return MetricKind::diagonal;
  if (text == "curvature") return MetricKind::curvature;
  throw ConfigError("metric must be `diag` or `curvature`, got `" + text + "`");
}

void SamplerConfig::validate() const {
  if (n_chains < 1) throw ConfigError("n_chains must be positive");
  if (n_warmup < 1) throw ConfigError("n_warmup must be positive");
  if (n_samples < 1) throw ConfigError("n_samples must be positive");
  if (leapfrog_steps < 1) throw ConfigError("leapfrog_steps must be positive");
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw ConfigError("target_accept must lie strictly inside (0, 1)");
  }
  if (!(step_jitter >= 0.0 && step_jitter < 1.0)) {
    throw ConfigError("step_jitter must lie in [0, 1)");
  }
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be > 0");
}

void apply_sampler_keys(io::KeyValues& kv, SamplerConfig& config) {
  auto take_int = [&](const char* key, int& slot) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    const auto v = io::parse_int(it->second);
    if (!v) throw ConfigError(std::string("`") + key + "` is not an integer");
    slot = static_cast<int>(*v);
    kv.erase(it);
  };
  take_int("chains", config.n_chains);
  take_int("warmup", config.n_warmup);
  take_int("samples", config.n_samples);
  take_int("leapfrog_steps", config.leapfrog_steps);
  if (auto it = kv.find("target_accept"); it != kv.end()) {
    const auto v = io::parse_double(it->second);
    if (!v) throw ConfigError("`target_accept` is not a number");
    config.target_accept = *v;
    kv.erase(it);
  }
  if (auto it = kv.find("metric"); it != kv.end()) {
    config.metric = parse_metric_kind(it->second);
    kv.erase(it);
  }
  if (auto it = kv.find("seed"); it != kv.end()) {
    const auto v = io::parse_int(it->second);
    if (!v) throw ConfigError("`seed` is not an integer");
    config.base_seed = static_cast<std::uint64_t>(*v);
    kv.erase(it);
  }
  config.validate();
}

io::KeyValues to_key_values(const SamplerConfig& config) {
  return {{"chains", std::to_string(config.n_chains)},
          {"warmup", std::to_string(config.n_warmup)},
          {"samples", std::to_string(config.n_samples)},
          {"leapfrog_steps", std::to_string(config.leapfrog_steps)},
          {"target_accept", io::format_double(config.target_accept)},
          {"seed", std::to_string(config.base_seed)},
          {"metric", to_string(config.metric)}};
}

// ---------------------------------------------------------------------------

DualAveraging::DualAveraging(double initial_step, double target_accept)
    : target_(target_accept) {
  restart(initial_step);
}

void DualAveraging::restart(double initial_step) {
  mu_ = std::log(10.0 * initial_step);
  s_bar_ = 0.0;
  x_bar_ = 0.0;
  counter_ = 0;
}

double DualAveraging::update(double accept_prob) {
  ++counter_;
  const double m = static_cast<double>(counter_);
  const double eta = 1.0 / (m + kT0);
  s_bar_ = (1.0 - eta) * s_bar_ + eta * (target_ - accept_prob);
  const double x = mu_ - std::sqrt(m) / kGamma * s_bar_;
  const double w = std::pow(m, -kKappa);
  x_bar_ = w * x + (1.0 - w) * x_bar_;
  return std::exp(x);
}

// ---------------------------------------------------------------------------

ChainState ChainState::start(const LogDensity& target, Eigen::VectorXd x0,
                             std::uint64_t seed, double step_size) {
  ChainState s;
  s.position = std::move(x0);
  s.log_density = target(s.position, s.gradient);
  if (!std::isfinite(s.log_density) || !s.gradient.allFinite()) {
    throw NumericError("init", "log density is non-finite at the initial point");
  }
  s.step_size = step_size;
  s.inv_mass_diag = Eigen::VectorXd::Ones(s.position.size());
  s.rng.seed(seed);
  return s;
}

double kinetic_energy(const Eigen::VectorXd& momentum,
                      const Eigen::VectorXd& inv_mass_diag) {
  return 0.5 * momentum.cwiseProduct(inv_mass_diag).dot(momentum);
}

double kinetic_energy_dense(const Eigen::VectorXd& momentum,
                            const Eigen::MatrixXd& inv_mass_dense) {
  return 0.5 * momentum.dot(inv_mass_dense * momentum);
}

namespace {

template <class Velocity>
LeapfrogResult integrate(const PhasePoint& start, double step_size, int n_steps,
                         const Velocity& velocity, const LogDensity& target) {
  if (!(step_size > 0.0) || n_steps < 1) {
    throw PreconditionError("leapfrog needs step_size > 0 and n_steps >= 1");
  }
  LeapfrogResult out{start, false};
  PhasePoint& pt = out.point;
  const double half = 0.5 * step_size;
  for (int step = 0; step < n_steps; ++step) {
    pt.momentum.noalias() += half * pt.gradient;
    pt.position.noalias() += step_size * velocity(pt.momentum);
    try {
      pt.log_density = target(pt.position, pt.gradient);
    } catch (const NumericError&) {
      out.divergent = true;
      return out;
    }
    pt.momentum.noalias() += half * pt.gradient;
    if (!std::isfinite(pt.log_density) || !pt.gradient.allFinite() ||
        !pt.position.allFinite()) {
      out.divergent = true;
      return out;
    }
  }
  return out;
}

}  // namespace

LeapfrogResult leapfrog(const PhasePoint& start, double step_size, int n_steps,
                        const Eigen::VectorXd& inv_mass_diag,
                        const LogDensity& target) {
  return integrate(
      start, step_size, n_steps,
      [&](const Eigen::VectorXd& p) -> Eigen::VectorXd { return inv_mass_diag.cwiseProduct(p); },
      target);
}

LeapfrogResult leapfrog_dense(const PhasePoint& start, double step_size, int n_steps,
                              const Eigen::MatrixXd& inv_mass_dense,
                        const LogDensity& target) {
  return integrate(
      start, step_size, n_steps,
      [&](const Eigen::VectorXd& p) -> Eigen::VectorXd { return inv_mass_dense * p; },
      target);
}

namespace {

constexpr double kDivergenceThreshold = 1000.0;

bool is_dense(const ChainState& state) { return state.inv_mass_dense.size() > 0; }

Eigen::VectorXd draw_momentum(ChainState& state) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd p(state.position.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) p(k) = normal(state.rng);
  if (is_dense(state)) {
    // With inverse mass L L', p = L^{-T} xi has covariance M.
    state.inv_mass_chol.triangularView<Eigen::Lower>().transpose().solveInPlace(p);
    return p;
  }
  return p.cwiseQuotient(state.inv_mass_diag.cwiseSqrt());
}

double state_kinetic(const ChainState& state, const Eigen::VectorXd& p) {
  return is_dense(state) ? kinetic_energy_dense(p, state.inv_mass_dense)
                         : kinetic_energy(p, state.inv_mass_diag);
}

LeapfrogResult state_leapfrog(const ChainState& state, const PhasePoint& start,
                              double step_size, int n_steps, const LogDensity& target) {
  return is_dense(state) ? leapfrog_dense(start, step_size, n_steps, state.inv_mass_dense, target)
                         : leapfrog(start, step_size, n_steps, state.inv_mass_diag, target);
}

int jittered_steps(ChainState& state, const SamplerConfig& config) {
  const int lo = std::max(
      1, static_cast<int>(std::lround(config.leapfrog_steps * (1.0 - config.step_jitter))));
  const int hi = std::max(
      lo, static_cast<int>(std::lround(config.leapfrog_steps * (1.0 + config.step_jitter))));
  return std::uniform_int_distribution<int>(lo, hi)(state.rng);
}

}  // namespace

TransitionInfo hmc_transition(ChainState& state, const LogDensity& target,
                              const SamplerConfig& config) {
  TransitionInfo info;
  PhasePoint start{state.position, draw_momentum(state), state.gradient,
                   state.log_density};
  const double h0 = -start.log_density + state_kinetic(state, start.momentum);
  info.n_steps = jittered_steps(state, config);
  auto result = state_leapfrog(state, start, state.step_size, info.n_steps, target);
  const double h1 = -result.point.log_density + state_kinetic(state, result.point.momentum);
  info.energy_error = h1 - h0;
  if (result.divergent || !std::isfinite(h1) || info.energy_error > kDivergenceThreshold) {
    info.divergent = true;
    info.accept_prob = 0.0;
  } else {
    info.accept_prob = std::min(1.0, std::exp(-info.energy_error));
  }
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(state.rng);
  if (!info.divergent && u < info.accept_prob) {
    info.accepted = true;
    state.position = std::move(result.point.position);
    state.gradient = std::move(result.point.gradient);
    state.log_density = result.point.log_density;
  }
  ++state.iteration;
  state.accept_stats.sum_accept += info.accept_prob;
  ++state.accept_stats.transitions;
  state.accept_stats.divergences += info.divergent;
  return info;
}

double find_initial_step_size(ChainState& state, const LogDensity& target) {
  const double log_threshold = std::log(0.8);
  auto log_accept = [&](double step) {
    PhasePoint start{state.position, draw_momentum(state), state.gradient,
                     state.log_density};
    const double h0 = -start.log_density + state_kinetic(state, start.momentum);
    const auto r = state_leapfrog(state, start, step, 1, target);
    if (r.divergent) return -std::numeric_limits<double>::infinity();
    const double h1 = -r.point.log_density + state_kinetic(state, r.point.momentum);
    return std::isfinite(h1) ? h0 - h1 : -std::numeric_limits<double>::infinity();
  };
  double step = state.step_size;
  const int direction = log_accept(step) > log_threshold ? 1 : -1;
  for (int iter = 0; iter < 100; ++iter) {
    const double next = direction > 0 ? 2.0 * step : 0.5 * step;
    const double la = log_accept(next);
    if (direction > 0 && !(la > log_threshold)) break;
    step = next;
    if (direction < 0 && la > log_threshold) break;
    if (step < 1e-12 || step > 1e7) break;
  }
  return step;
}

namespace {

/// Window schedule: fast initial buffer, doubling slow windows, fast
/// terminal buffer.
struct WarmupSchedule {
  int init_buffer = 75;
  int term_buffer = 50;
  int base_window = 25;
  int n_warmup = 0;

  explicit WarmupSchedule(int n) : n_warmup(n) {
    if (init_buffer + base_window + term_buffer > n) {
      init_buffer = static_cast<int>(0.15 * n);
      term_buffer = static_cast<int>(0.1 * n);
      base_window = n - init_buffer - term_buffer;
    }
  }

  /// Iteration indices (0-based) at which a slow window closes.
  std::vector<int> window_ends() const {
    std::vector<int> ends;
    const int slow_end = n_warmup - term_buffer;
    int start = init_buffer;
    int size = base_window;
    while (start < slow_end) {
      int end = start + size;
      // Stretch the last window rather than leave a short trailing one.
      if (end + 2 * size > slow_end) end = slow_end;
      ends.push_back(end - 1);
      start = end;
      size *= 2;
    }
    return ends;
  }
};

class WelfordVariance {
public:
  explicit WelfordVariance(Eigen::Index dim)
      : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}

  void add(const Eigen::VectorXd& x) {
    ++n_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(x - mean_);
  }

  /// Sample variance shrunk toward 1e-3.
  Eigen::VectorXd regularized() const {
    const double n = static_cast<double>(n_);
    const Eigen::VectorXd var = m2_ / std::max(n - 1.0, 1.0);
    return (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
  }

  long count() const { return n_; }
  void reset() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }

private:
  long n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

void set_dense_metric(ChainState& state, Eigen::MatrixXd inv_mass) {
  Eigen::LLT<Eigen::MatrixXd> llt(inv_mass);
  if (llt.info() != Eigen::Success) {
    throw AdaptationError("estimated inverse mass matrix is not positive definite");
  }
  state.inv_mass_chol = llt.matrixL();
  state.inv_mass_diag = inv_mass.diagonal();
  state.inv_mass_dense = std::move(inv_mass);
}

/// Central differences of the gradient, symmetrized.
Eigen::MatrixXd negative_hessian(const Eigen::VectorXd& x, const LogDensity& target) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd gp, gm;
  const double h = 1e-5;
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    target(xp, gp);
    target(xm, gm);
    H.col(k) = -(gp - gm) / (2 * h);
  }
  return 0.5 * (H + H.transpose());
}

/// Inverse of the negative Hessian averaged over `points`, with eigenvalues
/// replaced by their absolute values and floored relative to the largest so
/// that flat or saddle directions still get a finite, positive scale. Returns nullopt when the
/// target fails at a probe point.
std::optional<Eigen::MatrixXd> curvature_metric(const std::deque<Eigen::VectorXd>& points,
                                                const LogDensity& target) {
  constexpr double kRelativeFloor = 1e-10;
  const Eigen::Index n = points.front().size();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  try {
    for (const auto& x : points) H += negative_hessian(x, target);
  } catch (const NumericError&) {
    return std::nullopt;
  }
  if (!H.allFinite()) return std::nullopt;
  H /= static_cast<double>(points.size());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  Eigen::VectorXd lam = es.eigenvalues().cwiseAbs();
  lam = lam.cwiseMax(std::max(kRelativeFloor * lam.maxCoeff(), 1e-300));
  Eigen::MatrixXd inv = es.eigenvectors() * lam.cwiseInverse().asDiagonal() *
                        es.eigenvectors().transpose();
  return 0.5 * (inv + inv.transpose());
}

}  // namespace

std::vector<TransitionInfo> adapt_warmup(ChainState& state,
                                         const LogDensity& target,
                                         const SamplerConfig& config,
                                         int n_warmup) {
  if (n_warmup < 20) {
    throw PreconditionError("adapt_warmup needs at least 20 warmup iterations");
  }
  const WarmupSchedule schedule(n_warmup);
  const auto ends = schedule.window_ends();
  const int slow_begin = schedule.init_buffer;
  const int slow_end = n_warmup - schedule.term_buffer;

  state.step_size = find_initial_step_size(state, target);
  DualAveraging averaging(state.step_size, config.target_accept);
  const bool curvature = config.metric == MetricKind::curvature;
  constexpr std::size_t kCurvaturePoints = 10;
  WelfordVariance variance(state.position.size());
  std::deque<Eigen::VectorXd> recent;
  std::size_t next_end = 0;

  std::vector<TransitionInfo> history;
  history.reserve(n_warmup);
  for (int t = 0; t < n_warmup; ++t) {
    history.push_back(hmc_transition(state, target, config));
    state.step_size = averaging.update(history.back().accept_prob);
    if (!(state.step_size >= 1e-12) || !std::isfinite(state.step_size)) {
      throw AdaptationError("step size collapsed below 1e-12 during warmup");
    }
    if (t >= slow_begin && t < slow_end) {
      variance.add(state.position);
      recent.push_back(state.position);
      if (recent.size() > kCurvaturePoints) recent.pop_front();
    }
    if (next_end < ends.size() && t == ends[next_end]) {
      ++next_end;
      auto metric = curvature ? curvature_metric(recent, target) : std::nullopt;
      if (metric) {
        set_dense_metric(state, std::move(*metric));
      } else {
        // Diagonal adaptation, also the fallback when a curvature probe fails.
        state.inv_mass_diag = variance.regularized();
        state.inv_mass_dense.resize(0, 0);
        state.inv_mass_chol.resize(0, 0);
      }
      variance.reset();
      recent.clear();
      state.step_size = find_initial_step_size(state, target);
      averaging.restart(state.step_size);
    }
  }
  state.step_size = averaging.final_step();
  if (!(state.step_size >= 1e-12)) {
    throw AdaptationError("adapted step size collapsed below 1e-12");
  }
  return history;
}

// ---------------------------------------------------------------------------

namespace {

std::mutex progress_mutex;

void report_progress(int chain, int iter, int total, int n_warmup) {
  std::lock_guard lock(progress_mutex);
  std::cerr << "chain " << chain << ": iteration " << iter << " / " << total
            << (iter <= n_warmup ? " (warmup)" : " (sampling)") << '\n';
}

}  // namespace

ChainResult run_chain(const LogDensity& target, const Eigen::VectorXd& x0,
                      const SamplerConfig& config, int chain_index) {
  config.validate();
  const auto clock_start = std::chrono::steady_clock::now();
  ChainResult result;
  result.seed = derive_seed(config.base_seed, static_cast<std::uint64_t>(chain_index));
  auto state = ChainState::start(target, x0, result.seed);

  const int total = config.n_warmup + config.n_samples;
  const int every = std::max(1, total / 10);
  if (config.n_warmup >= 20) {
    adapt_warmup(state, target, config, config.n_warmup);
  } else {
    for (int t = 0; t < config.n_warmup; ++t) hmc_transition(state, target, config);
  }
  if (config.progress) report_progress(chain_index, config.n_warmup, total, config.n_warmup);
  state.accept_stats = {};

  const Eigen::Index dim = state.position.size();
  result.draws.resize(config.n_samples, dim);
  result.log_density.resize(config.n_samples);
  result.sampling_info.reserve(config.n_samples);
  for (int s = 0; s < config.n_samples; ++s) {
    result.sampling_info.push_back(hmc_transition(state, target, config));
    result.draws.row(s) = state.position.transpose();
    result.log_density(s) = state.log_density;
    const int iter = config.n_warmup + s + 1;
    if (config.progress && iter % every == 0) {
      report_progress(chain_index, iter, total, config.n_warmup);
    }
  }
  result.divergences = state.accept_stats.divergences;
  result.mean_accept = state.accept_stats.mean();
  result.step_size = state.step_size;
  result.inv_mass_diag = state.inv_mass_diag;
  result.inv_mass_dense = state.inv_mass_dense;
  result.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  return result;
}

std::vector<ChainResult> run_chains(const LogDensity& target, int dimension,
                                    const SamplerConfig& config) {
  config.validate();
  std::vector<ChainResult> results(config.n_chains);
  std::vector<std::exception_ptr> errors(config.n_chains);
  std::vector<std::thread> workers;
  for (int c = 0; c < config.n_chains; ++c) {
    workers.emplace_back([&, c] {
      try {
        // Initial point comes from its own stream so it does not shift the
        // transition stream.
        Rng init_rng(derive_seed(config.base_seed, 0x1000 + static_cast<std::uint64_t>(c)));
        std::normal_distribution<double> normal(0.0, config.init_scale);
        Eigen::VectorXd x0(dimension);
        for (int k = 0; k < dimension; ++k) x0(k) = normal(init_rng);
        results[c] = run_chain(target, x0, config, c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (int c = 0; c < config.n_chains; ++c) {
    if (!errors[c]) continue;
    try {
      std::rethrow_exception(errors[c]);
    } catch (const AdaptationError& e) {
      throw AdaptationError("chain " + std::to_string(c) + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError(e.block(), "chain " + std::to_string(c) + ": " + e.what());
    }
  }
  return results;
}

// ---------------------------------------------------------------------------

long PosteriorDraws::total_divergences() const {
  long n = 0;
  for (const auto& c : chains) n += c.divergences;
  return n;
}

long PosteriorDraws::total_draws() const {
  long n = 0;
  for (const auto& c : chains) n += c.values.rows();
  return n;
}

std::vector<Eigen::VectorXd> PosteriorDraws::parameter(int k) const {
  std::vector<Eigen::VectorXd> out;
  out.reserve(chains.size());
  for (const auto& c : chains) out.emplace_back(c.values.col(k));
  return out;
}

Eigen::MatrixXd PosteriorDraws::stacked() const {
  Eigen::MatrixXd out(total_draws(), num_params());
  Eigen::Index row = 0;
  for (const auto& c : chains) {
    out.middleRows(row, c.values.rows()) = c.values;
    row += c.values.rows();
  }
  return out;
}

PosteriorDraws run_chains(const HierarchicalModel& model,
                          const SamplerConfig& config) {
  LogDensity target = [&model](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    return model(x, g);
  };
  auto results = run_chains(target, model.dimension(), config);

  PosteriorDraws draws;
  draws.layout = model.layout();
  draws.config = config;
  for (auto& r : results) {
    ChainDraws c;
    c.values.resize(r.draws.rows(), model.dimension());
    for (Eigen::Index s = 0; s < r.draws.rows(); ++s) {
      const Eigen::VectorXd v = r.draws.row(s).transpose();
      c.values.row(s) = to_natural(v, model.layout()).flatten().transpose();
    }
    c.log_density = std::move(r.log_density);
    c.seed = r.seed;
    c.divergences = r.divergences;
    c.step_size = r.step_size;
    c.mean_accept = r.mean_accept;
    c.duration_seconds = r.duration_seconds;
    draws.chains.push_back(std::move(c));
  }
  return draws;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json config_json(const SamplerConfig& c) {
  return {{"chains", c.n_chains},
          {"warmup", c.n_warmup},
          {"samples", c.n_samples},
          {"leapfrog_steps", c.leapfrog_steps},
          {"target_accept", c.target_accept},
          {"base_seed", c.base_seed},
          {"step_jitter", c.step_jitter},
          {"init_scale", c.init_scale},
          {"metric", to_string(c.metric)}};
}

std::string chain_csv(const ChainDraws& c, const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) {
    out += n;
    out += ',';
  }
  out += "lp__\n";
  for (Eigen::Index s = 0; s < c.values.rows(); ++s) {
    for (Eigen::Index k = 0; k < c.values.cols(); ++k) {
      out += io::format_double(c.values(s, k));
      out += ',';
    }
    out += io::format_double(c.log_density(s));
    out += '\n';
  }
  return out;
}

}  // namespace

void write_draws(const std::filesystem::path& dir, const PosteriorDraws& draws) {
  std::filesystem::create_directories(dir);
  const auto names = draws.names();
  for (int c = 0; c < draws.num_chains(); ++c) {
    const auto& chain = draws.chains[c];
    const std::string csv = chain_csv(chain, names);
    const std::string stem = "chain_" + std::to_string(c);
    io::write_file(dir / (stem + ".csv"), csv);
    nlohmann::json meta = {
        {"chain", c},
        {"num_chains", draws.num_chains()},
        {"seed", chain.seed},
        {"config", config_json(draws.config)},
        {"G", draws.layout.G},
        {"J", draws.layout.J},
        {"n_samples", chain.values.rows()},
        {"n_params", chain.values.cols()},
        {"divergences", chain.divergences},
        {"step_size", chain.step_size},
        {"mean_accept_prob", chain.mean_accept},
        {"duration_seconds", chain.duration_seconds},
        {"csv_sha256", io::sha256_hex(csv)},
    };
    io::write_file(dir / (stem + ".json"), meta.dump(2) + "\n");
  }
}

namespace {

PosteriorDraws read_draws_unchecked(const std::filesystem::path& dir) {
  PosteriorDraws draws;
  auto first_meta = dir / "chain_0.json";
  if (!std::filesystem::exists(first_meta)) {
    throw IoError("no draws found in " + dir.string());
  }
  int num_chains = 0;
  for (int c = 0;; ++c) {
    const std::string stem = "chain_" + std::to_string(c);
    const auto meta_path = dir / (stem + ".json");
    if (c > 0 && c >= num_chains) break;
    if (!std::filesystem::exists(meta_path)) {
      throw IntegrityError("missing " + meta_path.string());
    }
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(io::read_file(meta_path));
      if (c == 0) {
        num_chains = meta.at("num_chains").get<int>();
        draws.layout.G = meta.at("G").get<int>();
        draws.layout.J = meta.at("J").get<int>();
        const auto& cfg = meta.at("config");
        draws.config.n_chains = cfg.at("chains").get<int>();
        draws.config.n_warmup = cfg.at("warmup").get<int>();
        draws.config.n_samples = cfg.at("samples").get<int>();
        draws.config.leapfrog_steps = cfg.at("leapfrog_steps").get<int>();
        draws.config.target_accept = cfg.at("target_accept").get<double>();
        draws.config.base_seed = cfg.at("base_seed").get<std::uint64_t>();
        draws.config.step_jitter = cfg.at("step_jitter").get<double>();
        draws.config.init_scale = cfg.at("init_scale").get<double>();
        const auto metric = cfg.value("metric", std::string("diag"));
        if (metric != "diag" && metric != "curvature") {
          throw IntegrityError("unknown metric in " + meta_path.string());
        }
        draws.config.metric = parse_metric_kind(metric);
      }
    } catch (const nlohmann::json::exception& e) {
      throw IntegrityError("malformed metadata " + meta_path.string() + ": " + e.what());
    }
    const auto csv_path = dir / (stem + ".csv");
    if (!std::filesystem::exists(csv_path)) {
      throw IntegrityError("missing " + csv_path.string());
    }
    const std::string csv = io::read_file(csv_path);
    if (io::sha256_hex(csv) != meta.value("csv_sha256", std::string{})) {
      throw IntegrityError("checksum mismatch for " + csv_path.string() +
                           " (file corrupted or modified)");
    }

    ChainDraws chain;
    const auto n_samples = meta.at("n_samples").get<Eigen::Index>();
    const auto n_params = meta.at("n_params").get<Eigen::Index>();
    if (n_params != draws.layout.dimension()) {
      throw IntegrityError("parameter count does not match layout in " + meta_path.string());
    }
    chain.values.resize(n_samples, n_params);
    chain.log_density.resize(n_samples);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);  // header
    for (Eigen::Index s = 0; s < n_samples; ++s) {
      if (!std::getline(in, line)) {
        throw IntegrityError("truncated draws file " + csv_path.string());
      }
      const auto fields = io::split_csv_line(line);
      if (static_cast<Eigen::Index>(fields.size()) != n_params + 1) {
        throw IntegrityError("bad column count in " + csv_path.string());
      }
      for (Eigen::Index k = 0; k <= n_params; ++k) {
        const auto v = io::parse_double(fields[k]);
        if (!v) throw IntegrityError("non-numeric value in " + csv_path.string());
        (k < n_params ? chain.values(s, k) : chain.log_density(s)) = *v;
      }
    }
    chain.seed = meta.at("seed").get<std::uint64_t>();
    chain.divergences = meta.at("divergences").get<long>();
    chain.step_size = meta.at("step_size").get<double>();
    chain.mean_accept = meta.at("mean_accept_prob").get<double>();
    chain.duration_seconds = meta.at("duration_seconds").get<double>();
    draws.chains.push_back(std::move(chain));
  }
  return draws;
}

}  // namespace

PosteriorDraws read_draws(const std::filesystem::path& dir) {
  try {
    return read_draws_unchecked(dir);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("malformed draws metadata in " + dir.string() + ": " + e.what());
  }
}

}  // namespace payequity
