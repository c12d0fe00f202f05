#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "payequity/errors.hpp"
#include "payequity/hmc.hpp"
#include "payequity/io.hpp"

using namespace payequity;

namespace {

// Gaussian with diagonal precision.
LogDensity diagonal_gaussian(Eigen::VectorXd scales) {
  return [scales](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const Eigen::VectorXd u = x.cwiseQuotient(scales);
    g = -u.cwiseQuotient(scales);
    return -0.5 * u.squaredNorm();
  };
}

// Correlated 2-D Gaussian with the given mean and covariance.
LogDensity correlated_gaussian(Eigen::Vector2d mean, Eigen::Matrix2d cov) {
  const Eigen::Matrix2d prec = cov.inverse();
  return [mean, prec](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const Eigen::Vector2d d = x - mean;
    g = -prec * d;
    return -0.5 * d.dot(prec * d);
  };
}

PhasePoint phase_point(const LogDensity& target, Eigen::VectorXd q, Eigen::VectorXd p) {
  PhasePoint pt;
  pt.position = std::move(q);
  pt.momentum = std::move(p);
  pt.log_density = target(pt.position, pt.gradient);
  return pt;
}

double hamiltonian(const PhasePoint& pt, const Eigen::VectorXd& inv_mass) {
  return -pt.log_density + kinetic_energy(pt.momentum, inv_mass);
}

}  // namespace

TEST_CASE("leapfrog: free particle moves in a straight line") {
  const LogDensity flat = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = Eigen::VectorXd::Zero(x.size());
    return 0.0;
  };
  Eigen::Vector3d q(1.0, -2.0, 0.5), p(0.3, 0.1, -1.0);
  Eigen::VectorXd inv_mass(3);
  inv_mass << 1.0, 2.0, 0.5;
  const auto r = leapfrog(phase_point(flat, q, p), 0.1, 7, inv_mass, flat);
  CHECK_FALSE(r.divergent);
  const Eigen::VectorXd expected = q + 0.7 * inv_mass.cwiseProduct(p);
  CHECK((r.point.position - expected).norm() < 1e-14);
  CHECK(r.point.momentum == Eigen::VectorXd(p));
}

TEST_CASE("leapfrog: energy error shrinks quadratically with the step") {
  const auto target = diagonal_gaussian(Eigen::Vector2d(1.0, 0.5));
  const Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(2);
  const auto start = phase_point(target, Eigen::Vector2d(0.3, -0.2), Eigen::Vector2d(1.0, 0.7));
  const double h0 = hamiltonian(start, inv_mass);
  auto max_error = [&](double eps) {
    // Largest |dH| over a trajectory of fixed length 1.
    double worst = 0.0;
    const int n = static_cast<int>(std::lround(1.0 / eps));
    PhasePoint pt = start;
    for (int k = 0; k < n; ++k) {
      pt = leapfrog(pt, eps, 1, inv_mass, target).point;
      worst = std::max(worst, std::abs(hamiltonian(pt, inv_mass) - h0));
    }
    return worst;
  };
  const double coarse = max_error(0.02), fine = max_error(0.01);
  CHECK(coarse / fine == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("leapfrog: reversible in 10 dimensions") {
  Eigen::VectorXd scales(10);
  for (int k = 0; k < 10; ++k) scales(k) = 0.5 + 0.25 * k;
  const auto target = diagonal_gaussian(scales);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  Eigen::VectorXd q(10), p(10), inv_mass(10);
  for (int k = 0; k < 10; ++k) {
    q(k) = normal(rng);
    p(k) = normal(rng);
    inv_mass(k) = 0.5 + 0.1 * k;
  }
  const auto fwd = leapfrog(phase_point(target, q, p), 0.05, 40, inv_mass, target);
  PhasePoint flipped = fwd.point;
  flipped.momentum = -flipped.momentum;
  const auto back = leapfrog(flipped, 0.05, 40, inv_mass, target);
  CHECK((back.point.position - q).norm() < 1e-8);
  CHECK((back.point.momentum + p).norm() < 1e-8);
}

TEST_CASE("leapfrog: preconditions and divergence") {
  const auto target = diagonal_gaussian(Eigen::VectorXd::Ones(2));
  const auto pt = phase_point(target, Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1));
  CHECK_THROWS_AS(leapfrog(pt, 0.0, 1, Eigen::VectorXd::Ones(2), target), PreconditionError);
  CHECK_THROWS_AS(leapfrog(pt, 0.1, 0, Eigen::VectorXd::Ones(2), target), PreconditionError);

  const LogDensity cliff = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    if (x(0) > 0.5) throw NumericError("test", "off the cliff");
    g = -x;
    return -0.5 * x.squaredNorm();
  };
  const auto r = leapfrog(phase_point(cliff, Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0)), 0.2,
                          10, Eigen::VectorXd::Ones(2), cliff);
  CHECK(r.divergent);
}

TEST_CASE("hmc_transition: tiny step is always accepted") {
  const auto target = diagonal_gaussian(Eigen::Vector2d(1.0, 3.0));
  auto state = ChainState::start(target, Eigen::Vector2d(0.5, -1.0), 3, 1e-8);
  SamplerConfig config;
  for (int t = 0; t < 50; ++t) {
    const auto info = hmc_transition(state, target, config);
    CHECK(info.accept_prob > 1.0 - 1e-9);
    CHECK_FALSE(info.divergent);
  }
}

TEST_CASE("hmc_transition: rejected proposals leave the state unchanged") {
  const auto target = diagonal_gaussian(Eigen::Vector2d(1.0, 1.0));
  auto state = ChainState::start(target, Eigen::Vector2d(0.2, 0.1), 4, 50.0);
  SamplerConfig config;
  config.leapfrog_steps = 3;
  int rejected = 0;
  for (int t = 0; t < 50; ++t) {
    const Eigen::VectorXd before = state.position;
    const double lp = state.log_density;
    const auto info = hmc_transition(state, target, config);
    if (!info.accepted) {
      ++rejected;
      CHECK(state.position == before);
      CHECK(state.log_density == lp);
    }
  }
  CHECK(rejected > 0);
  CHECK(state.accept_stats.transitions == 50);
}

TEST_CASE("hmc_transition: correlated 2-D Gaussian moments") {
  const Eigen::Vector2d mean(1.0, -2.0);
  Eigen::Matrix2d cov;
  cov << 1.0, 0.6, 0.6, 2.0;
  const auto target = correlated_gaussian(mean, cov);
  SamplerConfig config;
  config.leapfrog_steps = 10;
  auto state = ChainState::start(target, mean, 5);
  adapt_warmup(state, target, config, 500);

  const int n = 10000, batches = 100, per = n / batches;
  Eigen::MatrixXd draws(n, 2);
  for (int t = 0; t < n; ++t) {
    hmc_transition(state, target, config);
    draws.row(t) = state.position.transpose();
  }
  const Eigen::Vector2d m = draws.colwise().mean();
  // Batch-means standard errors.
  Eigen::MatrixXd batch_means(batches, 2);
  for (int b = 0; b < batches; ++b) batch_means.row(b) = draws.middleRows(b * per, per).colwise().mean();
  for (int k = 0; k < 2; ++k) {
    const double var = (batch_means.col(k).array() - m(k)).square().sum() / (batches - 1);
    const double se = std::sqrt(var / batches);
    CHECK(std::abs(m(k) - mean(k)) < 3 * se);
  }
  const Eigen::MatrixXd centered = draws.rowwise() - m.transpose();
  const Eigen::Matrix2d sample_cov = centered.transpose() * centered / (n - 1);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      CHECK(std::abs(sample_cov(a, b) - cov(a, b)) <= 0.1 * std::abs(cov(a, b)));
    }
  }
}

TEST_CASE("adapt_warmup: hits the target acceptance") {
  const auto target = diagonal_gaussian(Eigen::VectorXd::Ones(10));
  SamplerConfig config;
  config.leapfrog_steps = 8;
  auto state = ChainState::start(target, Eigen::VectorXd::Constant(10, 0.1), 6);
  const auto history = adapt_warmup(state, target, config, 1000);
  REQUIRE(history.size() == 1000u);
  double sum = 0.0;
  for (std::size_t t = 800; t < 1000; ++t) sum += history[t].accept_prob;
  CHECK(std::abs(sum / 200.0 - config.target_accept) <= 0.1);

  // Zero divergences at the adapted step.
  state.accept_stats = {};
  for (int t = 0; t < 1000; ++t) hmc_transition(state, target, config);
  CHECK(state.accept_stats.divergences == 0);
}

TEST_CASE("adapt_warmup: learns disparate scales") {
  const auto target = diagonal_gaussian(Eigen::Vector2d(1.0, 100.0));
  SamplerConfig config;
  config.leapfrog_steps = 8;
  auto state = ChainState::start(target, Eigen::Vector2d(0.1, 0.1), 7);
  adapt_warmup(state, target, config, 1000);
  const double ratio = state.inv_mass_diag(1) / state.inv_mass_diag(0);
  CHECK(ratio > 1e4 / 3.0);
  CHECK(ratio < 1e4 * 3.0);
}

TEST_CASE("leapfrog_dense: agrees with the diagonal integrator and is reversible") {
  Eigen::VectorXd scales(4);
  scales << 1.0, 3.0, 0.2, 10.0;
  const auto target = diagonal_gaussian(scales);
  const Eigen::Vector4d inv_diag(0.5, 2.0, 1.0, 4.0);
  const Eigen::MatrixXd inv_dense = inv_diag.asDiagonal();
  const auto start = phase_point(target, Eigen::Vector4d(0.3, -1.0, 0.1, 2.0),
                                 Eigen::Vector4d(1.0, 0.5, -0.2, 0.1));
  const auto a = leapfrog(start, 0.05, 20, Eigen::VectorXd(inv_diag), target);
  const auto b = leapfrog_dense(start, 0.05, 20, inv_dense, target);
  CHECK((a.point.position - b.point.position).norm() < 1e-14);
  CHECK(kinetic_energy(a.point.momentum, Eigen::VectorXd(inv_diag)) ==
        doctest::Approx(kinetic_energy_dense(a.point.momentum, inv_dense)).epsilon(1e-14));

  Eigen::Matrix4d m;
  m << 2.0, 0.5, 0.1, 0.0, 0.5, 1.0, 0.2, 0.3, 0.1, 0.2, 0.8, 0.1, 0.0, 0.3, 0.1, 1.5;
  const auto fwd = leapfrog_dense(start, 0.03, 40, m, target);
  PhasePoint back = fwd.point;
  back.momentum = -back.momentum;
  const auto rev = leapfrog_dense(back, 0.03, 40, m, target);
  CHECK((rev.point.position - start.position).norm() < 1e-8);
  CHECK((rev.point.momentum + start.momentum).norm() < 1e-8);
}

TEST_CASE("adapt_warmup: curvature metric recovers a Gaussian covariance") {
  // Scales 1 and 100 with correlation 0.99: hopeless for a diagonal metric.
  Eigen::Matrix2d cov;
  cov << 1.0, 0.99 * 100.0, 0.99 * 100.0, 1e4;
  const Eigen::Vector2d mean(5.0, -3.0);
  const auto target = correlated_gaussian(mean, cov);
  SamplerConfig config;
  config.leapfrog_steps = 8;
  config.metric = MetricKind::curvature;
  auto state = ChainState::start(target, Eigen::Vector2d(0.1, 0.1), 11);
  const auto history = adapt_warmup(state, target, config, 500);
  REQUIRE(state.inv_mass_dense.rows() == 2);
  CHECK((state.inv_mass_dense - cov).norm() < 1e-5 * cov.norm());
  CHECK(state.inv_mass_diag == state.inv_mass_dense.diagonal());
  // Whitened by the exact covariance, the Gaussian admits a step near 1.
  CHECK(state.step_size > 0.5);

  state.accept_stats = {};
  const int n = 20000;
  Eigen::MatrixXd draws(n, 2);
  std::vector<double> energy;
  for (int t = 0; t < n; ++t) {
    energy.push_back(std::abs(hmc_transition(state, target, config).energy_error));
    draws.row(t) = state.position.transpose();
  }
  CHECK(state.accept_stats.divergences == 0);
  // The averaged step errs on the small side, so acceptance lands at or
  // above the target.
  CHECK(state.accept_stats.mean() >= config.target_accept - 0.1);
  std::nth_element(energy.begin(), energy.begin() + n / 2, energy.end());
  CHECK(energy[n / 2] < 0.2);
  const Eigen::Vector2d m = draws.colwise().mean();
  CHECK(std::abs(m(0) - mean(0)) < 0.05);
  CHECK(std::abs(m(1) - mean(1)) < 5.0);
  const Eigen::MatrixXd centered = draws.rowwise() - m.transpose();
  const Eigen::Matrix2d sample_cov = centered.transpose() * centered / (n - 1);
  CHECK(sample_cov(0, 0) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(sample_cov(1, 1) == doctest::Approx(1e4).epsilon(0.05));
  CHECK(sample_cov(0, 1) / std::sqrt(sample_cov(0, 0) * sample_cov(1, 1)) ==
        doctest::Approx(0.99).epsilon(0.005));
}

TEST_CASE("adapt_warmup: median energy error at the adapted step is small") {
  const auto target = diagonal_gaussian((Eigen::VectorXd(5) << 1, 2, 5, 0.5, 10).finished());
  SamplerConfig config;
  auto state = ChainState::start(target, Eigen::VectorXd::Constant(5, 0.1), 12);
  adapt_warmup(state, target, config, 1000);
  std::vector<double> energy;
  for (int t = 0; t < 2000; ++t) {
    energy.push_back(std::abs(hmc_transition(state, target, config).energy_error));
  }
  std::nth_element(energy.begin(), energy.begin() + 1000, energy.end());
  CHECK(energy[1000] < 0.2);
}

TEST_CASE("adapt_warmup: errors") {
  const auto target = diagonal_gaussian(Eigen::VectorXd::Ones(2));
  SamplerConfig config;
  auto state = ChainState::start(target, Eigen::Vector2d(0, 0), 8);
  CHECK_THROWS_AS(adapt_warmup(state, target, config, 19), PreconditionError);

  // Every move off the start point is non-finite, so the step size collapses.
  const LogDensity pinned = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    if (x.squaredNorm() > 0.0) throw NumericError("test", "pinned");
    g = Eigen::VectorXd::Zero(x.size());
    return 0.0;
  };
  auto stuck = ChainState::start(pinned, Eigen::Vector2d(0, 0), 9);
  CHECK_THROWS_AS(adapt_warmup(stuck, pinned, config, 200), AdaptationError);
}

TEST_CASE("DualAveraging drives acceptance toward the target") {
  // Acceptance modelled as a decreasing function of the step size.
  DualAveraging da(1.0, 0.8);
  double step = 1.0;
  for (int t = 0; t < 2000; ++t) step = da.update(std::exp(-step));
  CHECK(std::exp(-da.final_step()) == doctest::Approx(0.8).epsilon(0.02));
}

TEST_CASE("sampler config keys") {
  io::KeyValues kv{{"chains", "4"}, {"seed", "99"}, {"target_accept", "0.9"}, {"other", "x"}};
  SamplerConfig c;
  apply_sampler_keys(kv, c);
  CHECK(c.n_chains == 4);
  CHECK(c.base_seed == 99u);
  CHECK(c.target_accept == 0.9);
  CHECK(kv.size() == 1);
  io::KeyValues bad{{"target_accept", "1.5"}};
  CHECK_THROWS_AS(apply_sampler_keys(bad, c), ConfigError);
  io::KeyValues nonint{{"warmup", "ten"}};
  CHECK_THROWS_AS(apply_sampler_keys(nonint, c), ConfigError);
  SamplerConfig d;
  io::KeyValues metric{{"metric", "curvature"}};
  apply_sampler_keys(metric, d);
  CHECK(d.metric == MetricKind::curvature);
  CHECK(to_string(d.metric) == "curvature");
  io::KeyValues bad_metric{{"metric", "full"}};
  CHECK_THROWS_AS(apply_sampler_keys(bad_metric, d), ConfigError);
}

TEST_CASE("run_chains on a generic target is deterministic") {
  const auto target = diagonal_gaussian(Eigen::Vector3d(1.0, 2.0, 0.5));
  SamplerConfig config;
  config.n_warmup = 100;
  config.n_samples = 200;
  config.leapfrog_steps = 5;
  const auto a = run_chains(target, 3, config);
  const auto b = run_chains(target, 3, config);
  REQUIRE(a.size() == 2u);
  for (int c = 0; c < 2; ++c) {
    CHECK(a[c].draws == b[c].draws);
    CHECK(a[c].seed == derive_seed(config.base_seed, c));
  }
  CHECK(a[0].draws != a[1].draws);
  config.base_seed += 1;
  CHECK(run_chains(target, 3, config)[0].draws != a[0].draws);
}

TEST_CASE("run_chains on the hierarchical model: shape, determinism, persistence") {
  const auto records = payequity::testing::random_workforce(40, 2, 2, 3, 21);
  const auto index = build_factor_index(records);
  const HierarchicalModel model(make_model_data(records, index), ModelSpec{});

  const SamplerConfig defaults;
  const auto draws = run_chains(model, defaults);
  CHECK(draws.num_chains() == 2);
  for (const auto& c : draws.chains) {
    CHECK(c.values.rows() == 3000);
    CHECK(c.values.cols() == model.dimension());
  }
  CHECK(draws.total_draws() == 6000);
  CHECK(draws.stacked().rows() == 6000);
  // Natural-scale scales are positive.
  const int sr = model.layout().offset(ParamLayout::LogSigmaResid);
  CHECK(draws.stacked().col(sr).minCoeff() > 0.0);

  SamplerConfig small;
  small.n_warmup = 50;
  small.n_samples = 40;
  const auto x = run_chains(model, small);
  const auto y = run_chains(model, small);
  for (int c = 0; c < 2; ++c) CHECK(x.chains[c].values == y.chains[c].values);

  payequity::testing::TempDir dir("draws");
  write_draws(dir.path, x);
  const auto back = read_draws(dir.path);
  CHECK(back.num_chains() == 2);
  CHECK(back.layout.G == model.layout().G);
  CHECK(back.layout.J == model.layout().J);
  CHECK(back.config.base_seed == small.base_seed);
  for (int c = 0; c < 2; ++c) {
    CHECK(back.chains[c].values == x.chains[c].values);
    CHECK(back.chains[c].log_density == x.chains[c].log_density);
    CHECK(back.chains[c].seed == x.chains[c].seed);
  }

  // Any byte change is caught.
  auto csv = io::read_file(dir.path / "chain_1.csv");
  csv[csv.size() / 2] = csv[csv.size() / 2] == '1' ? '2' : '1';
  io::write_file(dir.path / "chain_1.csv", csv);
  CHECK_THROWS_AS(read_draws(dir.path), IntegrityError);
  io::write_file(dir.path / "chain_0.json", "{not json");
  CHECK_THROWS_AS(read_draws(dir.path), IntegrityError);
  CHECK_THROWS_AS(read_draws(dir.path / "missing"), IoError);
}
