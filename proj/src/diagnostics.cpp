#include "payequity/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "payequity/errors.hpp"
#include "payequity/io.hpp"

namespace payequity {

namespace {

double mean(const Eigen::Ref<const Eigen::VectorXd>& x) { return x.mean(); }

double sample_variance(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double m = x.mean();
  return (x.array() - m).square().sum() / static_cast<double>(x.size() - 1);
}

void check_chains(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.empty()) throw PreconditionError("no chains given");
  const Eigen::Index n = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != n) throw PreconditionError("chains differ in length");
  }
  if (n / 2 < 2) {
    throw PreconditionError("split segments need at least 2 draws each");
  }
}

}  // namespace

double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
  check_chains(chains);
  const Eigen::Index n = chains.front().size() / 2;
  std::vector<Eigen::VectorXd> segments;
  for (const auto& c : chains) {
    segments.emplace_back(c.head(n));
    segments.emplace_back(c.tail(n));
  }
  const auto m = static_cast<double>(segments.size());
  Eigen::VectorXd means(segments.size()), vars(segments.size());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    means(s) = mean(segments[s]);
    vars(s) = sample_variance(segments[s]);
  }
  const double W = vars.mean();
  const double B_over_n = (means.array() - means.mean()).square().sum() / (m - 1.0);
  if (W <= 0.0) {
    return B_over_n > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  }
  const double nd = static_cast<double>(n);
  const double var_plus = (nd - 1.0) / nd * W + B_over_n;
  return std::sqrt(var_plus / W);
}

EssResult effective_sample_size_detail(const std::vector<Eigen::VectorXd>& chains) {
  check_chains(chains);
  const std::size_t m = chains.size();
  const Eigen::Index n = chains.front().size();
  const double total = static_cast<double>(m) * static_cast<double>(n);

  std::vector<Eigen::VectorXd> centered;
  Eigen::VectorXd chain_means(m), chain_vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    chain_means(c) = chains[c].mean();
    centered.emplace_back(chains[c].array() - chain_means(c));
    chain_vars(c) = centered[c].squaredNorm() / static_cast<double>(n - 1);
  }
  const double W = chain_vars.mean();
  if (W <= 0.0) return {total, true};

  const double nd = static_cast<double>(n);
  const double between =
      m > 1 ? (chain_means.array() - chain_means.mean()).square().sum() / (m - 1.0)
            : 0.0;
  const double var_plus = (nd - 1.0) / nd * W + between;

  // Mean over chains of the biased lag-t autocovariance.
  auto mean_acov = [&](Eigen::Index t) {
    double acc = 0.0;
    for (const auto& x : centered) {
      acc += x.head(n - t).dot(x.tail(n - t)) / nd;
    }
    return acc / static_cast<double>(m);
  };
  auto rho = [&](Eigen::Index t) { return 1.0 - (W - mean_acov(t)) / var_plus; };

  // Geyer's initial positive sequence over pairs (rho_2k + rho_2k+1), made
  // monotone non-increasing.
  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t + 1 < n; t += 2) {
    const double even = t == 0 ? 1.0 : rho(t);
    const double odd = rho(t + 1);
    double pair = even + odd;
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    tau += 2.0 * pair;
    prev_pair = pair;
  }
  // tau < 1 (antithetic draws) would push ESS past the draw count.
  return {total / std::max(tau, 1.0), false};
}

// ---------------------------------------------------------------------------

int DiagnosticSummary::flagged_count() const {
  return static_cast<int>(std::count_if(parameters.begin(), parameters.end(),
                                        [](const auto& p) { return p.flagged; }));
}

double DiagnosticSummary::flagged_fraction() const {
  return parameters.empty()
             ? 0.0
             : static_cast<double>(flagged_count()) / static_cast<double>(parameters.size());
}

double DiagnosticSummary::max_rhat() const {
  double r = 1.0;
  for (const auto& p : parameters) r = std::max(r, p.rhat);
  return r;
}

double DiagnosticSummary::min_ess() const {
  double e = std::numeric_limits<double>::infinity();
  for (const auto& p : parameters) e = std::min(e, p.ess);
  return e;
}

std::string DiagnosticSummary::summary_line() const {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(3);
  ss << flagged_count() << " of " << parameters.size()
     << " parameters have split R-hat > " << threshold << " ("
     << 100.0 * flagged_fraction() << "%); max R-hat " << max_rhat()
     << ", min ESS ";
  ss.precision(1);
  ss << min_ess() << "; " << divergences << " divergent transitions; "
     << (acceptable() ? "acceptable" : "NOT acceptable")
     << " (limit 0.05% flagged)";
  return ss.str();
}

DiagnosticSummary convergence_report(const PosteriorDraws& draws,
                                     double threshold) {
  if (draws.num_chains() < 2) {
    throw PreconditionError("convergence diagnostics need at least 2 chains");
  }
  DiagnosticSummary summary;
  summary.threshold = threshold;
  summary.total_draws = draws.total_draws();
  summary.divergences = draws.total_divergences();
  const auto names = draws.names();
  summary.parameters.reserve(names.size());
  for (int k = 0; k < draws.num_params(); ++k) {
    const auto chains = draws.parameter(k);
    ParameterDiagnostic d;
    d.name = names[k];
    d.rhat = split_rhat(chains);
    const auto ess = effective_sample_size_detail(chains);
    d.ess = ess.ess;
    d.zero_variance = ess.zero_variance;
    d.flagged = !(d.rhat <= threshold);
    summary.parameters.push_back(std::move(d));
  }
  return summary;
}

void write_diagnostics_csv(const std::filesystem::path& path,
                           const DiagnosticSummary& summary) {
  std::ostringstream ss;
  ss << "parameter_name,rhat,ess,flagged\n";
  for (const auto& p : summary.parameters) {
    ss << p.name << ',' << io::format_double(p.rhat) << ','
       << io::format_double(p.ess) << ',' << (p.flagged ? 1 : 0) << '\n';
  }
  io::write_file(path, ss.str());
}

std::vector<std::filesystem::path> export_traces(
    const std::filesystem::path& dir, const PosteriorDraws& draws,
    const std::vector<std::string>& parameter_names) {
  const auto names = draws.names();
  std::map<std::string, int> position;
  for (std::size_t k = 0; k < names.size(); ++k) position[names[k]] = static_cast<int>(k);

  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& name : parameter_names) {
    auto it = position.find(name);
    if (it == position.end()) {
      throw PreconditionError("unknown parameter `" + name + "`");
    }
    std::ostringstream ss;
    ss << "chain,iteration,value\n";
    for (int c = 0; c < draws.num_chains(); ++c) {
      const auto& values = draws.chains[c].values;
      for (Eigen::Index s = 0; s < values.rows(); ++s) {
        ss << c << ',' << s << ',' << io::format_double(values(s, it->second)) << '\n';
      }
    }
    std::string file = "trace_" + name + ".csv";
    std::replace(file.begin(), file.end(), '[', '_');
    file.erase(std::remove(file.begin(), file.end(), ']'), file.end());
    written.push_back(dir / file);
    io::write_file(written.back(), ss.str());
  }
  return written;
}

}  // namespace payequity
