#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "payequity/hmc.hpp"

namespace payequity {

/// Split Gelman-Rubin statistic. Every chain is halved (a middle draw is
/// dropped for odd lengths) and the halves treated as separate segments:
///
///   W     = mean within-segment variance
///   B / n = variance of segment means
///   R-hat = sqrt(((n - 1) / n * W + B / n) / W)
///
/// Returns 1.0 when every segment has zero variance.
double split_rhat(const std::vector<Eigen::VectorXd>& chains);

struct EssResult {
  double ess = 0.0;
  bool zero_variance = false;
};

/// Autocorrelation-based effective sample size over all chains, using the
/// combined-chain autocorrelation estimate and Geyer's initial monotone
/// positive sequence truncation. Capped at the total draw count.
EssResult effective_sample_size_detail(const std::vector<Eigen::VectorXd>& chains);

inline double effective_sample_size(const std::vector<Eigen::VectorXd>& chains) {
  return effective_sample_size_detail(chains).ess;
}

struct ParameterDiagnostic {
  std::string name;
  double rhat = 1.0;
  double ess = 0.0;
  bool zero_variance = false;
  bool flagged = false;  // rhat > threshold
};

struct DiagnosticSummary {
  std::vector<ParameterDiagnostic> parameters;
  double threshold = 1.1;
  long total_draws = 0;
  long divergences = 0;

  int flagged_count() const;
  double flagged_fraction() const;
  double max_rhat() const;
  double min_ess() const;
  /// Flagged fractions at or below 0.05% are reported as acceptable.
  bool acceptable() const { return flagged_fraction() <= 0.0005; }
  std::string summary_line() const;
};

/// Requires at least two chains.
DiagnosticSummary convergence_report(const PosteriorDraws& draws,
                                     double threshold = 1.1);

/// CSV: parameter_name, rhat, ess, flagged.
void write_diagnostics_csv(const std::filesystem::path& path,
                           const DiagnosticSummary& summary);

/// One CSV per parameter with columns chain, iteration, value. Returns the
/// files written; unknown parameter names throw PreconditionError.
std::vector<std::filesystem::path> export_traces(
    const std::filesystem::path& dir, const PosteriorDraws& draws,
    const std::vector<std::string>& parameter_names);

}  // namespace payequity
