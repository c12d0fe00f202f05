#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "payequity/hmc.hpp"
#include "payequity/workforce.hpp"

namespace payequity {

/// Posterior mean dollar predictions for one worker at the recorded and the
/// flipped gender.
struct PredictionPair {
  std::string worker_id;
  bool female = false;
  double factual_mean_usd = 0.0;
  double counterfactual_mean_usd = 0.0;

  double y_hat_female() const { return female ? factual_mean_usd : counterfactual_mean_usd; }
  double y_hat_male() const { return female ? counterfactual_mean_usd : factual_mean_usd; }
};

/// Averages exp(linear predictor) over all draws (mean of exponentials, no
/// residual noise) at both genders for every worker.
std::vector<PredictionPair> counterfactual_predictions(
    const PosteriorDraws& draws, const std::vector<WorkerRecord>& records,
    const FactorIndex& index);

/// sum(y_hat_female) / sum(y_hat_male) over all workers. Both sums are
/// correctly rounded, so the ratio ignores worker order and is unchanged when
/// every worker is duplicated.
double adjusted_cents_to_dollar(const std::vector<PredictionPair>& pairs);

struct GroupGapSummary {
  int job_geo = 0;
  int gjs_geo = 0;
  std::string job;
  std::string geo;
  int n_workers = 0;
  int n_female = 0;
  // Total female effect beta1_g[g] + beta1_j[j], log scale.
  double effect_mean = 0.0;
  double effect_sd = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool significant = false;  // interval excludes 0
  // Per-draw mean over the group's workers of (female - male) dollar
  // prediction, summarized over draws.
  double median_gap_usd = 0.0;
  double mean_gap_usd = 0.0;
};

/// One summary per job-geo, including single-worker and single-gender
/// groups. `interval_mass` is the equal-tailed credible mass.
std::vector<GroupGapSummary> group_gap_summaries(
    const PosteriorDraws& draws, const std::vector<WorkerRecord>& records,
    const FactorIndex& index, double interval_mass = 0.95);

struct RaiseRecommendation {
  std::string worker_id;
  double raise_usd = 0.0;
};

/// Workers of the disadvantaged gender in a significant group get
/// max(0, opposite-gender prediction - own-gender prediction). Everyone else
/// is omitted.
std::vector<RaiseRecommendation> raise_recommendations(
    const std::vector<PredictionPair>& pairs,
    const std::vector<GroupGapSummary>& summaries, const FactorIndex& index);

struct FitMetrics {
  double r_squared = 0.0;
  double rmse = 0.0;
};

/// R^2 and RMSE of observed log-salary against per-worker posterior mean
/// predicted log-salary at the recorded gender.
FitMetrics fit_metrics(const PosteriorDraws& draws,
                       const std::vector<WorkerRecord>& records,
                       const FactorIndex& index);
FitMetrics fit_metrics(const Eigen::VectorXd& observed,
                       const Eigen::VectorXd& predicted);

struct GapReport {
  std::vector<GroupGapSummary> groups;
  double cents_to_dollar = 1.0;
  std::vector<RaiseRecommendation> raises;
  FitMetrics fit;
  double interval_mass = 0.95;
  std::size_t n_workers = 0;

  int significant_groups() const;
  double total_raises_usd() const;
};

GapReport build_gap_report(const PosteriorDraws& draws,
                           const std::vector<WorkerRecord>& records,
                           const FactorIndex& index, double interval_mass = 0.95);

std::string gap_report_json(const GapReport& report);
/// Aligned-column text; the header line carries the ratio to 4 decimals.
std::string gap_report_text(const GapReport& report);
/// job_geo, n, n_female, effect_mean, effect_sd, ci_low, ci_high,
/// significant, median_gap_usd.
std::string group_summaries_csv(const std::vector<GroupGapSummary>& groups);
std::string raises_csv(const std::vector<RaiseRecommendation>& raises);

}  // namespace payequity
