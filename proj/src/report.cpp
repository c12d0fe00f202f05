#include "payequity/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "payequity/errors.hpp"
#include "payequity/io.hpp"

namespace payequity {

namespace {

void check_match(const PosteriorDraws& draws, const std::vector<WorkerRecord>& records,
                 const FactorIndex& index) {
  if (index.num_workers() != records.size() ||
      draws.layout.G != index.num_gjs_geo() || draws.layout.J != index.num_job_geo()) {
    throw PreconditionError("draws, records and factor index describe different datasets");
  }
}

/// Column offsets of the natural-scale blocks used by the predictor.
struct NaturalColumns {
  int beta0_g, beta1_g, beta0_j, beta1_j, beta2;

  explicit NaturalColumns(const ParamLayout& l)
      : beta0_g(0),
        beta1_g(l.G),
        beta0_j(2 * l.G),
        beta1_j(2 * l.G + l.J),
        beta2(2 * l.G + 2 * l.J + 8) {}
};

/// Linear predictor split into gender-free and female-slope parts.
struct PredictorParts {
  double base;
  double slope;
};

PredictorParts predictor(const Eigen::VectorXd& theta, const NaturalColumns& c,
                         const WorkerRecord& w, int g, int j) {
  return {theta(c.beta0_g + g) + theta(c.beta0_j + j) +
              theta(c.beta2) * w.recent_perf + theta(c.beta2 + 1) * w.past_perf +
              theta(c.beta2 + 2) * w.time_in_job,
          theta(c.beta1_g + g) + theta(c.beta1_j + j)};
}

/// Type-7 (linear interpolation) quantile of sorted data.
double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<PredictionPair> counterfactual_predictions(
    const PosteriorDraws& draws, const std::vector<WorkerRecord>& records,
    const FactorIndex& index) {
  check_match(draws, records, index);
  const NaturalColumns cols(draws.layout);
  const Eigen::MatrixXd all = draws.stacked();
  const auto n = records.size();
  std::vector<double> factual(n, 0.0), counterfactual(n, 0.0);
  for (Eigen::Index s = 0; s < all.rows(); ++s) {
    const Eigen::VectorXd theta = all.row(s).transpose();
    for (std::size_t i = 0; i < n; ++i) {
      const auto [base, slope] = predictor(theta, cols, records[i], index.g_of[i], index.j_of[i]);
      const double as_female = std::exp(base + slope);
      const double as_male = std::exp(base);
      factual[i] += records[i].female ? as_female : as_male;
      counterfactual[i] += records[i].female ? as_male : as_female;
    }
  }
  const double inv = 1.0 / static_cast<double>(all.rows());
  std::vector<PredictionPair> pairs(n);
  for (std::size_t i = 0; i < n; ++i) {
    pairs[i] = {records[i].worker_id, records[i].female, factual[i] * inv,
                counterfactual[i] * inv};
  }
  return pairs;
}

namespace {

/// Correctly rounded sum of finite doubles (Shewchuk's non-overlapping
/// partials with a round-half-even correction). The result does not depend
/// on the order of `xs` and doubling every term doubles it exactly.
class ExactSum {
public:
  void add(double x) {
    std::size_t i = 0;
    for (double y : partials_) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials_[i++] = lo;
      x = hi;
    }
    partials_.resize(i);
    partials_.push_back(x);
  }

  double value() const {
    std::size_t n = partials_.size();
    if (n == 0) return 0.0;
    double hi = partials_[--n];
    double lo = 0.0;
    while (n > 0) {
      const double x = hi;
      const double y = partials_[--n];
      hi = x + y;
      lo = y - (hi - x);
      if (lo != 0.0) break;
    }
    // Half-way case: the remaining partials decide the rounding direction.
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      if (y == x - hi) hi = x;
    }
    return hi;
  }

private:
  std::vector<double> partials_;
};

}  // namespace

double adjusted_cents_to_dollar(const std::vector<PredictionPair>& pairs) {
  if (pairs.empty()) throw PreconditionError("no predictions given");
  ExactSum female, male;
  for (const auto& p : pairs) {
    if (!(p.factual_mean_usd > 0.0) || !(p.counterfactual_mean_usd > 0.0)) {
      throw PreconditionError("predictions must be positive dollar amounts");
    }
    female.add(p.y_hat_female());
    male.add(p.y_hat_male());
  }
  return female.value() / male.value();
}

std::vector<GroupGapSummary> group_gap_summaries(
    const PosteriorDraws& draws, const std::vector<WorkerRecord>& records,
    const FactorIndex& index, double interval_mass) {
  check_match(draws, records, index);
  if (!(interval_mass > 0.0 && interval_mass < 1.0)) {
    throw PreconditionError("interval_mass must lie strictly inside (0, 1)");
  }
  const NaturalColumns cols(draws.layout);
  const Eigen::MatrixXd all = draws.stacked();
  const auto S = static_cast<std::size_t>(all.rows());
  const auto g_of_j = index.gjs_geo_of_job_geo();
  const double tail = 0.5 * (1.0 - interval_mass);

  // Per-draw mean dollar gap of every group, one pass over the workers.
  Eigen::MatrixXd gaps = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S), index.num_job_geo());
  for (std::size_t s = 0; s < S; ++s) {
    const auto row = static_cast<Eigen::Index>(s);
    const Eigen::VectorXd theta = all.row(row).transpose();
    for (std::size_t i = 0; i < records.size(); ++i) {
      const int j = index.j_of[i];
      const auto [base, slope] = predictor(theta, cols, records[i], index.g_of[i], j);
      gaps(row, j) += std::exp(base + slope) - std::exp(base);
    }
  }

  std::vector<GroupGapSummary> out;
  out.reserve(index.num_job_geo());
  std::vector<double> effect(S), gap(S);
  for (int j = 0; j < index.num_job_geo(); ++j) {
    const int g = g_of_j[j];
    for (std::size_t s = 0; s < S; ++s) {
      const auto row = static_cast<Eigen::Index>(s);
      effect[s] = all(row, cols.beta1_g + g) + all(row, cols.beta1_j + j);
      gap[s] = gaps(row, j) / static_cast<double>(index.group_sizes[j]);
    }
    GroupGapSummary sum;
    sum.job_geo = j;
    sum.gjs_geo = g;
    sum.job = index.job_geo_levels[j].first;
    sum.geo = index.job_geo_levels[j].second;
    sum.n_workers = index.group_sizes[j];
    sum.n_female = index.gender_counts[j].female;

    const double mean = std::accumulate(effect.begin(), effect.end(), 0.0) / S;
    double ss = 0.0;
    for (double e : effect) ss += (e - mean) * (e - mean);
    sum.effect_mean = mean;
    sum.effect_sd = S > 1 ? std::sqrt(ss / (S - 1)) : 0.0;
    std::sort(effect.begin(), effect.end());
    sum.ci_low = quantile_sorted(effect, tail);
    sum.ci_high = quantile_sorted(effect, 1.0 - tail);
    sum.significant = sum.ci_low > 0.0 || sum.ci_high < 0.0;

    sum.mean_gap_usd = std::accumulate(gap.begin(), gap.end(), 0.0) / S;
    std::sort(gap.begin(), gap.end());
    sum.median_gap_usd = quantile_sorted(gap, 0.5);
    out.push_back(std::move(sum));
  }
  return out;
}

std::vector<RaiseRecommendation> raise_recommendations(
    const std::vector<PredictionPair>& pairs,
    const std::vector<GroupGapSummary>& summaries, const FactorIndex& index) {
  if (pairs.size() != index.num_workers() ||
      summaries.size() != static_cast<std::size_t>(index.num_job_geo())) {
    throw PreconditionError("predictions, summaries and index do not match");
  }
  std::vector<RaiseRecommendation> raises;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& s = summaries[index.j_of[i]];
    if (!s.significant) continue;
    // Interval entirely below zero: women are underpaid; entirely above:
    // men are.
    const bool female_disadvantaged = s.ci_high < 0.0;
    const auto& p = pairs[i];
    if (p.female != female_disadvantaged) continue;
    const double raise = std::max(0.0, p.counterfactual_mean_usd - p.factual_mean_usd);
    if (raise > 0.0) raises.push_back({p.worker_id, raise});
  }
  return raises;
}

FitMetrics fit_metrics(const Eigen::VectorXd& observed,
                       const Eigen::VectorXd& predicted) {
  if (observed.size() == 0 || observed.size() != predicted.size()) {
    throw PreconditionError("fit metrics need equal-length nonempty vectors");
  }
  const double ss_tot = (observed.array() - observed.mean()).square().sum();
  if (!(ss_tot > 0.0)) {
    throw PreconditionError("R^2 undefined: observed log-salaries have zero variance");
  }
  const double ss_res = (observed - predicted).squaredNorm();
  return {1.0 - ss_res / ss_tot,
          std::sqrt(ss_res / static_cast<double>(observed.size()))};
}

FitMetrics fit_metrics(const PosteriorDraws& draws,
                       const std::vector<WorkerRecord>& records,
                       const FactorIndex& index) {
  check_match(draws, records, index);
  if (records.empty()) throw PreconditionError("fit metrics need data");
  const NaturalColumns cols(draws.layout);
  const Eigen::MatrixXd all = draws.stacked();
  const auto n = static_cast<Eigen::Index>(records.size());
  Eigen::VectorXd observed(n), predicted = Eigen::VectorXd::Zero(n);
  for (Eigen::Index s = 0; s < all.rows(); ++s) {
    const Eigen::VectorXd theta = all.row(s).transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto [base, slope] = predictor(theta, cols, records[i], index.g_of[i], index.j_of[i]);
      predicted(i) += records[i].female ? base + slope : base;
    }
  }
  predicted /= static_cast<double>(all.rows());
  for (Eigen::Index i = 0; i < n; ++i) observed(i) = records[i].log_salary;
  return fit_metrics(observed, predicted);
}

// ---------------------------------------------------------------------------

int GapReport::significant_groups() const {
  return static_cast<int>(std::count_if(groups.begin(), groups.end(),
                                        [](const auto& g) { return g.significant; }));
}

double GapReport::total_raises_usd() const {
  double total = 0.0;
  for (const auto& r : raises) total += r.raise_usd;
  return total;
}

GapReport build_gap_report(const PosteriorDraws& draws,
                           const std::vector<WorkerRecord>& records,
                           const FactorIndex& index, double interval_mass) {
  GapReport report;
  report.interval_mass = interval_mass;
  report.n_workers = records.size();
  const auto pairs = counterfactual_predictions(draws, records, index);
  report.groups = group_gap_summaries(draws, records, index, interval_mass);
  report.cents_to_dollar = adjusted_cents_to_dollar(pairs);
  report.raises = raise_recommendations(pairs, report.groups, index);
  report.fit = fit_metrics(draws, records, index);
  return report;
}

std::string gap_report_json(const GapReport& report) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : report.groups) {
    groups.push_back({{"job_geo", g.job_geo},
                      {"job", g.job},
                      {"geo", g.geo},
                      {"gjs_geo", g.gjs_geo},
                      {"n", g.n_workers},
                      {"n_female", g.n_female},
                      {"effect_mean", g.effect_mean},
                      {"effect_sd", g.effect_sd},
                      {"ci_low", g.ci_low},
                      {"ci_high", g.ci_high},
                      {"significant", g.significant},
                      {"median_gap_usd", g.median_gap_usd},
                      {"mean_gap_usd", g.mean_gap_usd}});
  }
  nlohmann::json raises = nlohmann::json::array();
  for (const auto& r : report.raises) {
    raises.push_back({{"worker_id", r.worker_id}, {"raise_usd", r.raise_usd}});
  }
  const nlohmann::json j = {
      {"adjusted_cents_to_dollar", report.cents_to_dollar},
      {"interval_mass", report.interval_mass},
      {"n_workers", report.n_workers},
      {"n_groups", report.groups.size()},
      {"significant_groups", report.significant_groups()},
      {"fit", {{"r_squared", report.fit.r_squared}, {"rmse", report.fit.rmse}}},
      {"groups", groups},
      {"raises", raises},
  };
  return j.dump(2) + "\n";
}

std::string gap_report_text(const GapReport& report) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4);
  ss << "Adjusted cents-to-the-dollar: " << report.cents_to_dollar << '\n';
  ss << "In-sample R^2: " << report.fit.r_squared << "   RMSE (log): " << report.fit.rmse
     << '\n';
  ss << std::setprecision(2);
  ss << "Workers: " << report.n_workers << "   Comparison groups: " << report.groups.size()
     << "   Significant: " << report.significant_groups() << " ("
     << 100.0 * report.interval_mass << "% interval)   Raises: " << report.raises.size()
     << " totaling $" << report.total_raises_usd() << "\n\n";

  ss << std::left << std::setw(24) << "job_geo" << std::right << std::setw(6) << "n"
     << std::setw(6) << "fem" << std::setw(11) << "effect" << std::setw(10) << "sd"
     << std::setw(11) << "ci_low" << std::setw(11) << "ci_high" << std::setw(5) << "sig"
     << std::setw(13) << "median_gap$" << '\n';
  for (const auto& g : report.groups) {
    ss << std::left << std::setw(24) << (g.job + " " + g.geo) << std::right << std::setw(6)
       << g.n_workers << std::setw(6) << g.n_female << std::setprecision(4) << std::setw(11)
       << g.effect_mean << std::setw(10) << g.effect_sd << std::setw(11) << g.ci_low
       << std::setw(11) << g.ci_high << std::setw(5) << (g.significant ? "*" : "")
       << std::setprecision(2) << std::setw(13) << g.median_gap_usd << '\n';
  }
  return ss.str();
}

std::string group_summaries_csv(const std::vector<GroupGapSummary>& groups) {
  std::ostringstream ss;
  ss << "job_geo,n,n_female,effect_mean,effect_sd,ci_low,ci_high,significant,median_gap_usd\n";
  for (const auto& g : groups) {
    ss << g.job_geo << ',' << g.n_workers << ',' << g.n_female << ','
       << io::format_double(g.effect_mean) << ',' << io::format_double(g.effect_sd) << ','
       << io::format_double(g.ci_low) << ',' << io::format_double(g.ci_high) << ','
       << (g.significant ? 1 : 0) << ',' << io::format_double(g.median_gap_usd) << '\n';
  }
  return ss.str();
}

std::string raises_csv(const std::vector<RaiseRecommendation>& raises) {
  std::ostringstream ss;
  ss << "worker_id,raise_usd\n";
  for (const auto& r : raises) {
    ss << io::csv_escape(r.worker_id) << ',' << io::format_double(r.raise_usd) << '\n';
  }
  return ss.str();
}

}  // namespace payequity
