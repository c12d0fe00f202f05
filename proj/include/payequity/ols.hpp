#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "payequity/report.hpp"
#include "payequity/workforce.hpp"

namespace payequity {

/// Multiple-regression design for the baseline model: one indicator column
/// per job-geo, one female-slope column per gender-variant job-geo, then the
/// three covariates. No global intercept and no GJS-geo terms.
///
/// Stored in factored form (group membership, female flag, covariates);
/// `to_dense()` materializes the full matrix.
struct DesignMatrix {
  std::vector<int> group_of_row;
  Eigen::VectorXd female;                      // 0/1 per row
  Eigen::Matrix<double, Eigen::Dynamic, 3> covariates;
  int num_groups = 0;
  std::vector<int> female_column;  // per job-geo, -1 when gender-invariant
  std::vector<std::string> labels;

  Eigen::Index rows() const { return female.size(); }
  int cols() const { return static_cast<int>(labels.size()); }
  int num_female_columns() const { return cols() - num_groups - 3; }
  int covariate_column(int k) const { return cols() - 3 + k; }
  Eigen::MatrixXd to_dense() const;
};

DesignMatrix build_design_matrix(const std::vector<WorkerRecord>& records,
                                 const FactorIndex& index);

struct LmFit {
  std::vector<std::string> labels;
  Eigen::VectorXd coefficients;  // NaN where inestimable
  std::vector<bool> estimable;
  Eigen::VectorXd std_errors;    // NaN where inestimable or dof == 0
  std::optional<double> residual_variance;  // empty when dof == 0
  Eigen::Index residual_dof = 0;
  int rank = 0;
  Eigen::VectorXd fitted;
  Eigen::VectorXd residuals;
  std::vector<int> female_column;  // copied from the design
  std::vector<int> estimable_groups;  // job-geos with a female-slope estimate

  std::optional<double> female_effect(int job_geo) const;
  std::optional<double> female_effect_se(int job_geo) const;
};

/// Least squares with rank-revealing column-pivoted Householder QR applied
/// block-wise: each job-geo's indicator/female-slope block is projected out
/// exactly, the residualized covariates are solved jointly, and group
/// coefficients recovered by back-substitution. Columns found collinear are
/// reported inestimable rather than zeroed.
LmFit fit_ols(const DesignMatrix& X, const Eigen::VectorXd& y);

struct ComparisonRow {
  int job_geo = 0;
  int n = 0;
  int n_female = 0;
  double hlm_effect = 0.0;
  std::optional<double> lm_effect;
  std::optional<double> lm_se;
};

struct ShrinkageSummary {
  int small_k = 4;
  int n_groups = 0;  // gender-variant groups with size <= small_k
  double mean_abs_hlm = 0.0;
  double mean_abs_lm = 0.0;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;  // ascending group size
  ShrinkageSummary shrinkage;
  long lm_inestimable_workers = 0;
  double lm_inestimable_worker_pct = 0.0;

  std::string to_csv() const;
  /// Long-format series (x, job_geo, n, model, effect) for redrawing the
  /// HLM-vs-LM scatter.
  std::string plot_data_csv() const;
  std::string shrinkage_text() const;
};

ComparisonTable compare_estimates(const std::vector<GroupGapSummary>& hlm,
                                  const LmFit& lm, const FactorIndex& index,
                                  int small_k = 4);

}  // namespace payequity
