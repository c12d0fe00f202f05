#include "payequity/ols.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "payequity/errors.hpp"
#include "payequity/io.hpp"

namespace payequity {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// (A'A)^{-1} for the leading `rank` pivoted columns of a QR, returned in
/// the original (un-pivoted) order of those columns.
Eigen::MatrixXd inverse_gram(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr) {
  const Eigen::Index r = qr.rank();
  const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(r, r).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd R_inv =
      R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(r, r));
  return R_inv * R_inv.transpose();
}

}  // namespace

Eigen::MatrixXd DesignMatrix::to_dense() const {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(rows(), cols());
  for (Eigen::Index i = 0; i < rows(); ++i) {
    const int j = group_of_row[i];
    X(i, j) = 1.0;
    if (female_column[j] >= 0) X(i, female_column[j]) = female(i);
    for (int k = 0; k < 3; ++k) X(i, covariate_column(k)) = covariates(i, k);
  }
  return X;
}

DesignMatrix build_design_matrix(const std::vector<WorkerRecord>& records,
                                 const FactorIndex& index) {
  if (records.empty() || index.num_workers() != records.size()) {
    throw PreconditionError("design matrix needs nonempty data matching the index");
  }
  DesignMatrix X;
  const auto n = static_cast<Eigen::Index>(records.size());
  X.group_of_row = index.j_of;
  X.num_groups = index.num_job_geo();
  X.female.resize(n);
  X.covariates.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[i];
    X.female(i) = r.female ? 1.0 : 0.0;
    X.covariates.row(i) << r.recent_perf, r.past_perf, r.time_in_job;
  }
  auto level = [&](int j) {
    return index.job_geo_levels[j].first + "@" + index.job_geo_levels[j].second;
  };
  for (int j = 0; j < X.num_groups; ++j) X.labels.push_back("group:" + level(j));
  X.female_column.assign(X.num_groups, -1);
  for (int j = 0; j < X.num_groups; ++j) {
    if (index.gender_counts[j].single_gender()) continue;
    X.female_column[j] = static_cast<int>(X.labels.size());
    X.labels.push_back("female:" + level(j));
  }
  for (const char* c : {"recent_perf", "past_perf", "time_in_job"}) X.labels.emplace_back(c);
  return X;
}

// ---------------------------------------------------------------------------

std::optional<double> LmFit::female_effect(int job_geo) const {
  const int c = female_column.at(job_geo);
  if (c < 0 || !estimable[c]) return std::nullopt;
  return coefficients(c);
}

std::optional<double> LmFit::female_effect_se(int job_geo) const {
  const int c = female_column.at(job_geo);
  if (c < 0 || !estimable[c] || std::isnan(std_errors(c))) return std::nullopt;
  return std_errors(c);
}

LmFit fit_ols(const DesignMatrix& X, const Eigen::VectorXd& y) {
  const Eigen::Index n = X.rows();
  if (y.size() != n) throw PreconditionError("response length does not match design");
  const int p = X.cols();

  std::vector<std::vector<Eigen::Index>> rows_of(X.num_groups);
  for (Eigen::Index i = 0; i < n; ++i) rows_of[X.group_of_row[i]].push_back(i);

  // Per-group block: columns [indicator, female?].
  struct Block {
    std::vector<int> cols;       // design columns kept (estimable)
    Eigen::VectorXd b;           // block coefficients regressing y
    Eigen::MatrixXd A;           // block coefficients regressing covariates
    Eigen::MatrixXd inv_gram;    // (D'D)^{-1}
  };
  std::vector<Block> blocks(X.num_groups);
  Eigen::VectorXd y_res(n);
  Eigen::MatrixXd C_res(n, 3);
  std::vector<bool> estimable(p, false);
  int rank = 0;

  for (int j = 0; j < X.num_groups; ++j) {
    const auto& rows = rows_of[j];
    if (rows.empty()) continue;
    const auto nj = static_cast<Eigen::Index>(rows.size());
    std::vector<int> cols{j};
    if (X.female_column[j] >= 0) cols.push_back(X.female_column[j]);
    Eigen::MatrixXd D(nj, static_cast<Eigen::Index>(cols.size()));
    Eigen::VectorXd yj(nj);
    Eigen::MatrixXd Cj(nj, 3);
    for (Eigen::Index r = 0; r < nj; ++r) {
      D(r, 0) = 1.0;
      if (cols.size() > 1) D(r, 1) = X.female(rows[r]);
      yj(r) = y(rows[r]);
      Cj.row(r) = X.covariates.row(rows[r]);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
    if (qr.rank() < D.cols()) {
      // Only the female column can be dependent on the indicator.
      cols.resize(1);
      D.conservativeResize(Eigen::NoChange, 1);
      qr.compute(D);
    }
    Block& blk = blocks[j];
    blk.cols = cols;
    blk.b = qr.solve(yj);
    blk.A = qr.solve(Cj);
    const Eigen::MatrixXd P = qr.colsPermutation();
    blk.inv_gram = P * inverse_gram(qr) * P.transpose();
    for (int c : cols) estimable[c] = true;
    rank += static_cast<int>(cols.size());
    const Eigen::VectorXd yr = yj - D * blk.b;
    const Eigen::MatrixXd Cr = Cj - D * blk.A;
    for (Eigen::Index r = 0; r < nj; ++r) {
      y_res(rows[r]) = yr(r);
      C_res.row(rows[r]) = Cr.row(r);
    }
  }

  // Covariates on the group-residualized data.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_c(C_res);
  const Eigen::Index rc = qr_c.rank();
  std::vector<int> cov_kept;
  for (Eigen::Index k = 0; k < rc; ++k) cov_kept.push_back(qr_c.colsPermutation().indices()(k));
  std::sort(cov_kept.begin(), cov_kept.end());
  const auto nk = static_cast<Eigen::Index>(cov_kept.size());
  Eigen::VectorXd beta_c = Eigen::VectorXd::Zero(3);
  Eigen::MatrixXd cov_inv_gram = Eigen::MatrixXd::Zero(nk, nk);
  if (nk > 0) {
    Eigen::MatrixXd Cs(n, nk);
    for (Eigen::Index k = 0; k < nk; ++k) Cs.col(k) = C_res.col(cov_kept[k]);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_s(Cs);
    const Eigen::VectorXd bs = qr_s.solve(y_res);
    for (Eigen::Index k = 0; k < nk; ++k) beta_c(cov_kept[k]) = bs(k);
    const Eigen::MatrixXd P = qr_s.colsPermutation();
    cov_inv_gram = P * inverse_gram(qr_s) * P.transpose();
    for (int k : cov_kept) estimable[X.covariate_column(k)] = true;
    rank += static_cast<int>(nk);
  }

  LmFit fit;
  fit.labels = X.labels;
  fit.female_column = X.female_column;
  fit.estimable = estimable;
  fit.rank = rank;
  fit.coefficients = Eigen::VectorXd::Constant(p, kNaN);
  fit.std_errors = Eigen::VectorXd::Constant(p, kNaN);
  for (int k : cov_kept) fit.coefficients(X.covariate_column(k)) = beta_c(k);
  for (int j = 0; j < X.num_groups; ++j) {
    const Block& blk = blocks[j];
    if (blk.cols.empty()) continue;
    const Eigen::VectorXd theta = blk.b - blk.A * beta_c;
    for (std::size_t c = 0; c < blk.cols.size(); ++c) {
      fit.coefficients(blk.cols[c]) = theta(static_cast<Eigen::Index>(c));
    }
  }

  fit.fitted.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int j = X.group_of_row[i];
    const Block& blk = blocks[j];
    double v = fit.coefficients(j) + X.covariates.row(i).dot(beta_c);
    if (blk.cols.size() > 1) v += fit.coefficients(blk.cols[1]) * X.female(i);
    fit.fitted(i) = v;
  }
  fit.residuals = y - fit.fitted;
  fit.residual_dof = n - rank;

  if (fit.residual_dof > 0) {
    const double s2 = fit.residuals.squaredNorm() / static_cast<double>(fit.residual_dof);
    fit.residual_variance = s2;
    for (Eigen::Index k = 0; k < nk; ++k) {
      fit.std_errors(X.covariate_column(cov_kept[k])) = std::sqrt(s2 * cov_inv_gram(k, k));
    }
    // Var(theta_j) = s2 * [(D'D)^{-1} + A M A'] with M the covariate block's
    // inverse Gram matrix.
    for (int j = 0; j < X.num_groups; ++j) {
      const Block& blk = blocks[j];
      if (blk.cols.empty()) continue;
      Eigen::MatrixXd As(blk.A.rows(), nk);
      for (Eigen::Index k = 0; k < nk; ++k) As.col(k) = blk.A.col(cov_kept[k]);
      const Eigen::MatrixXd V = blk.inv_gram + As * cov_inv_gram * As.transpose();
      for (std::size_t c = 0; c < blk.cols.size(); ++c) {
        const auto cc = static_cast<Eigen::Index>(c);
        fit.std_errors(blk.cols[c]) = std::sqrt(s2 * V(cc, cc));
      }
    }
  }

  for (int j = 0; j < X.num_groups; ++j) {
    const int c = X.female_column[j];
    if (c >= 0 && estimable[c]) fit.estimable_groups.push_back(j);
  }
  return fit;
}

// ---------------------------------------------------------------------------

ComparisonTable compare_estimates(const std::vector<GroupGapSummary>& hlm,
                                  const LmFit& lm, const FactorIndex& index,
                                  int small_k) {
  const auto J = static_cast<std::size_t>(index.num_job_geo());
  if (hlm.size() != J || lm.female_column.size() != J) {
    throw PreconditionError("HLM summaries, LM fit and index describe different datasets");
  }
  ComparisonTable table;
  table.shrinkage.small_k = small_k;
  double sum_hlm = 0.0, sum_lm = 0.0;
  for (std::size_t j = 0; j < J; ++j) {
    if (hlm[j].job_geo != static_cast<int>(j) ||
        hlm[j].n_workers != index.group_sizes[j]) {
      throw PreconditionError("HLM summary order does not match the factor index");
    }
    ComparisonRow row;
    row.job_geo = static_cast<int>(j);
    row.n = index.group_sizes[j];
    row.n_female = index.gender_counts[j].female;
    row.hlm_effect = hlm[j].effect_mean;
    row.lm_effect = lm.female_effect(row.job_geo);
    row.lm_se = lm.female_effect_se(row.job_geo);
    if (!row.lm_effect) {
      table.lm_inestimable_workers += row.n;
    } else if (row.n <= small_k) {
      ++table.shrinkage.n_groups;
      sum_hlm += std::abs(row.hlm_effect);
      sum_lm += std::abs(*row.lm_effect);
    }
    table.rows.push_back(row);
  }
  if (table.shrinkage.n_groups > 0) {
    table.shrinkage.mean_abs_hlm = sum_hlm / table.shrinkage.n_groups;
    table.shrinkage.mean_abs_lm = sum_lm / table.shrinkage.n_groups;
  }
  table.lm_inestimable_worker_pct =
      100.0 * static_cast<double>(table.lm_inestimable_workers) /
      static_cast<double>(index.num_workers());
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [](const auto& a, const auto& b) { return a.n < b.n; });
  return table;
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream ss;
  ss << "job_geo,n,hlm_effect,lm_effect,lm_se\n";
  for (const auto& r : rows) {
    ss << r.job_geo << ',' << r.n << ',' << io::format_double(r.hlm_effect) << ','
       << (r.lm_effect ? io::format_double(*r.lm_effect) : "") << ','
       << (r.lm_se ? io::format_double(*r.lm_se) : "") << '\n';
  }
  return ss.str();
}

std::string ComparisonTable::plot_data_csv() const {
  std::ostringstream ss;
  ss << "x,job_geo,n,model,effect\n";
  for (std::size_t x = 0; x < rows.size(); ++x) {
    const auto& r = rows[x];
    ss << x << ',' << r.job_geo << ',' << r.n << ",HLM," << io::format_double(r.hlm_effect)
       << '\n';
    if (r.lm_effect) {
      ss << x << ',' << r.job_geo << ',' << r.n << ",LM," << io::format_double(*r.lm_effect)
         << '\n';
    }
  }
  return ss.str();
}

std::string ComparisonTable::shrinkage_text() const {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(6);
  ss << "comparison groups: " << rows.size() << '\n';
  ss << "gender-variant groups with n <= " << shrinkage.small_k << ": " << shrinkage.n_groups
     << '\n';
  ss << "  mean |HLM female effect|: " << shrinkage.mean_abs_hlm << '\n';
  ss << "  mean |LM female effect|:  " << shrinkage.mean_abs_lm << '\n';
  ss << std::setprecision(2);
  ss << "workers in LM-inestimable groups: " << lm_inestimable_workers << " ("
     << lm_inestimable_worker_pct << "% of rows)\n";
  return ss.str();
}

}  // namespace payequity
