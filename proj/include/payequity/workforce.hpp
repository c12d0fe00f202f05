#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "payequity/io.hpp"

namespace payequity {

/// One worker row. `log_salary` is always `std::log(salary)`.
struct WorkerRecord {
  std::string worker_id;
  std::string geo;
  std::string gjs;
  std::string job;
  bool female = false;
  double recent_perf = 0.0;
  double past_perf = 0.0;
  double time_in_job = 0.0;  // years
  double salary = 0.0;       // annualized USD
  double log_salary = 0.0;

  bool operator==(const WorkerRecord&) const = default;
};

enum class ExclusionReason {
  MissingField,
  UnparseableField,
  InvalidGender,
  NonpositiveSalary,
  NegativeTimeInJob,
};

std::string to_string(ExclusionReason reason);

struct ExclusionEntry {
  std::size_t row_number = 0;  // 1-based data row, header excluded
  std::string worker_id;
  ExclusionReason reason = ExclusionReason::MissingField;
};

using ExclusionLog = std::vector<ExclusionEntry>;

struct LoadResult {
  std::vector<WorkerRecord> records;
  ExclusionLog exclusions;
  std::size_t input_rows = 0;
};

/// Columns every input file must carry. Extra columns are ignored.
inline const std::vector<std::string>& required_columns() {
  static const std::vector<std::string> cols{
      "worker_id", "geo", "gjs", "job", "female",
      "recent_perf", "past_perf", "time_in_job", "salary"};
  return cols;
}

/// Parses a workforce CSV. Invalid rows are dropped and itemized in the
/// exclusion log; file-level problems throw IoError, SchemaError or
/// EmptyDatasetError.
LoadResult load_csv(const std::filesystem::path& path);
LoadResult parse_csv(std::istream& in);

/// Writes records using the required column set. Doubles are written in
/// shortest round-trip form so reloading reproduces every field exactly.
void write_csv(const std::filesystem::path& path,
               const std::vector<WorkerRecord>& records);
void write_csv(std::ostream& out, const std::vector<WorkerRecord>& records);

void write_exclusion_log(const std::filesystem::path& path,
                         const ExclusionLog& log);

struct GenderCount {
  int female = 0;
  int male = 0;

  int total() const { return female + male; }
  bool single_gender() const { return female == 0 || male == 0; }
};

/// Dense indexing of the crossed GJS-geo and job-geo factors, assigned in
/// first-appearance order.
struct FactorIndex {
  std::vector<std::pair<std::string, std::string>> gjs_geo_levels;  // (gjs, geo)
  std::vector<std::pair<std::string, std::string>> job_geo_levels;  // (job, geo)
  std::vector<int> g_of;  // worker -> GJS-geo
  std::vector<int> j_of;  // worker -> job-geo
  std::vector<int> group_sizes;             // per job-geo
  std::vector<GenderCount> gender_counts;   // per job-geo

  int num_gjs_geo() const { return static_cast<int>(gjs_geo_levels.size()); }
  int num_job_geo() const { return static_cast<int>(job_geo_levels.size()); }
  std::size_t num_workers() const { return g_of.size(); }

  /// Members of every job-geo, in worker order.
  std::vector<std::vector<int>> job_geo_members() const;
  /// GJS-geo shared by most members of each job-geo (lowest index on ties).
  std::vector<int> gjs_geo_of_job_geo() const;
};

FactorIndex build_factor_index(const std::vector<WorkerRecord>& records);

struct FactorImbalance {
  std::string factor;
  int levels = 0;
  double pct_single_gender = 0.0;
  double pct_single_worker = 0.0;
};

/// Per-factor level counts and shares of single-gender / single-worker
/// levels for geo, GJS, GJS-geo, job and job-geo, in that order.
struct ImbalanceSummary {
  std::vector<FactorImbalance> factors;

  const FactorImbalance& at(const std::string& factor) const;
  /// Aligned table with percentages rounded to one decimal.
  std::string to_text() const;
};

ImbalanceSummary summarize_imbalance(const FactorIndex& index,
                                     const std::vector<WorkerRecord>& records);

/// Truncated discrete power law on {1, ..., max_size}: P(k) ∝ k^-exponent.
struct GroupSizeLaw {
  double exponent = 1.5;
  int max_size = 400;
};

struct TrueHyperparams {
  double mu0_g = 10.5;
  double mu1_g = -0.02;
  double mu0_j = 0.3;
  double mu1_j = -0.01;
  double sigma0_g = 0.4;
  double sigma1_g = 0.02;
  double sigma0_j = 0.2;
  double sigma1_j = 0.03;
};

struct TrueFixedEffects {
  double beta2 = 0.03;
  double beta3 = 0.02;
  double beta4 = 0.0008;
};

struct SynthConfig {
  int n_geos = 2;
  int n_gjs = 5;
  int n_jobs = 25;
  GroupSizeLaw group_size_law;
  double female_rate = 0.3;
  TrueHyperparams true_hyperparams;
  TrueFixedEffects true_fixed_effects;
  double residual_scale = 0.07;
  std::uint64_t seed = 1;

  /// Throws ConfigError when an invariant is broken.
  void validate() const;

  /// Job-geo profile tuned to a 40.9% single-worker / 68.2% single-gender
  /// mix over ~1,200 comparison groups.
  static SynthConfig table1_profile();
};

/// Keys: n_geos, n_gjs, n_jobs, size_exponent, max_group_size, female_rate,
/// residual_scale, seed, and true_<name> for every generating
/// hyperparameter and fixed effect (true_mu0_g, ..., true_beta4). Applied
/// keys are erased from `kv`; the result is validated.
void apply_synth_keys(io::KeyValues& kv, SynthConfig& config);
io::KeyValues to_key_values(const SynthConfig& config);

/// Generating parameter values, aligned with build_factor_index() of the
/// generated records.
struct GroundTruth {
  std::vector<double> beta0_g, beta1_g, beta0_j, beta1_j;
  TrueHyperparams hyper;
  TrueFixedEffects fixed;
  double sigma_resid = 0.0;

  /// beta1_g[g(j)] + beta1_j[j] per job-geo.
  std::vector<double> job_geo_female_effect(const FactorIndex& index) const;

  /// Flat name -> value list using the model's natural parameter names.
  std::vector<std::pair<std::string, double>> to_key_values() const;
};

struct SyntheticWorkforce {
  std::vector<WorkerRecord> records;
  GroundTruth truth;
};

SyntheticWorkforce generate_synthetic(const SynthConfig& config);

void write_ground_truth(const std::filesystem::path& path,
                        const GroundTruth& truth);
std::map<std::string, double> read_ground_truth(
    const std::filesystem::path& path);

}  // namespace payequity
