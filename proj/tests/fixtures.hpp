#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "payequity/workforce.hpp"

namespace payequity::testing {

inline WorkerRecord worker(std::string id, std::string geo, std::string gjs, std::string job,
                           bool female, double salary = 50000.0, double recent = 0.0,
                           double past = 0.0, double time = 1.0) {
  WorkerRecord r;
  r.worker_id = std::move(id);
  r.geo = std::move(geo);
  r.gjs = std::move(gjs);
  r.job = std::move(job);
  r.female = female;
  r.recent_perf = recent;
  r.past_perf = past;
  r.time_in_job = time;
  r.salary = salary;
  r.log_salary = std::log(salary);
  return r;
}

/// Random workforce with `n` workers over the given factor cardinalities.
/// Jobs are nested in GJS (job k -> GJS k % n_gjs).
inline std::vector<WorkerRecord> random_workforce(int n, int n_geos, int n_gjs, int n_jobs,
                                                  unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> geo(0, n_geos - 1), job(0, n_jobs - 1);
  std::bernoulli_distribution female(0.4);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<WorkerRecord> out;
  for (int i = 0; i < n; ++i) {
    const int jb = job(rng);
    out.push_back(worker("w" + std::to_string(i), "geo" + std::to_string(geo(rng)),
                         "gjs" + std::to_string(jb % n_gjs), "job" + std::to_string(jb),
                         female(rng), 40000.0 * std::exp(0.3 * normal(rng)), normal(rng),
                         normal(rng), std::abs(3.0 * normal(rng))));
  }
  return out;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() /
           ("payequity_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace payequity::testing
