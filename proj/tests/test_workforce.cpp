#include <doctest.h>

#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "fixtures.hpp"
#include "payequity/errors.hpp"
#include "payequity/io.hpp"
#include "payequity/workforce.hpp"

using namespace payequity;
using payequity::testing::worker;

namespace {

const char* kHeader =
    "worker_id,geo,gjs,job,female,recent_perf,past_perf,time_in_job,salary\n";

LoadResult parse(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

}  // namespace

TEST_CASE("load_csv: clean three-row file") {
  const auto r = parse(std::string(kHeader) +
                       "a,US,E3,DS3,1,0.1,0.2,1.5,100000\n"
                       "b,US,E3,DS3,0,-0.1,0.0,2,95000\n"
                       "c,TW,E2,DS2,false,0,0,0,40000\n");
  CHECK(r.records.size() == 3);
  CHECK(r.exclusions.empty());
  CHECK(r.records[0].female);
  CHECK_FALSE(r.records[2].female);
  CHECK(r.records[1].log_salary == doctest::Approx(std::log(95000.0)).epsilon(1e-15));
}

TEST_CASE("load_csv: zero salary is excluded") {
  const auto r = parse(std::string(kHeader) +
                       "a,US,E3,DS3,1,0,0,1,100000\n"
                       "b,US,E3,DS3,0,0,0,1,0\n");
  REQUIRE(r.exclusions.size() == 1);
  CHECK(r.exclusions[0].reason == ExclusionReason::NonpositiveSalary);
  CHECK(r.exclusions[0].worker_id == "b");
  CHECK(r.exclusions[0].row_number == 2);
}

TEST_CASE("load_csv: 100 rows with 8 rule violations keeps 92") {
  std::string text = kHeader;
  const std::vector<std::string> bad = {
      "x0,US,E3,DS3,1,0,0,1,-5",        // negative salary
      "x1,US,E3,DS3,1,0,0,-1,50000",    // negative tenure
      "x2,US,E3,DS3,maybe,0,0,1,50000", // gender
      "x3,US,,DS3,1,0,0,1,50000",       // missing gjs
      "x4,US,E3,DS3,1,abc,0,1,50000",   // unparseable
      "x5,US,E3,DS3,1,0,0,1",           // short row
      "x6,US,E3,DS3,0,0,0,1,0",         // zero salary
      "x7,US,E3,DS3,0,0,nan,1,50000",   // non-finite
  };
  int bad_seen = 0;
  for (int i = 0; i < 100; ++i) {
    if (i % 12 == 5 && bad_seen < 8) {
      text += bad[bad_seen++] + "\n";
    } else {
      text += "w" + std::to_string(i) + ",US,E3,DS3," + std::to_string(i % 2) +
              ",0.5,0.5,2,60000\n";
    }
  }
  REQUIRE(bad_seen == 8);
  const auto r = parse(text);
  CHECK(r.records.size() == 92);
  CHECK(r.exclusions.size() == 8);
  CHECK(r.input_rows == 100);
  CHECK(r.exclusions.size() + r.records.size() == r.input_rows);

  std::multiset<ExclusionReason> reasons;
  for (const auto& e : r.exclusions) reasons.insert(e.reason);
  CHECK(reasons.count(ExclusionReason::NonpositiveSalary) == 2);
  CHECK(reasons.count(ExclusionReason::NegativeTimeInJob) == 1);
  CHECK(reasons.count(ExclusionReason::InvalidGender) == 1);
  CHECK(reasons.count(ExclusionReason::MissingField) == 2);
  CHECK(reasons.count(ExclusionReason::UnparseableField) == 2);
}

TEST_CASE("load_csv: gender tokens are case-insensitive and strict") {
  const auto r = parse(std::string(kHeader) +
                       "a,US,E3,DS3,TRUE,0,0,1,1\n"
                       "b,US,E3,DS3,False,0,0,1,1\n"
                       "c,US,E3,DS3,yes,0,0,1,1\n"
                       "d,US,E3,DS3,F,0,0,1,1\n");
  CHECK(r.records.size() == 2);
  CHECK(r.records[0].female);
  CHECK_FALSE(r.records[1].female);
  CHECK(r.exclusions.size() == 2);
}

TEST_CASE("load_csv: file-level errors") {
  CHECK_THROWS_AS(load_csv("/nonexistent/path.csv"), IoError);
  try {
    parse("worker_id,geo,gjs,job,female,recent_perf,past_perf,salary\n");
    FAIL("expected schema error");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("time_in_job") != std::string::npos);
  }
  CHECK_THROWS_AS(parse(std::string(kHeader) + "a,US,E3,DS3,1,0,0,1,0\n"),
                  EmptyDatasetError);
  CHECK_THROWS_AS(parse(""), SchemaError);
}

TEST_CASE("CSV round trip reproduces records field for field") {
  for (unsigned seed : {1u, 2u, 3u}) {
    auto records = payequity::testing::random_workforce(60, 3, 4, 9, seed);
    records[0].worker_id = "id,with \"quotes\"";
    std::ostringstream out;
    write_csv(out, records);
    std::istringstream in(out.str());
    const auto back = parse_csv(in);
    CHECK(back.exclusions.empty());
    CHECK(back.records == records);
  }
}

TEST_CASE("exclusion log CSV") {
  payequity::testing::TempDir dir("exclusions");
  write_exclusion_log(dir.path / "ex.csv",
                      {{3, "w3", ExclusionReason::NonpositiveSalary}});
  CHECK(io::read_file(dir.path / "ex.csv") ==
        "row_number,worker_id,reason_code\n3,w3,NONPOSITIVE_SALARY\n");
}

// ---------------------------------------------------------------------------

TEST_CASE("build_factor_index: singleton and crossing") {
  const auto one = build_factor_index({worker("a", "US", "E3", "DS3", true)});
  CHECK(one.num_gjs_geo() == 1);
  CHECK(one.num_job_geo() == 1);
  CHECK(one.g_of[0] == 0);
  CHECK(one.j_of[0] == 0);

  const auto two = build_factor_index(
      {worker("a", "US", "E3", "DS3", true), worker("b", "US", "E4", "DS3", false)});
  CHECK(two.num_job_geo() == 1);
  CHECK(two.num_gjs_geo() == 2);
  CHECK_THROWS_AS(build_factor_index({}), PreconditionError);
}

TEST_CASE("build_factor_index matches brute-force pair enumeration") {
  std::mt19937 rng(5);
  std::vector<WorkerRecord> records;
  for (int i = 0; i < 20; ++i) {
    records.push_back(worker("w" + std::to_string(i), "geo" + std::to_string(rng() % 3),
                             "gjs" + std::to_string(rng() % 2),
                             "job" + std::to_string(rng() % 4), rng() % 2 == 0));
  }
  const auto index = build_factor_index(records);

  std::set<std::pair<std::string, std::string>> gjs_geo, job_geo;
  std::map<std::pair<std::string, std::string>, int> size;
  for (const auto& r : records) {
    gjs_geo.insert({r.gjs, r.geo});
    job_geo.insert({r.job, r.geo});
    ++size[{r.job, r.geo}];
  }
  CHECK(index.num_gjs_geo() == static_cast<int>(gjs_geo.size()));
  CHECK(index.num_job_geo() == static_cast<int>(job_geo.size()));

  int total = 0;
  for (int j = 0; j < index.num_job_geo(); ++j) {
    CHECK(index.group_sizes[j] == size.at(index.job_geo_levels[j]));
    CHECK(index.gender_counts[j].total() == index.group_sizes[j]);
    total += index.group_sizes[j];
  }
  CHECK(total == 20);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(index.gjs_geo_levels[index.g_of[i]] == std::make_pair(records[i].gjs, records[i].geo));
    CHECK(index.job_geo_levels[index.j_of[i]] == std::make_pair(records[i].job, records[i].geo));
  }
  // First-appearance order.
  CHECK(index.j_of[0] == 0);
  CHECK(index.g_of[0] == 0);
}

// ---------------------------------------------------------------------------

TEST_CASE("summarize_imbalance: hand cases") {
  std::vector<WorkerRecord> males;
  for (int i = 0; i < 5; ++i) males.push_back(worker("m" + std::to_string(i), "US", "E3", "DS3", false));
  const auto s = summarize_imbalance(build_factor_index(males), males);
  CHECK(s.at("Job-Geo").pct_single_gender == 100.0);
  CHECK(s.at("Job-Geo").pct_single_worker == 0.0);

  const std::vector<WorkerRecord> two = {worker("a", "US", "E3", "DS3", false),
                                         worker("b", "US", "E3", "DS3", true),
                                         worker("c", "US", "E3", "DS4", true)};
  const auto t = summarize_imbalance(build_factor_index(two), two);
  CHECK(t.at("Job-Geo").levels == 2);
  CHECK(t.at("Job-Geo").pct_single_worker == 50.0);
  CHECK(t.at("Job-Geo").pct_single_gender == 50.0);
  CHECK(t.at("Geo").levels == 1);
  CHECK(t.to_text().find("Job-Geo") != std::string::npos);
}

TEST_CASE("summarize_imbalance agrees with an independent recount") {
  for (unsigned seed = 1; seed <= 10; ++seed) {
    const auto records = payequity::testing::random_workforce(80, 4, 5, 30, seed);
    const auto s = summarize_imbalance(build_factor_index(records), records);

    using Key = std::tuple<std::string, std::string, std::string>;
    const std::vector<std::pair<std::string, std::function<Key(const WorkerRecord&)>>> factors = {
        {"Geo", [](auto& r) { return Key{r.geo, "", ""}; }},
        {"GJS", [](auto& r) { return Key{r.gjs, "", ""}; }},
        {"GJS-Geo", [](auto& r) { return Key{r.gjs, r.geo, ""}; }},
        {"Job", [](auto& r) { return Key{r.job, "", ""}; }},
        {"Job-Geo", [](auto& r) { return Key{r.job, r.geo, ""}; }},
    };
    for (const auto& [name, key] : factors) {
      std::map<Key, std::set<bool>> genders;
      std::map<Key, int> counts;
      for (const auto& r : records) {
        genders[key(r)].insert(r.female);
        ++counts[key(r)];
      }
      int one_gender = 0, one_worker = 0;
      for (const auto& [k, g] : genders) one_gender += g.size() == 1;
      for (const auto& [k, c] : counts) one_worker += c == 1;
      const auto& f = s.at(name);
      CHECK(f.levels == static_cast<int>(counts.size()));
      CHECK(f.pct_single_gender == doctest::Approx(100.0 * one_gender / counts.size()));
      CHECK(f.pct_single_worker == doctest::Approx(100.0 * one_worker / counts.size()));
      CHECK(f.pct_single_worker <= f.pct_single_gender);
    }
  }
}

// ---------------------------------------------------------------------------

TEST_CASE("generate_synthetic: degenerate generator gives the global intercept") {
  SynthConfig c;
  c.n_geos = 2;
  c.n_gjs = 2;
  c.n_jobs = 3;
  c.residual_scale = 1e-300;
  c.true_hyperparams = {10.5, 0.0, 0.3, 0.0, 1e-300, 1e-300, 1e-300, 1e-300};
  c.true_fixed_effects = {0.0, 0.0, 0.0};
  const auto out = generate_synthetic(c);
  REQUIRE_FALSE(out.records.empty());
  for (const auto& r : out.records) {
    CHECK(r.log_salary == doctest::Approx(10.8).epsilon(1e-14));
  }
}

TEST_CASE("generate_synthetic: deterministic and valid") {
  SynthConfig c;
  c.seed = 7;
  const auto a = generate_synthetic(c);
  const auto b = generate_synthetic(c);
  std::ostringstream sa, sb;
  write_csv(sa, a.records);
  write_csv(sb, b.records);
  CHECK(sa.str() == sb.str());
  c.seed = 8;
  std::ostringstream sc;
  write_csv(sc, generate_synthetic(c).records);
  CHECK(sc.str() != sa.str());

  const auto index = build_factor_index(a.records);
  CHECK(index.num_job_geo() == c.n_jobs * c.n_geos);
  CHECK(a.truth.beta0_j.size() == static_cast<std::size_t>(index.num_job_geo()));
  CHECK(a.truth.beta0_g.size() == static_cast<std::size_t>(index.num_gjs_geo()));
  for (const auto& r : a.records) {
    CHECK(r.salary > 0.0);
    CHECK(r.time_in_job >= 0.0);
    CHECK(std::abs(r.log_salary - std::log(r.salary)) <= 1e-12 * std::abs(r.log_salary));
    CHECK_FALSE(r.geo.empty());
    CHECK_FALSE(r.gjs.empty());
    CHECK_FALSE(r.job.empty());
  }
}

TEST_CASE("generate_synthetic: ground truth reproduces noise-free predictor") {
  SynthConfig c;
  c.residual_scale = 1e-300;
  c.seed = 3;
  const auto out = generate_synthetic(c);
  const auto index = build_factor_index(out.records);
  const auto& t = out.truth;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const auto& r = out.records[i];
    const int g = index.g_of[i], j = index.j_of[i];
    const double f = r.female ? 1.0 : 0.0;
    const double eta = t.beta0_g[g] + t.beta0_j[j] + f * (t.beta1_g[g] + t.beta1_j[j]) +
                       t.fixed.beta2 * r.recent_perf + t.fixed.beta3 * r.past_perf +
                       t.fixed.beta4 * r.time_in_job;
    CHECK(r.log_salary == doctest::Approx(eta).epsilon(1e-13));
  }
}

TEST_CASE("generate_synthetic: Table 1 job-geo profile") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    auto c = SynthConfig::table1_profile();
    c.seed = seed;
    const auto out = generate_synthetic(c);
    const auto s = summarize_imbalance(build_factor_index(out.records), out.records);
    const auto& jg = s.at("Job-Geo");
    CHECK(std::abs(jg.pct_single_worker - 40.9) <= 3.0);
    CHECK(std::abs(jg.pct_single_gender - 68.2) <= 3.0);
  }
}

TEST_CASE("generate_synthetic: config validation") {
  SynthConfig c;
  c.residual_scale = 0.0;
  CHECK_THROWS_AS(generate_synthetic(c), ConfigError);
  c = {};
  c.female_rate = 1.0;
  CHECK_THROWS_AS(generate_synthetic(c), ConfigError);
  c = {};
  c.true_hyperparams.sigma1_j = -1.0;
  CHECK_THROWS_AS(generate_synthetic(c), ConfigError);
  c = {};
  c.n_jobs = 0;
  CHECK_THROWS_AS(generate_synthetic(c), ConfigError);
}

TEST_CASE("synthetic config keys") {
  SUBCASE("applied keys are consumed and others left alone") {
    io::KeyValues kv{{"n_jobs", "7"},        {"size_exponent", "1.25"},
                     {"true_sigma1_j", "0.3"}, {"true_beta4", "0.001"},
                     {"seed", "42"},          {"warmup", "10"}};
    SynthConfig c;
    apply_synth_keys(kv, c);
    CHECK(c.n_jobs == 7);
    CHECK(c.group_size_law.exponent == 1.25);
    CHECK(c.true_hyperparams.sigma1_j == 0.3);
    CHECK(c.true_fixed_effects.beta4 == 0.001);
    CHECK(c.seed == 42);
    CHECK(c.n_geos == SynthConfig{}.n_geos);
    REQUIRE(kv.size() == 1);
    CHECK(kv.count("warmup") == 1);
  }
  SUBCASE("round trip reproduces the config") {
    SynthConfig a = SynthConfig::table1_profile();
    a.seed = 9;
    a.true_fixed_effects.beta2 = 0.1 / 3.0;
    auto kv = to_key_values(a);
    SynthConfig b;
    apply_synth_keys(kv, b);
    CHECK(kv.empty());
    CHECK(to_key_values(b) == to_key_values(a));
    CHECK(b.true_fixed_effects.beta2 == a.true_fixed_effects.beta2);
    CHECK(b.group_size_law.max_size == a.group_size_law.max_size);
  }
  SUBCASE("bad values") {
    SynthConfig c;
    io::KeyValues kv{{"n_jobs", "many"}};
    CHECK_THROWS_AS(apply_synth_keys(kv, c), ConfigError);
    kv = {{"seed", "-1"}};
    CHECK_THROWS_AS(apply_synth_keys(kv, c), ConfigError);
    kv = {{"female_rate", "1.5"}};
    c = {};
    CHECK_THROWS_AS(apply_synth_keys(kv, c), ConfigError);
  }
}

TEST_CASE("ground truth file round trip") {
  payequity::testing::TempDir dir("truth");
  SynthConfig c;
  c.n_jobs = 4;
  const auto out = generate_synthetic(c);
  write_ground_truth(dir.path / "truth.txt", out.truth);
  const auto back = read_ground_truth(dir.path / "truth.txt");
  const auto kv = out.truth.to_key_values();
  CHECK(back.size() == kv.size());
  for (const auto& [name, value] : kv) CHECK(back.at(name) == value);
  CHECK(back.at("sigma_resid") == c.residual_scale);
}
