#include "payequity/workforce.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "payequity/errors.hpp"
#include "payequity/io.hpp"
#include "payequity/random.hpp"

namespace payequity {

std::string to_string(ExclusionReason reason) {
  switch (reason) {
    case ExclusionReason::MissingField: return "MISSING_FIELD";
    case ExclusionReason::UnparseableField: return "UNPARSEABLE_FIELD";
    case ExclusionReason::InvalidGender: return "INVALID_GENDER";
    case ExclusionReason::NonpositiveSalary: return "NONPOSITIVE_SALARY";
    case ExclusionReason::NegativeTimeInJob: return "NEGATIVE_TIME_IN_JOB";
  }
  return "UNKNOWN";
}

namespace {

std::optional<bool> parse_gender(std::string_view text) {
  std::string s(io::trim(text));
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  return std::nullopt;
}

}  // namespace

LoadResult parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("missing header row");
  const auto header = io::split_csv_line(line);

  std::unordered_map<std::string, std::size_t> column_of;
  for (std::size_t c = 0; c < header.size(); ++c) {
    column_of.emplace(std::string(io::trim(header[c])), c);
  }
  std::vector<std::size_t> pos;
  for (const auto& name : required_columns()) {
    auto it = column_of.find(name);
    if (it == column_of.end()) {
      throw SchemaError("missing required column `" + name + "`");
    }
    pos.push_back(it->second);
  }
  enum Col { Id, Geo, Gjs, Job, Female, Recent, Past, Time, Salary };

  LoadResult result;
  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    if (io::trim(line).empty()) continue;
    ++row_number;
    const auto fields = io::split_csv_line(line);
    auto field = [&](Col c) -> std::string_view {
      return pos[c] < fields.size() ? io::trim(fields[pos[c]]) : std::string_view{};
    };
    auto exclude = [&](ExclusionReason reason) {
      result.exclusions.push_back({row_number, std::string(field(Id)), reason});
    };

    bool missing = false;
    for (int c = Id; c <= Salary; ++c) {
      if (field(static_cast<Col>(c)).empty()) missing = true;
    }
    if (missing) {
      exclude(ExclusionReason::MissingField);
      continue;
    }
    const auto female = parse_gender(field(Female));
    if (!female) {
      exclude(ExclusionReason::InvalidGender);
      continue;
    }
    const auto recent = io::parse_double(field(Recent));
    const auto past = io::parse_double(field(Past));
    const auto time = io::parse_double(field(Time));
    const auto salary = io::parse_double(field(Salary));
    if (!recent || !past || !time || !salary) {
      exclude(ExclusionReason::UnparseableField);
      continue;
    }
    if (*salary <= 0.0) {
      exclude(ExclusionReason::NonpositiveSalary);
      continue;
    }
    if (*time < 0.0) {
      exclude(ExclusionReason::NegativeTimeInJob);
      continue;
    }
    WorkerRecord r;
    r.worker_id = std::string(field(Id));
    r.geo = std::string(field(Geo));
    r.gjs = std::string(field(Gjs));
    r.job = std::string(field(Job));
    r.female = *female;
    r.recent_perf = *recent;
    r.past_perf = *past;
    r.time_in_job = *time;
    r.salary = *salary;
    r.log_salary = std::log(*salary);
    result.records.push_back(std::move(r));
  }
  result.input_rows = row_number;
  if (result.records.empty()) {
    throw EmptyDatasetError("no valid rows remain after exclusions (" +
                            std::to_string(row_number) + " rows read)");
  }
  return result;
}

LoadResult load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(in);
}

void write_csv(std::ostream& out, const std::vector<WorkerRecord>& records) {
  const auto& cols = required_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) {
    out << (c ? "," : "") << cols[c];
  }
  out << '\n';
  for (const auto& r : records) {
    out << io::csv_escape(r.worker_id) << ',' << io::csv_escape(r.geo) << ','
        << io::csv_escape(r.gjs) << ',' << io::csv_escape(r.job) << ','
        << (r.female ? '1' : '0') << ',' << io::format_double(r.recent_perf)
        << ',' << io::format_double(r.past_perf) << ','
        << io::format_double(r.time_in_job) << ','
        << io::format_double(r.salary) << '\n';
  }
}

void write_csv(const std::filesystem::path& path,
               const std::vector<WorkerRecord>& records) {
  std::ostringstream ss;
  write_csv(ss, records);
  io::write_file(path, ss.str());
}

void write_exclusion_log(const std::filesystem::path& path,
                         const ExclusionLog& log) {
  std::ostringstream ss;
  ss << "row_number,worker_id,reason_code\n";
  for (const auto& e : log) {
    ss << e.row_number << ',' << io::csv_escape(e.worker_id) << ','
       << to_string(e.reason) << '\n';
  }
  io::write_file(path, ss.str());
}

// ---------------------------------------------------------------------------

namespace {

struct PairHash {
  std::size_t operator()(const std::pair<std::string, std::string>& p) const {
    const std::size_t h = std::hash<std::string>{}(p.first);
    return h ^ (std::hash<std::string>{}(p.second) + 0x9E3779B97F4A7C15ULL +
                (h << 6) + (h >> 2));
  }
};

using LevelMap =
    std::unordered_map<std::pair<std::string, std::string>, int, PairHash>;

int intern(LevelMap& map,
           std::vector<std::pair<std::string, std::string>>& levels,
           std::pair<std::string, std::string> key) {
  auto [it, inserted] = map.emplace(key, static_cast<int>(levels.size()));
  if (inserted) levels.push_back(std::move(key));
  return it->second;
}

}  // namespace

FactorIndex build_factor_index(const std::vector<WorkerRecord>& records) {
  if (records.empty()) {
    throw PreconditionError("build_factor_index needs at least one record");
  }
  FactorIndex index;
  LevelMap gjs_geo, job_geo;
  index.g_of.reserve(records.size());
  index.j_of.reserve(records.size());
  for (const auto& r : records) {
    index.g_of.push_back(intern(gjs_geo, index.gjs_geo_levels, {r.gjs, r.geo}));
    const int j = intern(job_geo, index.job_geo_levels, {r.job, r.geo});
    index.j_of.push_back(j);
    if (j == static_cast<int>(index.group_sizes.size())) {
      index.group_sizes.push_back(0);
      index.gender_counts.emplace_back();
    }
    ++index.group_sizes[j];
    (r.female ? index.gender_counts[j].female : index.gender_counts[j].male)++;
  }
  return index;
}

std::vector<std::vector<int>> FactorIndex::job_geo_members() const {
  std::vector<std::vector<int>> members(job_geo_levels.size());
  for (std::size_t i = 0; i < j_of.size(); ++i) {
    members[j_of[i]].push_back(static_cast<int>(i));
  }
  return members;
}

std::vector<int> FactorIndex::gjs_geo_of_job_geo() const {
  std::vector<std::map<int, int>> tally(job_geo_levels.size());
  for (std::size_t i = 0; i < j_of.size(); ++i) ++tally[j_of[i]][g_of[i]];
  std::vector<int> out(job_geo_levels.size(), 0);
  for (std::size_t j = 0; j < tally.size(); ++j) {
    int best = -1;
    for (const auto& [g, count] : tally[j]) {
      if (count > best) {
        best = count;
        out[j] = g;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename KeyFn>
FactorImbalance tally_factor(const std::string& name,
                             const std::vector<WorkerRecord>& records,
                             KeyFn key) {
  std::map<std::string, GenderCount> counts;
  for (const auto& r : records) {
    auto& c = counts[key(r)];
    (r.female ? c.female : c.male)++;
  }
  FactorImbalance f;
  f.factor = name;
  f.levels = static_cast<int>(counts.size());
  int single_gender = 0, single_worker = 0;
  for (const auto& [label, c] : counts) {
    single_gender += c.single_gender();
    single_worker += c.total() == 1;
  }
  f.pct_single_gender = 100.0 * single_gender / f.levels;
  f.pct_single_worker = 100.0 * single_worker / f.levels;
  return f;
}

}  // namespace

ImbalanceSummary summarize_imbalance(const FactorIndex& index,
                                     const std::vector<WorkerRecord>& records) {
  if (index.num_workers() != records.size()) {
    throw PreconditionError("factor index was not built from these records");
  }
  // '\x1f' cannot appear in a CSV field we produced, so the joined keys are
  // unambiguous.
  ImbalanceSummary s;
  s.factors.push_back(tally_factor("Geo", records, [](auto& r) { return r.geo; }));
  s.factors.push_back(tally_factor("GJS", records, [](auto& r) { return r.gjs; }));
  s.factors.push_back(tally_factor(
      "GJS-Geo", records, [](auto& r) { return r.gjs + '\x1f' + r.geo; }));
  s.factors.push_back(tally_factor("Job", records, [](auto& r) { return r.job; }));

  FactorImbalance jg;
  jg.factor = "Job-Geo";
  jg.levels = index.num_job_geo();
  int single_gender = 0, single_worker = 0;
  for (int j = 0; j < jg.levels; ++j) {
    single_gender += index.gender_counts[j].single_gender();
    single_worker += index.group_sizes[j] == 1;
  }
  jg.pct_single_gender = 100.0 * single_gender / jg.levels;
  jg.pct_single_worker = 100.0 * single_worker / jg.levels;
  s.factors.push_back(jg);
  return s;
}

const FactorImbalance& ImbalanceSummary::at(const std::string& factor) const {
  for (const auto& f : factors) {
    if (f.factor == factor) return f;
  }
  throw PreconditionError("unknown factor `" + factor + "`");
}

std::string ImbalanceSummary::to_text() const {
  std::ostringstream ss;
  ss << std::left << std::setw(10) << "Factor" << std::right << std::setw(8)
     << "Levels" << std::setw(16) << "OneGender(%)" << std::setw(16)
     << "OneWorker(%)" << '\n';
  ss << std::fixed << std::setprecision(1);
  for (const auto& f : factors) {
    ss << std::left << std::setw(10) << f.factor << std::right << std::setw(8)
       << f.levels << std::setw(16) << f.pct_single_gender << std::setw(16)
       << f.pct_single_worker << '\n';
  }
  return ss.str();
}

// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (n_geos < 1 || n_gjs < 1 || n_jobs < 1) {
    fail("n_geos, n_gjs and n_jobs must be positive");
  }
  if (!(group_size_law.exponent >= 0.0) || group_size_law.max_size < 1) {
    fail("group size law needs exponent >= 0 and max_size >= 1");
  }
  if (!(female_rate > 0.0 && female_rate < 1.0)) {
    fail("female_rate must lie strictly inside (0, 1)");
  }
  if (!(residual_scale > 0.0)) fail("residual_scale must be > 0");
  const auto& h = true_hyperparams;
  for (double s : {h.sigma0_g, h.sigma1_g, h.sigma0_j, h.sigma1_j}) {
    if (!(s >= 0.0)) fail("random-effect scales must be >= 0");
  }
}

SynthConfig SynthConfig::table1_profile() {
  SynthConfig c;
  c.n_geos = 3;
  c.n_gjs = 16;
  c.n_jobs = 400;
  c.group_size_law = {1.52, 826};
  c.female_rate = 0.105;
  return c;
}

namespace {

// Every real-valued synthetic key with its slot.
std::vector<std::pair<const char*, double*>> synth_real_slots(SynthConfig& c) {
  auto& h = c.true_hyperparams;
  auto& f = c.true_fixed_effects;
  return {{"size_exponent", &c.group_size_law.exponent},
          {"female_rate", &c.female_rate},
          {"residual_scale", &c.residual_scale},
          {"true_mu0_g", &h.mu0_g},
          {"true_mu1_g", &h.mu1_g},
          {"true_mu0_j", &h.mu0_j},
          {"true_mu1_j", &h.mu1_j},
          {"true_sigma0_g", &h.sigma0_g},
          {"true_sigma1_g", &h.sigma1_g},
          {"true_sigma0_j", &h.sigma0_j},
          {"true_sigma1_j", &h.sigma1_j},
          {"true_beta2", &f.beta2},
          {"true_beta3", &f.beta3},
          {"true_beta4", &f.beta4}};
}

std::vector<std::pair<const char*, int*>> synth_int_slots(SynthConfig& c) {
  return {{"n_geos", &c.n_geos},
          {"n_gjs", &c.n_gjs},
          {"n_jobs", &c.n_jobs},
          {"max_group_size", &c.group_size_law.max_size}};
}

}  // namespace

void apply_synth_keys(io::KeyValues& kv, SynthConfig& config) {
  for (const auto& [key, slot] : synth_real_slots(config)) {
    auto it = kv.find(key);
    if (it == kv.end()) continue;
    const auto v = io::parse_double(it->second);
    if (!v) throw ConfigError(std::string("`") + key + "` is not a number");
    *slot = *v;
    kv.erase(it);
  }
  for (const auto& [key, slot] : synth_int_slots(config)) {
    auto it = kv.find(key);
    if (it == kv.end()) continue;
    const auto v = io::parse_int(it->second);
    if (!v) throw ConfigError(std::string("`") + key + "` is not an integer");
    *slot = static_cast<int>(*v);
    kv.erase(it);
  }
  if (auto it = kv.find("seed"); it != kv.end()) {
    const auto v = io::parse_int(it->second);
    if (!v || *v < 0) throw ConfigError("`seed` is not a non-negative integer");
    config.seed = static_cast<std::uint64_t>(*v);
    kv.erase(it);
  }
  config.validate();
}

io::KeyValues to_key_values(const SynthConfig& config) {
  SynthConfig c = config;
  io::KeyValues kv;
  for (const auto& [key, slot] : synth_real_slots(c)) kv[key] = io::format_double(*slot);
  for (const auto& [key, slot] : synth_int_slots(c)) kv[key] = std::to_string(*slot);
  kv["seed"] = std::to_string(c.seed);
  return kv;
}

std::vector<double> GroundTruth::job_geo_female_effect(
    const FactorIndex& index) const {
  const auto g_of_j = index.gjs_geo_of_job_geo();
  std::vector<double> out(beta1_j.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = beta1_g[g_of_j[j]] + beta1_j[j];
  }
  return out;
}

std::vector<std::pair<std::string, double>> GroundTruth::to_key_values() const {
  std::vector<std::pair<std::string, double>> kv;
  auto block = [&](const char* name, const std::vector<double>& v) {
    for (std::size_t k = 0; k < v.size(); ++k) {
      kv.emplace_back(std::string(name) + "[" + std::to_string(k) + "]", v[k]);
    }
  };
  block("beta0_g", beta0_g);
  block("beta1_g", beta1_g);
  block("beta0_j", beta0_j);
  block("beta1_j", beta1_j);
  kv.emplace_back("mu0_g", hyper.mu0_g);
  kv.emplace_back("mu1_g", hyper.mu1_g);
  kv.emplace_back("mu0_j", hyper.mu0_j);
  kv.emplace_back("mu1_j", hyper.mu1_j);
  kv.emplace_back("sigma0_g", hyper.sigma0_g);
  kv.emplace_back("sigma1_g", hyper.sigma1_g);
  kv.emplace_back("sigma0_j", hyper.sigma0_j);
  kv.emplace_back("sigma1_j", hyper.sigma1_j);
  kv.emplace_back("beta2", fixed.beta2);
  kv.emplace_back("beta3", fixed.beta3);
  kv.emplace_back("beta4", fixed.beta4);
  kv.emplace_back("sigma_resid", sigma_resid);
  return kv;
}

namespace {

std::string label(const char* prefix, int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03d", prefix, k);
  return buf;
}

std::discrete_distribution<int> group_size_distribution(const GroupSizeLaw& law) {
  std::vector<double> weights(law.max_size);
  for (int k = 1; k <= law.max_size; ++k) {
    weights[k - 1] = std::pow(static_cast<double>(k), -law.exponent);
  }
  return {weights.begin(), weights.end()};
}

}  // namespace

SyntheticWorkforce generate_synthetic(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::exponential_distribution<double> tenure(1.0 / 4.0);
  std::bernoulli_distribution is_female(config.female_rate);
  auto size_dist = group_size_distribution(config.group_size_law);
  const auto& h = config.true_hyperparams;
  const auto& b = config.true_fixed_effects;

  // Group-level effects keyed by label pair, drawn in a fixed order.
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> gjs_geo_effect;
  for (int geo = 0; geo < config.n_geos; ++geo) {
    for (int gjs = 0; gjs < config.n_gjs; ++gjs) {
      const double b0 = h.mu0_g + h.sigma0_g * std_normal(rng);
      const double b1 = h.mu1_g + h.sigma1_g * std_normal(rng);
      gjs_geo_effect[{label("GJS", gjs), label("Geo", geo)}] = {b0, b1};
    }
  }

  SyntheticWorkforce out;
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> job_geo_effect;
  int worker = 0;
  for (int geo = 0; geo < config.n_geos; ++geo) {
    for (int job = 0; job < config.n_jobs; ++job) {
      const std::string geo_label = label("Geo", geo);
      const std::string gjs_label = label("GJS", job % config.n_gjs);
      const std::string job_label = label("Job", job);
      const double b0j = h.mu0_j + h.sigma0_j * std_normal(rng);
      const double b1j = h.mu1_j + h.sigma1_j * std_normal(rng);
      job_geo_effect[{job_label, geo_label}] = {b0j, b1j};
      const auto [b0g, b1g] = gjs_geo_effect.at({gjs_label, geo_label});

      const int size = size_dist(rng) + 1;
      for (int k = 0; k < size; ++k) {
        WorkerRecord r;
        r.worker_id = label("W", ++worker);
        r.geo = geo_label;
        r.gjs = gjs_label;
        r.job = job_label;
        r.female = is_female(rng);
        r.recent_perf = std_normal(rng);
        r.past_perf = std_normal(rng);
        r.time_in_job = tenure(rng);
        const double f = r.female ? 1.0 : 0.0;
        const double mean = b0g + b0j + f * (b1g + b1j) + b.beta2 * r.recent_perf +
                            b.beta3 * r.past_perf + b.beta4 * r.time_in_job;
        r.salary = std::exp(mean + config.residual_scale * std_normal(rng));
        r.log_salary = std::log(r.salary);
        out.records.push_back(std::move(r));
      }
    }
  }

  const auto index = build_factor_index(out.records);
  auto& t = out.truth;
  for (const auto& level : index.gjs_geo_levels) {
    const auto [b0, b1] = gjs_geo_effect.at(level);
    t.beta0_g.push_back(b0);
    t.beta1_g.push_back(b1);
  }
  for (const auto& level : index.job_geo_levels) {
    const auto [b0, b1] = job_geo_effect.at(level);
    t.beta0_j.push_back(b0);
    t.beta1_j.push_back(b1);
  }
  t.hyper = h;
  t.fixed = b;
  t.sigma_resid = config.residual_scale;
  return out;
}

void write_ground_truth(const std::filesystem::path& path,
                        const GroundTruth& truth) {
  std::ostringstream ss;
  for (const auto& [name, value] : truth.to_key_values()) {
    ss << name << " = " << io::format_double(value) << '\n';
  }
  io::write_file(path, ss.str());
}

std::map<std::string, double> read_ground_truth(
    const std::filesystem::path& path) {
  std::map<std::string, double> out;
  for (const auto& [key, text] : io::read_key_values(path)) {
    const auto value = io::parse_double(text);
    if (!value) throw SchemaError("ground truth `" + key + "` is not a number");
    out.emplace(key, *value);
  }
  return out;
}

}  // namespace payequity
