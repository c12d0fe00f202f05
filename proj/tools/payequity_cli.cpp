#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "payequity/diagnostics.hpp"
#include "payequity/errors.hpp"
#include "payequity/hmc.hpp"
#include "payequity/io.hpp"
#include "payequity/model.hpp"
#include "payequity/ols.hpp"
#include "payequity/report.hpp"
#include "payequity/version.hpp"
#include "payequity/workforce.hpp"

namespace fs = std::filesystem;
using namespace payequity;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Contract violations by the caller: bad flags, missing inputs, mismatched
/// files. Mapped to exit code 2.
class UsageError : public Error {
public:
  using Error::Error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json to_json(const io::KeyValues& kv) {
  json out = json::object();
  for (const auto& [k, v] : kv) out[k] = v;
  return out;
}

/// manifest.json: command, version, timestamps, input digests, seeds and
/// the resolved configuration.
class Manifest {
public:
  explicit Manifest(std::string command) : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["version"] = kVersion;
    doc_["started_utc"] = utc_now();
    doc_["inputs"] = json::object();
    doc_["seeds"] = json::object();
    doc_["config"] = json::object();
    doc_["outputs"] = json::array();
  }

  std::string input(const std::string& role, const fs::path& path) {
    const auto digest = io::sha256_file(path);
    doc_["inputs"][role] = {{"path", path.string()}, {"sha256", digest}};
    return digest;
  }
  void seed(const std::string& name, json value) { doc_["seeds"][name] = std::move(value); }
  void config(const std::string& section, const io::KeyValues& kv) {
    doc_["config"][section] = to_json(kv);
  }
  void config(const std::string& section, json value) { doc_["config"][section] = std::move(value); }
  void output(const fs::path& path) { doc_["outputs"].push_back(path.filename().string()); }

  void write(const fs::path& dir) {
    doc_["finished_utc"] = utc_now();
    doc_["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    io::write_file(dir / "manifest.json", doc_.dump(2) + "\n");
  }

private:
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Configuration: file keys first, then explicit flags on top.

/// Keys any subcommand understands. A shared config file may carry keys for
/// other subcommands; anything outside this set is rejected.
const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k{"preset", "interval_mass", "threshold", "small_k"};
    for (const auto& [key, _] : to_key_values(SamplerConfig{})) k.insert(key);
    for (const auto& [key, _] : to_key_values(ModelSpec{})) k.insert(key);
    for (const auto& [key, _] : to_key_values(SynthConfig{})) k.insert(key);
    return k;
  }();
  return keys;
}

struct Settings {
  std::optional<std::string> config_path;
  io::KeyValues flags;

  /// Resolved keys: config file, then flags.
  io::KeyValues resolve() const {
    io::KeyValues kv;
    if (config_path) {
      if (!fs::exists(*config_path)) throw UsageError("config file not found: " + *config_path);
      kv = io::read_key_values(*config_path);
    }
    for (const auto& [k, v] : flags) kv[k] = v;
    return kv;
  }
};

void check_leftovers(const io::KeyValues& kv) {
  for (const auto& [key, _] : kv) {
    if (!known_keys().count(key)) throw ConfigError("unknown configuration key `" + key + "`");
  }
}

/// Adds `--name` whose value lands in `settings.flags[key]`.
CLI::Option* key_flag(CLI::App* app, const std::string& name, const std::string& key,
                      Settings& settings, const std::string& help) {
  return app->add_option_function<std::string>(
      name, [&settings, key](const std::string& v) { settings.flags[key] = v; }, help);
}

void add_config_flag(CLI::App* app, Settings& settings) {
  app->add_option_function<std::string>(
      "--config", [&settings](const std::string& v) { settings.config_path = v; },
      "key = value file; flags override its entries");
}

double take_real(io::KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto v = io::parse_double(it->second);
  if (!v) throw ConfigError("`" + key + "` is not a number");
  kv.erase(it);
  return *v;
}

int take_int(io::KeyValues& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto v = io::parse_int(it->second);
  if (!v) throw ConfigError("`" + key + "` is not an integer");
  kv.erase(it);
  return static_cast<int>(*v);
}

// ---------------------------------------------------------------------------
// Inputs.

fs::path require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path);
  return path;
}

LoadResult load_data(const fs::path& path) {
  try {
    return load_csv(path);
  } catch (const SchemaError& e) {
    throw UsageError(std::string("data schema: ") + e.what());
  } catch (const EmptyDatasetError& e) {
    throw UsageError(std::string("data: ") + e.what());
  }
}

/// Checks that `draws_dir` holds a fit of `data_digest` and returns the fit
/// manifest.
json check_draws_dir(const fs::path& draws_dir, const std::string& data_digest) {
  if (!fs::is_directory(draws_dir) || !fs::exists(draws_dir / "chain_0.json")) {
    throw UsageError("no draws found in " + draws_dir.string());
  }
  const auto manifest_path = draws_dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw UsageError("draws directory has no manifest: " + draws_dir.string());
  }
  json manifest;
  try {
    manifest = json::parse(io::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw IntegrityError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto recorded = manifest.value("/inputs/data/sha256"_json_pointer, std::string{});
  if (recorded != data_digest) {
    throw UsageError("data file does not match the draws: fit used sha256 " + recorded +
                     ", given file has " + data_digest);
  }
  return manifest;
}

void prepare_out(const fs::path& out, const std::optional<fs::path>& protected_dir = {}) {
  if (protected_dir && fs::exists(out) && fs::equivalent(out, *protected_dir)) {
    throw UsageError("--out must differ from the draws directory");
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
}

void write_output(Manifest& manifest, const fs::path& path, const std::string& content) {
  io::write_file(path, content);
  manifest.output(path);
}

// ---------------------------------------------------------------------------
// Subcommands.

struct SimulateArgs {
  Settings settings;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
  Manifest manifest("simulate");
  auto kv = a.settings.resolve();
  const auto preset = kv.count("preset") ? kv.at("preset") : std::string("default");
  kv.erase("preset");
  SynthConfig config;
  if (preset == "table1") {
    config = SynthConfig::table1_profile();
  } else if (preset != "default") {
    throw ConfigError("preset must be `default` or `table1`, got `" + preset + "`");
  }
  apply_synth_keys(kv, config);
  check_leftovers(kv);

  const fs::path out = a.out;
  prepare_out(out);
  if (a.settings.config_path) manifest.input("config", *a.settings.config_path);
  const auto synth = generate_synthetic(config);
  write_csv(out / "workers.csv", synth.records);
  manifest.output(out / "workers.csv");
  write_ground_truth(out / "ground_truth.txt", synth.truth);
  manifest.output(out / "ground_truth.txt");

  const auto index = build_factor_index(synth.records);
  const auto imbalance = summarize_imbalance(index, synth.records);
  manifest.seed("synth_seed", config.seed);
  manifest.config("preset", json(preset));
  manifest.config("synthetic", to_key_values(config));
  manifest.write(out);

  std::cout << "simulated " << synth.records.size() << " workers: " << index.num_gjs_geo()
            << " GJS-geo levels, " << index.num_job_geo() << " job-geo levels\n"
            << imbalance.to_text();
  return kExitOk;
}

struct FitArgs {
  Settings settings;
  std::string data;
  std::string out;
  bool progress = false;
};

int cmd_fit(const FitArgs& a) {
  Manifest manifest("fit");
  auto kv = a.settings.resolve();
  SamplerConfig sampler;
  apply_sampler_keys(kv, sampler);
  ModelSpec spec;
  apply_model_spec_keys(kv, spec);
  spec.validate();
  const double threshold = take_real(kv, "threshold", 1.1);
  check_leftovers(kv);
  if (sampler.n_chains < 2) {
    throw UsageError("convergence diagnostics require at least 2 chains");
  }
  sampler.progress = a.progress;

  const auto data_path = require_file(a.data, "data file");
  const auto loaded = load_data(data_path);
  const fs::path out = a.out;
  prepare_out(out);
  manifest.input("data", data_path);
  if (a.settings.config_path) manifest.input("config", *a.settings.config_path);
  write_exclusion_log(out / "exclusions.csv", loaded.exclusions);
  manifest.output(out / "exclusions.csv");

  const auto index = build_factor_index(loaded.records);
  const HierarchicalModel model(make_model_data(loaded.records, index), spec);
  const auto started = std::chrono::steady_clock::now();
  const auto draws = run_chains(model, sampler);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_draws(out, draws);
  for (int c = 0; c < draws.num_chains(); ++c) {
    manifest.output(out / ("chain_" + std::to_string(c) + ".csv"));
    manifest.output(out / ("chain_" + std::to_string(c) + ".json"));
  }

  DiagnosticSummary diagnostics;
  try {
    diagnostics = convergence_report(draws, threshold);
  } catch (const Error& e) {
    throw std::runtime_error(std::string("convergence report failed: ") + e.what());
  }
  write_diagnostics_csv(out / "diagnostics.csv", diagnostics);
  manifest.output(out / "diagnostics.csv");

  json chain_seeds = json::array();
  for (const auto& c : draws.chains) chain_seeds.push_back(c.seed);
  manifest.seed("base_seed", sampler.base_seed);
  manifest.seed("chains", chain_seeds);
  manifest.config("sampler", to_key_values(sampler));
  manifest.config("model", to_key_values(spec));
  manifest.config("threshold", json(threshold));
  manifest.write(out);

  const auto counts = count_parameters(model.layout());
  std::cout << "fitted " << loaded.records.size() << " workers (" << loaded.exclusions.size()
            << " excluded), G=" << index.num_gjs_geo() << ", J=" << index.num_job_geo() << ", "
            << counts.total << " parameters\n"
            << diagnostics.summary_line() << '\n';
  for (int c = 0; c < draws.num_chains(); ++c) {
    const auto& ch = draws.chains[c];
    std::cout << "chain " << c << ": step size " << ch.step_size << ", mean acceptance "
              << ch.mean_accept << ", " << ch.divergences << " divergences\n";
  }
  std::cout << "sampling took " << seconds << " s\n";
  if (!diagnostics.acceptable() && sampler.metric == MetricKind::diagonal) {
    std::cout << "hint: crossed intercepts form long correlated ridges; try --metric curvature "
                 "with more leapfrog steps\n";
  }
  return kExitOk;
}

struct DiagnoseArgs {
  Settings settings;
  std::string draws;
  std::optional<std::string> out;
  std::vector<std::string> traces;
};

int cmd_diagnose(const DiagnoseArgs& a) {
  Manifest manifest("diagnose");
  auto kv = a.settings.resolve();
  const double threshold = take_real(kv, "threshold", 1.1);
  check_leftovers(kv);
  if (!(threshold > 1.0)) throw ConfigError("threshold must be > 1");
  const fs::path dir = a.draws;
  if (!fs::exists(dir / "chain_0.json")) throw UsageError("no draws found in " + dir.string());
  const auto draws = read_draws(dir);
  if (draws.num_chains() < 2) throw UsageError("diagnostics require at least 2 chains");
  const auto summary = convergence_report(draws, threshold);

  std::cout << summary.summary_line() << '\n';
  std::vector<const ParameterDiagnostic*> flagged;
  for (const auto& p : summary.parameters) {
    if (p.flagged) flagged.push_back(&p);
  }
  std::sort(flagged.begin(), flagged.end(),
            [](const auto* a, const auto* b) { return a->rhat > b->rhat; });
  constexpr std::size_t kShown = 10;
  for (std::size_t k = 0; k < std::min(kShown, flagged.size()); ++k) {
    std::cout << "  " << flagged[k]->name << ": R-hat " << flagged[k]->rhat << ", ESS "
              << flagged[k]->ess << '\n';
  }
  if (flagged.size() > kShown) std::cout << "  ... and " << flagged.size() - kShown << " more\n";
  if (!a.out) {
    if (!a.traces.empty()) throw UsageError("--trace needs --out");
    return kExitOk;
  }
  const fs::path out = *a.out;
  prepare_out(out, dir);
  for (int c = 0; c < draws.num_chains(); ++c) {
    manifest.input("chain_" + std::to_string(c), dir / ("chain_" + std::to_string(c) + ".csv"));
  }
  write_diagnostics_csv(out / "diagnostics.csv", summary);
  manifest.output(out / "diagnostics.csv");
  try {
    for (const auto& f : export_traces(out / "traces", draws, a.traces)) {
      manifest.output(f);
    }
  } catch (const PreconditionError& e) {
    throw UsageError(e.what());
  }
  manifest.config("threshold", json(threshold));
  manifest.write(out);
  return kExitOk;
}

struct ReportArgs {
  Settings settings;
  std::string data;
  std::string draws;
  std::string out;
};

struct LoadedFit {
  LoadResult data;
  FactorIndex index;
  PosteriorDraws draws;
};

LoadedFit load_fit(Manifest& manifest, const std::string& data, const std::string& draws_dir) {
  const auto data_path = require_file(data, "data file");
  const auto digest = io::sha256_file(data_path);
  check_draws_dir(draws_dir, digest);
  LoadedFit f;
  f.data = load_data(data_path);
  manifest.input("data", data_path);
  for (int c = 0; fs::exists(fs::path(draws_dir) / ("chain_" + std::to_string(c) + ".csv")); ++c) {
    manifest.input("chain_" + std::to_string(c),
                   fs::path(draws_dir) / ("chain_" + std::to_string(c) + ".csv"));
  }
  f.draws = read_draws(draws_dir);
  f.index = build_factor_index(f.data.records);
  return f;
}

int cmd_report(const ReportArgs& a) {
  Manifest manifest("report");
  auto kv = a.settings.resolve();
  const double mass = take_real(kv, "interval_mass", 0.95);
  check_leftovers(kv);
  if (!(mass > 0.0 && mass < 1.0)) throw ConfigError("interval_mass must lie strictly inside (0, 1)");
  const auto fit = load_fit(manifest, a.data, a.draws);
  const fs::path out = a.out;
  prepare_out(out, fs::path(a.draws));

  const auto report = build_gap_report(fit.draws, fit.data.records, fit.index, mass);
  const auto text = gap_report_text(report);
  write_output(manifest, out / "gap_report.json", gap_report_json(report));
  write_output(manifest, out / "gap_report.txt", text);
  write_output(manifest, out / "groups.csv", group_summaries_csv(report.groups));
  write_output(manifest, out / "raises.csv", raises_csv(report.raises));
  manifest.config("interval_mass", json(mass));
  manifest.write(out);
  // Header block only; the full table is in gap_report.txt.
  std::cout << text.substr(0, text.find("\n\n") + 1);
  return kExitOk;
}

struct CompareArgs {
  Settings settings;
  std::string data;
  std::string draws;
  std::string out;
};

int cmd_compare(const CompareArgs& a) {
  Manifest manifest("compare");
  auto kv = a.settings.resolve();
  const double mass = take_real(kv, "interval_mass", 0.95);
  const int small_k = take_int(kv, "small_k", 4);
  check_leftovers(kv);
  if (!(mass > 0.0 && mass < 1.0)) throw ConfigError("interval_mass must lie strictly inside (0, 1)");
  if (small_k < 1) throw ConfigError("small_k must be positive");
  const auto fit = load_fit(manifest, a.data, a.draws);
  const fs::path out = a.out;
  prepare_out(out, fs::path(a.draws));

  const auto hlm = group_gap_summaries(fit.draws, fit.data.records, fit.index, mass);
  Eigen::VectorXd y(static_cast<Eigen::Index>(fit.data.records.size()));
  for (std::size_t i = 0; i < fit.data.records.size(); ++i) {
    y(static_cast<Eigen::Index>(i)) = fit.data.records[i].log_salary;
  }
  const auto lm = fit_ols(build_design_matrix(fit.data.records, fit.index), y);
  const auto table = compare_estimates(hlm, lm, fit.index, small_k);
  const auto shrinkage = table.shrinkage_text();
  write_output(manifest, out / "comparison.csv", table.to_csv());
  write_output(manifest, out / "plot_data.csv", table.plot_data_csv());
  write_output(manifest, out / "shrinkage.txt", shrinkage);
  manifest.config("interval_mass", json(mass));
  manifest.config("small_k", json(small_k));
  manifest.write(out);
  std::cout << shrinkage;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian hierarchical pay-equity analysis"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::function<int()> run;

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic workforce with known truth");
  simulate->add_option("--out", sim.out, "Output directory")->required();
  add_config_flag(simulate, sim.settings);
  key_flag(simulate, "--preset", "preset", sim.settings, "default or table1")
      ->check(CLI::IsMember({"default", "table1"}));
  key_flag(simulate, "--seed", "seed", sim.settings, "Generator seed");
  key_flag(simulate, "--n-geos", "n_geos", sim.settings, "Number of geographies");
  key_flag(simulate, "--n-gjs", "n_gjs", sim.settings, "GJS levels per geography");
  key_flag(simulate, "--n-jobs", "n_jobs", sim.settings, "Jobs per geography");
  key_flag(simulate, "--size-exponent", "size_exponent", sim.settings,
           "Power-law exponent of job-geo sizes");
  key_flag(simulate, "--max-group-size", "max_group_size", sim.settings, "Largest job-geo size");
  key_flag(simulate, "--female-rate", "female_rate", sim.settings, "Share of female workers");
  key_flag(simulate, "--residual-scale", "residual_scale", sim.settings,
           "Residual standard deviation on log salary");
  simulate->callback([&] { run = [&] { return cmd_simulate(sim); }; });

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Sample the posterior and write draws and diagnostics");
  fit_cmd->add_option("--data", fit.data, "Workforce CSV")->required();
  fit_cmd->add_option("--out", fit.out, "Output directory")->required();
  add_config_flag(fit_cmd, fit.settings);
  key_flag(fit_cmd, "--chains", "chains", fit.settings, "Number of chains (>= 2)");
  key_flag(fit_cmd, "--warmup", "warmup", fit.settings, "Warmup iterations per chain");
  key_flag(fit_cmd, "--samples", "samples", fit.settings, "Retained draws per chain");
  key_flag(fit_cmd, "--leapfrog-steps", "leapfrog_steps", fit.settings,
           "Leapfrog steps per transition (jittered by 20%)");
  key_flag(fit_cmd, "--target-accept", "target_accept", fit.settings, "Dual-averaging target");
  key_flag(fit_cmd, "--metric", "metric", fit.settings, "diag or curvature")
      ->check(CLI::IsMember({"diag", "curvature"}));
  key_flag(fit_cmd, "--seed", "seed", fit.settings, "Base seed");
  key_flag(fit_cmd, "--threshold", "threshold", fit.settings, "R-hat flag threshold");
  fit_cmd->add_flag("--progress", fit.progress, "Iteration counters on stderr");
  fit_cmd->callback([&] { run = [&] { return cmd_fit(fit); }; });

  DiagnoseArgs diag;
  auto* diagnose = app.add_subcommand("diagnose", "Recompute R-hat and ESS on stored draws");
  diagnose->add_option("--draws", diag.draws, "Directory written by fit")->required();
  diagnose->add_option("--out", diag.out, "Directory for diagnostics.csv and traces");
  diagnose->add_option("--trace", diag.traces, "Parameter to export as a trace (repeatable)");
  add_config_flag(diagnose, diag.settings);
  key_flag(diagnose, "--threshold", "threshold", diag.settings, "R-hat flag threshold");
  diagnose->callback([&] { run = [&] { return cmd_diagnose(diag); }; });

  ReportArgs rep;
  auto* report = app.add_subcommand("report", "Wage-gap report from stored draws");
  report->add_option("--data", rep.data, "Workforce CSV used by fit")->required();
  report->add_option("--draws", rep.draws, "Directory written by fit")->required();
  report->add_option("--out", rep.out, "Output directory")->required();
  add_config_flag(report, rep.settings);
  key_flag(report, "--interval-mass", "interval_mass", rep.settings, "Credible interval mass");
  report->callback([&] { run = [&] { return cmd_report(rep); }; });

  CompareArgs cmp;
  auto* compare = app.add_subcommand("compare", "Compare against the multiple-regression baseline");
  compare->add_option("--data", cmp.data, "Workforce CSV used by fit")->required();
  compare->add_option("--draws", cmp.draws, "Directory written by fit")->required();
  compare->add_option("--out", cmp.out, "Output directory")->required();
  add_config_flag(compare, cmp.settings);
  key_flag(compare, "--interval-mass", "interval_mass", cmp.settings, "Credible interval mass");
  key_flag(compare, "--small-k", "small_k", cmp.settings, "Largest group size counted as small");
  compare->callback([&] { run = [&] { return cmd_compare(cmp); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    return run();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
