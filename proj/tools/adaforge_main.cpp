// adaforge: command line front end for the adversarial domain adaptation
// library. Subcommands: train, sweep, conditions, gradcheck, curves,
// export-data, verify-aggregate.
//
// Exit codes: 0 success, 1 configuration error, 2 training diverged,
// 3 verification failure (gradcheck or verify-aggregate).

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adaforge/checkpoint.hpp"
#include "adaforge/config.hpp"
#include "adaforge/datasets.hpp"
#include "adaforge/gradcheck.hpp"
#include "adaforge/manifest.hpp"
#include "adaforge/sweep.hpp"
#include "adaforge/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using namespace adaforge;

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitVerifyFailed = 3;

// FNV-1a over a canonical description; used to name run directories for
// commands whose inputs are more than one RunConfig (sweeps, conditions).
uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex16(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Shared options most subcommands take.
struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // --set key=value
  std::string out_root;                // --out; else ADA_FORGE_OUT; else ./runs
  std::vector<uint32_t> seeds;         // --seeds
  int jobs = 1;
};

std::string resolve_out_root(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("ADA_FORGE_OUT"); env && *env) return env;
  return "./runs";
}

std::vector<uint32_t> parse_seed_list(const std::string& text) {
  std::vector<uint32_t> seeds;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) throw std::invalid_argument("--seeds: empty entry");
    size_t pos = 0;
    unsigned long v = std::stoul(tok, &pos);
    if (pos != tok.size())
      throw std::invalid_argument("--seeds: bad entry '" + tok + "'");
    seeds.push_back(static_cast<uint32_t>(v));
  }
  if (seeds.empty()) throw std::invalid_argument("--seeds: empty list");
  return seeds;
}

std::vector<std::string> parse_value_list(const std::string& text) {
  std::vector<std::string> values;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) values.push_back(tok);
  }
  if (values.empty()) throw std::invalid_argument("--values: empty list");
  return values;
}

RunConfig load_run_config(const CommonOpts& o) {
  if (o.config_path.empty())
    throw std::invalid_argument("--config is required");
  RunConfig cfg = load_config_file(o.config_path);
  for (const auto& a : o.overrides) apply_override(cfg, a);
  cfg.validate();
  return cfg;
}

// A sweep config file is a run config plus optional sweep.* keys
// (sweep.axis, sweep.values, sweep.seeds). This splits the two layers.
struct SweepFileConfig {
  RunConfig base;
  std::string axis;    // empty = not given in the file
  std::string values;  // comma list, empty = not given
  std::string seeds;   // comma list, empty = not given
};

SweepFileConfig load_sweep_config(const CommonOpts& o) {
  if (o.config_path.empty())
    throw std::invalid_argument("--config is required");
  SweepFileConfig out;
  std::string run_text;
  std::stringstream ss(read_text_file(o.config_path));
  std::string line;
  while (std::getline(ss, line)) {
    std::string stripped = line;
    if (auto p = stripped.find('#'); p != std::string::npos)
      stripped = stripped.substr(0, p);
    auto eq = stripped.find('=');
    std::string key =
        eq == std::string::npos ? "" : stripped.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string value = eq == std::string::npos ? "" : stripped.substr(eq + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    value.erase(value.find_last_not_of(" \t\r") + 1);
    if (key == "sweep.axis")
      out.axis = value;
    else if (key == "sweep.values")
      out.values = value;
    else if (key == "sweep.seeds")
      out.seeds = value;
    else
      run_text += line + "\n";
  }
  out.base = parse_config_text(run_text);
  for (const auto& a : o.overrides) apply_override(out.base, a);
  out.base.validate();
  return out;
}

void write_manifest(const std::string& dir, const std::vector<std::string>& argv,
                    const std::string& config_text,
                    const std::vector<uint32_t>& seeds,
                    const std::vector<std::string>& outputs) {
  RunManifest m;
  m.command_line = argv;
  m.config_text = config_text;
  m.seeds = seeds;
  m.outputs = outputs;
  write_text_file((fs::path(dir) / "manifest.json").string(), m.to_json());
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const CommonOpts& o, const std::vector<std::string>& argv) {
  RunConfig cfg = load_run_config(o);
  const std::string dir =
      run_directory(resolve_out_root(o.out_root), "train", cfg.hash_hex());
  write_manifest(dir, argv, serialize_config(cfg),
                 {static_cast<uint32_t>(cfg.train.seed)},
                 {"manifest.json", "trial.json", "checkpoint.ckpt"});

  SplitModel model;
  TrialResult result = run_trial(cfg, &model);
  write_text_file((fs::path(dir) / "trial.json").string(), result.to_json());
  save_checkpoint(model, (fs::path(dir) / "checkpoint.ckpt").string(),
                  cfg.train.total_epochs);

  std::cout << "run_dir: " << dir << "\n"
            << "final_p_s: " << result.final_p_s << "\n"
            << "final_p_t: " << result.final_p_t << "\n"
            << "diverged: " << (result.diverged ? "true" : "false") << "\n";
  return result.diverged ? kExitDiverged : kExitOk;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

int cmd_sweep(const CommonOpts& o, const std::string& axis_flag,
              const std::string& values_flag,
              const std::vector<std::string>& argv) {
  SweepFileConfig file = load_sweep_config(o);

  SweepSpec spec;
  spec.base = file.base;
  const std::string axis_text = !axis_flag.empty() ? axis_flag : file.axis;
  if (axis_text.empty())
    throw std::invalid_argument(
        "sweep axis missing: give --axis or a sweep.axis config line");
  spec.axis = axis_from_name(axis_text);
  if (!values_flag.empty())
    spec.values = parse_value_list(values_flag);
  else if (!file.values.empty())
    spec.values = parse_value_list(file.values);
  else
    spec.values = default_axis_values(spec.axis, spec.base.train.loss_kind);
  if (!o.seeds.empty())
    spec.seeds = o.seeds;
  else if (!file.seeds.empty())
    spec.seeds = parse_seed_list(file.seeds);

  std::string canonical = serialize_config(spec.base);
  canonical += "sweep.axis=" + std::string(axis_name(spec.axis)) + "\n";
  canonical += "sweep.values=";
  for (size_t i = 0; i < spec.values.size(); ++i)
    canonical += (i ? "," : "") + spec.values[i];
  canonical += "\nsweep.seeds=";
  for (size_t i = 0; i < spec.seeds.size(); ++i)
    canonical += (i ? "," : "") + std::to_string(spec.seeds[i]);
  canonical += "\n";

  const std::string dir = run_directory(resolve_out_root(o.out_root), "sweep",
                                        hex16(fnv1a(canonical)));
  spec.work_dir = dir;
  spec.validate();

  std::vector<std::string> outputs = {"manifest.json", "table.csv"};
  for (const auto& v : spec.values)
    for (uint32_t s : spec.seeds)
      outputs.push_back("trials/" + sanitize_component(v) + "/seed" +
                        std::to_string(s) + ".json");
  write_manifest(dir, argv, canonical, spec.seeds, outputs);

  SweepTable table = run_sweep(
      spec, o.jobs, [&](const std::string& value, uint32_t seed,
                        const TrialResult& r) {
        const fs::path p = fs::path(dir) / "trials" / sanitize_component(value) /
                           ("seed" + std::to_string(seed) + ".json");
        write_text_file(p.string(), r.to_json());
      });
  write_text_file((fs::path(dir) / "table.csv").string(), table.to_csv());

  std::cout << "run_dir: " << dir << "\n" << table.to_csv();
  for (const auto& row : table.rows) {
    if (row.all_diverged)
      std::cout << "note: every trial diverged at " << row.value << "\n";
    else if (row.low_confidence)
      std::cout << "note: single seed at " << row.value
                << "; std is 0 by convention\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// conditions
// ---------------------------------------------------------------------------

int cmd_conditions(const CommonOpts& o, const std::string& family_text,
                   const std::string& preset_text,
                   const std::vector<std::string>& argv) {
  const DataFamily family = family_from_name(family_text);
  const Preset preset = preset_from_name(preset_text);
  std::vector<uint32_t> seeds =
      o.seeds.empty() ? std::vector<uint32_t>{1, 2, 3, 4, 5} : o.seeds;

  std::string canonical =
      "conditions.family=" + family_text + "\nconditions.preset=" +
      std::string(preset_name(preset)) + "\nconditions.seeds=";
  for (size_t i = 0; i < seeds.size(); ++i)
    canonical += (i ? "," : "") + std::to_string(seeds[i]);
  canonical += "\n" + serialize_config(condition_profile(family, preset));

  const std::string dir = run_directory(resolve_out_root(o.out_root),
                                        "conditions", hex16(fnv1a(canonical)));
  std::vector<std::string> outputs = {"manifest.json", "conditions.csv",
                                      "table.csv"};
  for (const char* cond : {"baseline", "ada", "upper"})
    for (uint32_t s : seeds)
      outputs.push_back("trials/" + std::string(cond) + "/seed" +
                        std::to_string(s) + ".json");
  write_manifest(dir, argv, canonical, seeds, outputs);

  ConditionReport report = run_conditions(
      family, preset, seeds, o.jobs,
      [&](const std::string& value, uint32_t seed, const TrialResult& r) {
        const fs::path p = fs::path(dir) / "trials" / value /
                           ("seed" + std::to_string(seed) + ".json");
        write_text_file(p.string(), r.to_json());
      });
  write_text_file((fs::path(dir) / "conditions.csv").string(), report.to_csv());
  write_text_file((fs::path(dir) / "table.csv").string(),
                  report.table.to_csv());

  std::cout << "run_dir: " << dir << "\n" << report.to_csv();
  std::cout << "gap_closure: " << report.closure() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(uint64_t seed, int models, bool corrupt) {
  GradcheckReport report = run_gradcheck(seed, models, corrupt);
  std::cout << "models: " << report.models << "\n"
            << "params_checked: " << report.params_checked << "\n"
            << "max_rel_err: " << report.max_rel_err << " (tolerance "
            << report.tolerance << ")\n"
            << "worst_param: " << report.worst_param << "\n"
            << "routing_ok: " << (report.routing_ok ? "true" : "false") << "\n";
  for (const auto& f : report.failures) std::cout << "FAIL " << f << "\n";
  std::cout << (report.passed() ? "gradcheck passed" : "gradcheck FAILED")
            << "\n";
  return report.passed() ? kExitOk : kExitVerifyFailed;
}

// ---------------------------------------------------------------------------
// curves
// ---------------------------------------------------------------------------

int cmd_curves(const CommonOpts& o, const std::vector<std::string>& argv) {
  const std::string dir =
      run_directory(resolve_out_root(o.out_root), "curves", "default");
  write_manifest(dir, argv, "", {}, {"manifest.json", "curves.csv"});
  write_text_file((fs::path(dir) / "curves.csv").string(), curves_csv());
  std::cout << "run_dir: " << dir << "\n"
            << (fs::path(dir) / "curves.csv").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// export-data
// ---------------------------------------------------------------------------

int cmd_export_data(const CommonOpts& o, const std::vector<std::string>& argv) {
  RunConfig cfg = load_run_config(o);
  const ShiftSpec spec = cfg.resolved_data();
  const std::string dir = run_directory(resolve_out_root(o.out_root),
                                        "export-data", cfg.hash_hex());
  write_manifest(dir, argv, serialize_config(cfg),
                 {static_cast<uint32_t>(cfg.train.seed)},
                 {"manifest.json", "dataset/manifest.json",
                  "dataset/source_train_inputs.f64",
                  "dataset/source_train_labels.i64",
                  "dataset/source_test_inputs.f64",
                  "dataset/source_test_labels.i64",
                  "dataset/target_train_inputs.f64",
                  "dataset/target_test_inputs.f64",
                  "dataset/target_test_labels.i64"});
  DomainData data = make_pair(spec);
  export_dataset(data, spec, (fs::path(dir) / "dataset").string());
  std::cout << "run_dir: " << dir << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify-aggregate
// ---------------------------------------------------------------------------

int cmd_verify_aggregate(const std::string& run_dir) {
  const std::string mismatch = verify_aggregate_dir(run_dir);
  if (mismatch.empty()) {
    std::cout << "aggregate verified: " << run_dir << "\n";
    return kExitOk;
  }
  std::cerr << "aggregate mismatch: " << mismatch << "\n";
  return kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> argv_copy(argv, argv + argc);

  CLI::App app{"adversarial domain adaptation trainer and study harness"};
  app.require_subcommand(1);

  CommonOpts train_o, sweep_o, cond_o, curves_o, export_o;
  std::string sweep_axis, sweep_values, sweep_seeds_text, cond_seeds_text;
  std::string cond_family, cond_preset = "mild", verify_dir;
  uint64_t gc_seed = 1;
  int gc_models = 20;
  bool gc_corrupt = false;

  auto add_common = [](CLI::App* sub, CommonOpts& o, bool with_config,
                       bool with_jobs, std::string* seeds_text) {
    if (with_config) {
      sub->add_option("--config", o.config_path, "run config file")->required();
      sub->add_option("--set", o.overrides,
                      "key=value config override (repeatable)");
    }
    sub->add_option("--out", o.out_root,
                    "output root (default $ADA_FORGE_OUT or ./runs)");
    if (with_jobs)
      sub->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    if (seeds_text)
      sub->add_option("--seeds", *seeds_text, "comma-separated seed list");
  };

  auto* t = app.add_subcommand("train", "one training run");
  add_common(t, train_o, true, false, nullptr);

  auto* s = app.add_subcommand("sweep", "multi-seed sweep over one axis");
  add_common(s, sweep_o, true, true, &sweep_seeds_text);
  s->add_option("--axis", sweep_axis,
                "lambda|split_index|disc_capacity_delta|loss_kind|warmup_mode|"
                "condition");
  s->add_option("--values", sweep_values, "comma-separated axis values");

  auto* c = app.add_subcommand(
      "conditions", "baseline / adversarial / target-labeled comparison");
  add_common(c, cond_o, false, true, &cond_seeds_text);
  c->add_option("--family", cond_family,
                "gauss2d|moons2d|texture_cls|roadway_seg")
      ->required();
  c->add_option("--preset", cond_preset, "mild|severe");

  auto* g = app.add_subcommand("gradcheck",
                               "finite-difference gradient verification");
  g->add_option("--seed", gc_seed, "random model seed");
  g->add_option("--models", gc_models, "number of random models")
      ->check(CLI::PositiveNumber);
  g->add_flag("--corrupt-gradient", gc_corrupt,
              "negative-control hook: inject one wrong gradient value");

  auto* cv = app.add_subcommand("curves", "analytic encoder-loss curves CSV");
  add_common(cv, curves_o, false, false, nullptr);

  auto* ed = app.add_subcommand("export-data",
                                "write the config's dataset pair to disk");
  add_common(ed, export_o, true, false, nullptr);

  auto* va = app.add_subcommand("verify-aggregate",
                                "re-aggregate a sweep directory and compare");
  va->add_option("run_dir", verify_dir, "sweep run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (t->parsed()) return cmd_train(train_o, argv_copy);
    if (s->parsed()) {
      if (!sweep_seeds_text.empty())
        sweep_o.seeds = parse_seed_list(sweep_seeds_text);
      return cmd_sweep(sweep_o, sweep_axis, sweep_values, argv_copy);
    }
    if (c->parsed()) {
      if (!cond_seeds_text.empty())
        cond_o.seeds = parse_seed_list(cond_seeds_text);
      return cmd_conditions(cond_o, cond_family, cond_preset, argv_copy);
    }
    if (g->parsed()) return cmd_gradcheck(gc_seed, gc_models, gc_corrupt);
    if (cv->parsed()) return cmd_curves(curves_o, argv_copy);
    if (ed->parsed()) return cmd_export_data(export_o, argv_copy);
    if (va->parsed()) return cmd_verify_aggregate(verify_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitConfigError;
}
