#include "adaforge/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include "adaforge/checkpoint.hpp"
#include "adaforge/manifest.hpp"
#include "adaforge/model.hpp"

namespace adaforge {

namespace {

namespace fs = std::filesystem;

double parse_double_strict(const std::string& s) {
  size_t idx = 0;
  double v = 0;
  try {
    v = std::stod(s, &idx);
  } catch (const std::exception&) {
    throw std::invalid_argument("axis value is not a number: '" + s + "'");
  }
  if (idx != s.size())
    throw std::invalid_argument("axis value is not a number: '" + s + "'");
  return v;
}

int64_t parse_int_strict(const std::string& s) {
  size_t idx = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &idx);
  } catch (const std::exception&) {
    throw std::invalid_argument("axis value is not an integer: '" + s + "'");
  }
  if (idx != s.size())
    throw std::invalid_argument("axis value is not an integer: '" + s + "'");
  return v;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string format_sweep_row(const SweepRow& r) {
  std::ostringstream ss;
  ss << r.value << ',' << fmt6(r.mean_pt) << ',' << fmt6(r.std_pt) << ','
     << fmt6(r.mean_ps) << ',' << fmt6(r.std_ps) << ',' << r.diverged;
  return ss.str();
}

constexpr const char* kSweepCsvHeader =
    "axis_value,mean_pt,std_pt,mean_ps,std_ps,diverged";

}  // namespace

// ---------------------------------------------------------------------------
// Presets and profiles
// ---------------------------------------------------------------------------

double preset_severity(Preset p) { return p == Preset::Mild ? 0.35 : 0.85; }

const char* preset_name(Preset p) { return p == Preset::Mild ? "mild" : "severe"; }

Preset preset_from_name(const std::string& name) {
  if (name == "mild") return Preset::Mild;
  if (name == "severe") return Preset::Severe;
  throw std::invalid_argument("unknown preset: '" + name + "' (mild|severe)");
}

RunConfig condition_profile(DataFamily family, Preset preset) {
  RunConfig cfg;
  cfg.data.family = family;
  cfg.data.severity = preset_severity(preset);
  switch (family) {
    case DataFamily::Gauss2d:
    case DataFamily::Moons2d:
      cfg.data.classes = family == DataFamily::Gauss2d ? 3 : 2;
      cfg.data.n_train = 600;
      cfg.data.n_test = 300;
      cfg.train.lambda = 0.5;
      cfg.train.total_epochs = 40;
      cfg.train.warmup_epochs = 10;
      cfg.train.batch_size = 32;
      break;
    case DataFamily::TextureCls:
      cfg.data.classes = 20;
      cfg.data.n_train = 360;
      cfg.data.n_test = 200;
      cfg.train.lambda = 0.10;
      cfg.train.total_epochs = 48;
      cfg.train.warmup_epochs = 14;
      cfg.train.batch_size = 40;
      break;
    case DataFamily::RoadwaySeg:
      cfg.data.classes = 2;
      cfg.data.n_train = 96;
      cfg.data.n_test = 24;
      cfg.train.lambda = 0.02;
      cfg.train.total_epochs = 24;
      cfg.train.warmup_epochs = 8;
      cfg.train.batch_size = 8;
      break;
  }
  cfg.train.learning_rate = 0.05;
  cfg.train.loss_kind = EncoderLossKind::Confusion;
  return cfg;
}

// ---------------------------------------------------------------------------
// Axes
// ---------------------------------------------------------------------------

const char* axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::Lambda: return "lambda";
    case SweepAxis::SplitIndex: return "split_index";
    case SweepAxis::DiscCapacityDelta: return "disc_capacity_delta";
    case SweepAxis::LossKind: return "loss_kind";
    case SweepAxis::WarmupMode: return "warmup_mode";
    case SweepAxis::Condition: return "condition";
  }
  return "?";
}

SweepAxis axis_from_name(const std::string& name) {
  if (name == "lambda") return SweepAxis::Lambda;
  if (name == "split_index") return SweepAxis::SplitIndex;
  if (name == "disc_capacity_delta") return SweepAxis::DiscCapacityDelta;
  if (name == "loss_kind") return SweepAxis::LossKind;
  if (name == "warmup_mode") return SweepAxis::WarmupMode;
  if (name == "condition") return SweepAxis::Condition;
  throw std::invalid_argument(
      "unknown sweep axis: '" + name +
      "' (lambda|split_index|disc_capacity_delta|loss_kind|warmup_mode|condition)");
}

std::vector<std::string> default_axis_values(SweepAxis axis, EncoderLossKind loss) {
  switch (axis) {
    case SweepAxis::Lambda:
      if (loss == EncoderLossKind::Confusion)
        return {"10", "1", "0.1", "0.01", "0.001", "0.0001", "1e-05"};
      return {"0.01", "0.001", "0.0001", "1e-05", "1e-06", "1e-07", "1e-08"};
    case SweepAxis::SplitIndex:
      return {"1", "2", "3", "4", "5", "6", "7"};
    case SweepAxis::DiscCapacityDelta:
      return {"-2", "0", "2"};
    case SweepAxis::LossKind:
      return {"confusion", "minimax"};
    case SweepAxis::WarmupMode:
      return {"none", "checkpoint", "warmup", "both"};
    case SweepAxis::Condition:
      return {"baseline", "ada", "upper"};
  }
  return {};
}

RunConfig apply_axis_value(const RunConfig& base, SweepAxis axis,
                           const std::string& value, uint32_t seed) {
  RunConfig cfg = base;
  cfg.train.seed = seed;
  switch (axis) {
    case SweepAxis::Lambda:
      cfg.train.lambda = parse_double_strict(value);
      break;
    case SweepAxis::SplitIndex:
      cfg.train.split_index = parse_int_strict(value);
      break;
    case SweepAxis::DiscCapacityDelta:
      cfg.train.disc_capacity_delta = parse_int_strict(value);
      break;
    case SweepAxis::LossKind:
      cfg.train.loss_kind = encoder_loss_kind_from_name(value);
      break;
    case SweepAxis::WarmupMode:
      if (value == "none") {
        cfg.train.warmup_epochs = 0;
        cfg.train.pretrain_checkpoint.clear();
      } else if (value == "checkpoint") {
        if (base.train.pretrain_checkpoint.empty())
          throw std::invalid_argument(
              "warmup_mode value 'checkpoint' needs a pretraining checkpoint "
              "(set SweepSpec::work_dir or base pretrain_checkpoint)");
        cfg.train.warmup_epochs = 0;
      } else if (value == "warmup") {
        cfg.train.pretrain_checkpoint.clear();
      } else if (value == "both") {
        if (base.train.pretrain_checkpoint.empty())
          throw std::invalid_argument(
              "warmup_mode value 'both' needs a pretraining checkpoint "
              "(set SweepSpec::work_dir or base pretrain_checkpoint)");
      } else {
        throw std::invalid_argument("unknown warmup_mode value: '" + value +
                                    "' (none|checkpoint|warmup|both)");
      }
      break;
    case SweepAxis::Condition:
      condition_from_name(value);  // validates; condition applied at run time
      break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

void SweepSpec::validate() const {
  base.validate();
  if (values.empty()) throw std::invalid_argument("sweep values must be non-empty");
  if (seeds.empty()) throw std::invalid_argument("sweep seeds must be non-empty");
  for (size_t i = 0; i < seeds.size(); ++i)
    for (size_t j = i + 1; j < seeds.size(); ++j)
      if (seeds[i] == seeds[j])
        throw std::invalid_argument("sweep seeds must be distinct (duplicate " +
                                    std::to_string(seeds[i]) + ")");
  // Parse-check every value. The pretraining checkpoint is generated later,
  // so stand in a placeholder path for the check.
  RunConfig probe = base;
  if (axis == SweepAxis::WarmupMode && probe.train.pretrain_checkpoint.empty()) {
    if (work_dir.empty())
      throw std::invalid_argument(
          "warmup_mode sweep needs work_dir (for the generated pretraining "
          "checkpoint) or a base pretrain_checkpoint");
    probe.train.pretrain_checkpoint = "placeholder";
  }
  for (const auto& v : values) apply_axis_value(probe, axis, v, base.train.seed);
}

SweepRow aggregate_row(const std::string& value,
                       const std::vector<TrialResult>& trials) {
  SweepRow row;
  row.value = value;
  if (trials.empty()) return row;
  // Canonical order: aggregation must not depend on the caller's seed order.
  std::vector<const TrialResult*> sorted;
  sorted.reserve(trials.size());
  for (const auto& t : trials) sorted.push_back(&t);
  std::sort(sorted.begin(), sorted.end(),
            [](const TrialResult* a, const TrialResult* b) { return a->seed < b->seed; });

  const double n = static_cast<double>(sorted.size());
  double spt = 0, sps = 0;
  for (const auto* t : sorted) {
    spt += t->final_p_t;
    sps += t->final_p_s;
    row.diverged += t->diverged ? 1 : 0;
  }
  row.mean_pt = spt / n;
  row.mean_ps = sps / n;
  if (sorted.size() > 1) {
    double vpt = 0, vps = 0;
    for (const auto* t : sorted) {
      vpt += (t->final_p_t - row.mean_pt) * (t->final_p_t - row.mean_pt);
      vps += (t->final_p_s - row.mean_ps) * (t->final_p_s - row.mean_ps);
    }
    row.std_pt = std::sqrt(vpt / (n - 1.0));
    row.std_ps = std::sqrt(vps / (n - 1.0));
  } else {
    row.low_confidence = true;  // single trial: std 0 by convention
  }
  row.all_diverged = row.diverged == static_cast<int>(sorted.size());
  return row;
}

std::string SweepTable::to_csv() const {
  std::ostringstream ss;
  ss << kSweepCsvHeader << '\n';
  for (const auto& r : rows) ss << format_sweep_row(r) << '\n';
  return ss.str();
}

SweepTable run_sweep(const SweepSpec& spec, int jobs, const TrialSink& sink) {
  spec.validate();
  SweepSpec s = spec;

  // The pretraining axis needs an encoder checkpoint from a source-only run
  // of the same family under a seed outside the sweep's seed list.
  if (s.axis == SweepAxis::WarmupMode && s.base.train.pretrain_checkpoint.empty()) {
    const std::string ckpt = (fs::path(s.work_dir) / "pretrain.ckpt").string();
    if (!fs::exists(ckpt)) {
      RunConfig pre = s.base;
      pre.train.warmup_epochs = pre.train.total_epochs;
      pre.train.pretrain_checkpoint.clear();
      pre.train.seed = s.base.train.seed + 1000000;
      SplitModel pretrained;
      run_trial(pre, &pretrained);
      fs::create_directories(s.work_dir);
      save_checkpoint(pretrained, ckpt, pre.train.total_epochs);
    }
    s.base.train.pretrain_checkpoint = ckpt;
  }

  struct Job {
    size_t value_index;
    uint32_t seed;
    RunConfig cfg;
    Condition cond = Condition::Ada;
    bool is_condition = false;
  };
  std::vector<Job> todo;
  for (size_t vi = 0; vi < s.values.size(); ++vi)
    for (uint32_t seed : s.seeds) {
      Job j;
      j.value_index = vi;
      j.seed = seed;
      j.cfg = apply_axis_value(s.base, s.axis, s.values[vi], seed);
      if (s.axis == SweepAxis::Condition) {
        j.is_condition = true;
        j.cond = condition_from_name(s.values[vi]);
      }
      todo.push_back(std::move(j));
    }

  std::vector<TrialResult> results(todo.size());
  std::vector<std::exception_ptr> errors(todo.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t k = next.fetch_add(1);
      if (k >= todo.size()) return;
      try {
        results[k] = todo[k].is_condition
                         ? run_condition_trial(todo[k].cfg, todo[k].cond)
                         : run_trial(todo[k].cfg);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int nthreads = std::max(1, std::min<int>(jobs, static_cast<int>(todo.size())));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nthreads));
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  if (sink)
    for (size_t k = 0; k < todo.size(); ++k)
      sink(s.values[todo[k].value_index], todo[k].seed, results[k]);

  SweepTable table;
  table.axis = s.axis;
  const size_t per_value = s.seeds.size();
  for (size_t vi = 0; vi < s.values.size(); ++vi) {
    std::vector<TrialResult> trials(results.begin() + static_cast<int64_t>(vi * per_value),
                                    results.begin() + static_cast<int64_t>((vi + 1) * per_value));
    table.rows.push_back(aggregate_row(s.values[vi], trials));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Conditions
// ---------------------------------------------------------------------------

const char* condition_name(Condition c) {
  switch (c) {
    case Condition::Baseline: return "baseline";
    case Condition::Ada: return "ada";
    case Condition::Upper: return "upper";
  }
  return "?";
}

Condition condition_from_name(const std::string& name) {
  if (name == "baseline") return Condition::Baseline;
  if (name == "ada") return Condition::Ada;
  if (name == "upper") return Condition::Upper;
  throw std::invalid_argument("unknown condition: '" + name +
                              "' (baseline|ada|upper)");
}

TrialResult run_condition_trial(const RunConfig& cfg, Condition cond,
                                SplitModel* model_out) {
  switch (cond) {
    case Condition::Ada:
      return run_trial(cfg, model_out);
    case Condition::Baseline: {
      RunConfig b = cfg;
      b.train.warmup_epochs = b.train.total_epochs;
      return run_trial(b, model_out);
    }
    case Condition::Upper: {
      RunConfig u = cfg;
      u.train.warmup_epochs = u.train.total_epochs;
      u.validate();
      DomainData data = make_pair(u.resolved_data());
      data.source_train = upper_bound_target_train(data);
      SplitModel model = build_split_model(u.network(), u.train.seed);
      TrialResult result = train(model, data, u.train, u.hash());
      if (model_out) *model_out = std::move(model);
      return result;
    }
  }
  throw std::logic_error("unreachable condition");
}

namespace {

ConditionStats make_stats(const std::vector<uint32_t>& seeds,
                          const std::map<std::pair<std::string, uint32_t>,
                                         TrialResult>& collected,
                          const std::string& cond) {
  ConditionStats st;
  std::vector<TrialResult> trials;
  for (uint32_t seed : seeds) {
    const auto it = collected.find({cond, seed});
    if (it == collected.end())
      throw std::logic_error("missing condition trial: " + cond + " seed " +
                             std::to_string(seed));
    st.pt.push_back(it->second.final_p_t);
    st.ps.push_back(it->second.final_p_s);
    trials.push_back(it->second);
  }
  const SweepRow row = aggregate_row(cond, trials);
  st.mean_pt = row.mean_pt;
  st.std_pt = row.std_pt;
  st.mean_ps = row.mean_ps;
  st.std_ps = row.std_ps;
  st.diverged = row.diverged;
  st.median_pt = median_of(st.pt);
  st.median_ps = median_of(st.ps);
  return st;
}

}  // namespace

double ConditionReport::closure() const {
  const double den = upper.median_pt - baseline.median_pt;
  if (std::fabs(den) < 1e-12) return std::numeric_limits<double>::quiet_NaN();
  return (ada.median_pt - baseline.median_pt) / den;
}

std::string ConditionReport::to_csv() const {
  std::ostringstream ss;
  ss << "condition,mean_pt,std_pt,median_pt,mean_ps,std_ps,median_ps,diverged\n";
  const auto row = [&ss](const char* name, const ConditionStats& st) {
    ss << name << ',' << fmt6(st.mean_pt) << ',' << fmt6(st.std_pt) << ','
       << fmt6(st.median_pt) << ',' << fmt6(st.mean_ps) << ',' << fmt6(st.std_ps)
       << ',' << fmt6(st.median_ps) << ',' << st.diverged << '\n';
  };
  row("baseline", baseline);
  row("ada", ada);
  row("upper", upper);
  return ss.str();
}

ConditionReport run_conditions(DataFamily family, Preset preset,
                               const std::vector<uint32_t>& seeds, int jobs,
                               const TrialSink& sink) {
  SweepSpec s;
  s.base = condition_profile(family, preset);
  s.axis = SweepAxis::Condition;
  s.values = {"baseline", "ada", "upper"};
  s.seeds = seeds;

  std::map<std::pair<std::string, uint32_t>, TrialResult> collected;
  SweepTable table = run_sweep(s, jobs, [&](const std::string& value,
                                            uint32_t seed,
                                            const TrialResult& r) {
    collected[{value, seed}] = r;
    if (sink) sink(value, seed, r);
  });

  ConditionReport report;
  report.table = std::move(table);
  report.family = family;
  report.preset = preset;
  report.seeds = seeds;
  report.baseline = make_stats(seeds, collected, "baseline");
  report.ada = make_stats(seeds, collected, "ada");
  report.upper = make_stats(seeds, collected, "upper");
  return report;
}

// ---------------------------------------------------------------------------
// Analytic curves
// ---------------------------------------------------------------------------

std::string curves_csv() {
  std::ostringstream ss;
  ss << "d_output,conf_loss,conf_grad,mm_loss,mm_grad\n";
  char buf[256];
  for (int i = 1; i <= 99; ++i) {
    const double d = static_cast<double>(i) / 100.0;
    const double conf_loss = -std::log(d);
    const double conf_grad = -1.0 / d;
    const double mm_loss = std::log(1.0 - d);
    const double mm_grad = -1.0 / (1.0 - d);
    std::snprintf(buf, sizeof(buf), "%.2f,%.17g,%.17g,%.17g,%.17g\n", d,
                  conf_loss, conf_grad, mm_loss, mm_grad);
    ss << buf;
  }
  return ss.str();
}

// ---------------------------------------------------------------------------
// Aggregation verification
// ---------------------------------------------------------------------------

std::string verify_aggregate_dir(const std::string& run_dir) {
  const fs::path root(run_dir);
  const fs::path csv_path = root / "table.csv";
  if (!fs::exists(csv_path)) return "missing table.csv under " + run_dir;

  size_t expected_trials = 0;
  const fs::path manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path)) {
    const RunManifest m = RunManifest::parse(read_text_file(manifest_path.string()));
    expected_trials = m.seeds.size();
  }

  std::istringstream csv(read_text_file(csv_path.string()));
  std::string line;
  if (!std::getline(csv, line)) return "table.csv is empty";
  if (line != kSweepCsvHeader)
    return "table.csv header mismatch: '" + line + "'";

  size_t rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    ++rows;
    const std::string value = line.substr(0, line.find(','));
    const fs::path trial_dir = root / "trials" / sanitize_component(value);
    if (!fs::is_directory(trial_dir))
      return "missing trial directory for row '" + value + "'";

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(trial_dir))
      if (e.path().extension() == ".json") files.push_back(e.path());
    if (files.empty()) return "no trial JSON files for row '" + value + "'";
    if (expected_trials != 0 && files.size() != expected_trials)
      return "row '" + value + "' has " + std::to_string(files.size()) +
             " trials, manifest lists " + std::to_string(expected_trials) +
             " seeds";

    std::vector<TrialResult> trials;
    for (const auto& f : files)
      trials.push_back(parse_trial_json(read_text_file(f.string())));

    const std::string recomputed = format_sweep_row(aggregate_row(value, trials));
    if (recomputed != line)
      return "row '" + value + "' mismatch:\n  csv:        " + line +
             "\n  recomputed: " + recomputed;
  }
  if (rows == 0) return "table.csv has no data rows";
  return "";
}

}  // namespace adaforge
