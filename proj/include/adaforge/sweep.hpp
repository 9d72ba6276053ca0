#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "adaforge/config.hpp"
#include "adaforge/datasets.hpp"
#include "adaforge/trainer.hpp"

namespace adaforge {

// ---------------------------------------------------------------------------
// Shift presets and tuned per-family run profiles
// ---------------------------------------------------------------------------

enum class Preset { Mild, Severe };
double preset_severity(Preset p);  // 0.35 / 0.85
const char* preset_name(Preset p);
Preset preset_from_name(const std::string& name);

/// The tuned hyperparameters used by the three-condition comparison for one
/// data family (sample counts, lambda, epoch budget, batch size). The preset
/// only selects the shift severity; the rest is identical across presets.
RunConfig condition_profile(DataFamily family, Preset preset);

// ---------------------------------------------------------------------------
// Multi-seed sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis {
  Lambda,
  SplitIndex,
  DiscCapacityDelta,
  LossKind,
  WarmupMode,
  Condition,
};
const char* axis_name(SweepAxis a);
SweepAxis axis_from_name(const std::string& name);

/// The default value grid for an axis. Lambda grids are decade grids whose
/// range depends on the encoder loss: confusion {10 ... 1e-5}, minimax
/// {1e-2 ... 1e-8}.
std::vector<std::string> default_axis_values(SweepAxis axis, EncoderLossKind loss);

struct SweepSpec {
  RunConfig base;
  SweepAxis axis = SweepAxis::Lambda;
  std::vector<std::string> values;  // axis values, rendered as strings
  std::vector<uint32_t> seeds = {1, 2, 3, 4, 5};
  /// Directory for artifacts some axes require as inputs (the pretraining
  /// axis generates an encoder checkpoint here). Unused otherwise.
  std::string work_dir;

  /// Values non-empty and parseable for the axis, seeds non-empty and
  /// distinct, base config valid. Throws std::invalid_argument.
  void validate() const;
};

struct SweepRow {
  std::string value;
  double mean_pt = 0.0, std_pt = 0.0;
  double mean_ps = 0.0, std_ps = 0.0;
  int diverged = 0;
  bool low_confidence = false;  // single-seed row: std 0 by convention
  bool all_diverged = false;    // every trial diverged; flagged, not fatal
};

struct SweepTable {
  SweepAxis axis = SweepAxis::Lambda;
  std::vector<SweepRow> rows;  // one per value, in SweepSpec::values order
  /// columns: axis_value, mean_pt, std_pt, mean_ps, std_ps, diverged
  std::string to_csv() const;
};

/// Returns a copy of `base` with one axis value and the trial seed applied.
/// Throws std::invalid_argument on a value that does not parse for the axis.
RunConfig apply_axis_value(const RunConfig& base, SweepAxis axis,
                           const std::string& value, uint32_t seed);

/// Sample mean/std (n-1) aggregation of one row; the same routine backs
/// run_sweep and the verify-aggregate re-computation.
SweepRow aggregate_row(const std::string& value,
                       const std::vector<TrialResult>& trials);

/// Called once per finished trial, after all trials completed, in
/// deterministic (value-order, then seed-order) sequence regardless of the
/// number of worker threads.
using TrialSink =
    std::function<void(const std::string& axis_value, uint32_t seed,
                       const TrialResult& result)>;

/// One trial per (value, seed); trials may run on `jobs` worker threads, the
/// aggregation and sink order never depend on completion order.
SweepTable run_sweep(const SweepSpec& spec, int jobs = 1,
                     const TrialSink& sink = {});

// ---------------------------------------------------------------------------
// Three-condition comparison (baseline / adversarial / target-labeled)
// ---------------------------------------------------------------------------

enum class Condition { Baseline, Ada, Upper };
const char* condition_name(Condition c);
Condition condition_from_name(const std::string& name);

/// Baseline: the run config with every epoch supervised (bit-identical to a
/// plain trainer run with total_epochs = warmup_epochs). Ada: the config as
/// given. Upper: the same trainer fed the labeled target training set in
/// place of the source training set.
TrialResult run_condition_trial(const RunConfig& cfg, Condition cond,
                                SplitModel* model_out = nullptr);

struct ConditionStats {
  std::vector<double> pt, ps;  // per seed, in seeds order
  double mean_pt = 0.0, std_pt = 0.0, median_pt = 0.0;
  double mean_ps = 0.0, std_ps = 0.0, median_ps = 0.0;
  int diverged = 0;
};

struct ConditionReport {
  DataFamily family = DataFamily::Gauss2d;
  Preset preset = Preset::Mild;
  std::vector<uint32_t> seeds;
  ConditionStats baseline, ada, upper;
  SweepTable table;  // the same trials in sweep-table form

  /// (median P_T(ada) - median P_T(baseline)) /
  /// (median P_T(upper) - median P_T(baseline)); NaN when the denominator is
  /// smaller than 1e-12.
  double closure() const;
  /// columns: condition, mean_pt, std_pt, median_pt, mean_ps, std_ps,
  /// median_ps, diverged
  std::string to_csv() const;
};

ConditionReport run_conditions(DataFamily family, Preset preset,
                               const std::vector<uint32_t>& seeds,
                               int jobs = 1, const TrialSink& sink = {});

// ---------------------------------------------------------------------------
// Analytic encoder-loss curves
// ---------------------------------------------------------------------------

/// Target-side loss terms and their d-derivatives for both encoder losses on
/// the discriminator-output grid d = 0.01 ... 0.99 (step 0.01, 99 rows).
/// columns: d_output, conf_loss, conf_grad, mm_loss, mm_grad
/// with conf_loss = -ln d, conf_grad = -1/d, mm_loss = ln(1-d),
/// mm_grad = -1/(1-d).
std::string curves_csv();

// ---------------------------------------------------------------------------
// Aggregation verification
// ---------------------------------------------------------------------------

/// Re-aggregates the per-trial JSON files under `run_dir`/trials and compares
/// against `run_dir`/table.csv byte-for-byte (after identical formatting).
/// Returns an empty string on success, else a description of the first
/// mismatch.
std::string verify_aggregate_dir(const std::string& run_dir);

}  // namespace adaforge
