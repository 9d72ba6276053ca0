// Acceptance suite: every release gate in one binary, one PASS/FAIL line per
// criterion, with the measured numbers printed underneath. Returns the number
// of failed criteria. Runs the expensive multi-seed studies, so it carries a
// long ctest timeout; everything is single-threaded for honest CPU accounting.

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "adaforge/autodiff.hpp"
#include "adaforge/config.hpp"
#include "adaforge/datasets.hpp"
#include "adaforge/gradcheck.hpp"
#include "adaforge/losses.hpp"
#include "adaforge/model.hpp"
#include "adaforge/routing.hpp"
#include "adaforge/sweep.hpp"
#include "adaforge/trainer.hpp"

#ifndef ADAFORGE_CLI_PATH
#error "ADAFORGE_CLI_PATH must point at the built adaforge binary"
#endif

using namespace adaforge;
namespace fs = std::filesystem;

namespace {

const std::vector<uint32_t> kSeeds = {1, 2, 3, 4, 5};

struct Timer {
  std::chrono::steady_clock::time_point wall0 = std::chrono::steady_clock::now();
  std::clock_t cpu0 = std::clock();
  double wall() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0)
        .count();
  }
  double cpu() const {
    return static_cast<double>(std::clock() - cpu0) / CLOCKS_PER_SEC;
  }
};

// Condition reports are shared between several criteria; compute each once.
struct Cache {
  std::map<std::pair<int, int>, ConditionReport> conditions;  // (family, preset)
  std::map<std::pair<int, int>, double> condition_cpu_s;

  const ConditionReport& report(DataFamily family, Preset preset) {
    const auto key = std::make_pair(static_cast<int>(family),
                                    static_cast<int>(preset));
    auto it = conditions.find(key);
    if (it == conditions.end()) {
      Timer t;
      ConditionReport r = run_conditions(family, preset, kSeeds, 1);
      condition_cpu_s[key] = t.cpu();
      it = conditions.emplace(key, std::move(r)).first;
    }
    return it->second;
  }
  double cpu_seconds(DataFamily family, Preset preset) const {
    return condition_cpu_s.at(
        {static_cast<int>(family), static_cast<int>(preset)});
  }
};

Cache g_cache;

std::ostringstream g_detail;

void detail(const std::string& line) { g_detail << "    " << line << "\n"; }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

const char* family_label(DataFamily f) {
  switch (f) {
    case DataFamily::Gauss2d: return "gauss2d";
    case DataFamily::Moons2d: return "moons2d";
    case DataFamily::TextureCls: return "texture_cls";
    case DataFamily::RoadwaySeg: return "roadway_seg";
  }
  return "?";
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * a.numel()) == 0;
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients match central finite differences on random models.
// ---------------------------------------------------------------------------

bool criterion_gradcheck() {
  Timer t;
  const GradcheckReport r = run_gradcheck(20260823, 20);
  const double wall = t.wall();
  detail("models=" + std::to_string(r.models) +
         " params=" + std::to_string(r.params_checked) +
         " max_rel_err=" + std::to_string(r.max_rel_err) +
         " worst=" + r.worst_param);
  detail("wall=" + fmt(wall) + "s (budget 60s)");
  for (const auto& f : r.failures) detail("failure: " + f);
  return r.models >= 20 && r.passed() && r.max_rel_err < 1e-4 && wall < 60.0;
}

// ---------------------------------------------------------------------------
// 2. The minimax encoder loss is the exact negation of the discriminator
//    loss on random probability batches.
// ---------------------------------------------------------------------------

bool criterion_minimax_identity() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> logits(0.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    Tensor s(Shape{5, 1});
    Tensor tt(Shape{3, 1});
    for (int64_t i = 0; i < s.numel(); ++i)
      s[static_cast<size_t>(i)] = 1.0 / (1.0 + std::exp(-logits(rng)));
    for (int64_t i = 0; i < tt.numel(); ++i)
      tt[static_cast<size_t>(i)] = 1.0 / (1.0 + std::exp(-logits(rng)));
    const Value ds = Value::constant(s);
    const Value dt = Value::constant(tt);
    const double l_ad = discriminator_loss(ds, dt).data()[0];
    const double l_mm =
        encoder_adversarial_loss(EncoderLossKind::Minimax, ds, dt).data()[0];
    worst = std::max(worst, std::abs(l_mm + l_ad));
  }
  detail("pairs=10000 max |l_mm + l_ad| = " + std::to_string(worst));
  return worst < 1e-12;
}

// ---------------------------------------------------------------------------
// 3. Loss curves: the confusion gradient dominates the minimax gradient for
//    every confident discriminator output, with the pinned spot values.
// ---------------------------------------------------------------------------

bool criterion_curves() {
  std::istringstream ss(curves_csv());
  std::string line;
  std::getline(ss, line);  // header
  bool dominates = true;
  double conf_at_01 = 0.0, mm_at_01 = 0.0;
  int rows = 0;
  while (std::getline(ss, line)) {
    ++rows;
    std::stringstream fields(line);
    std::string tok;
    std::vector<double> v;
    while (std::getline(fields, tok, ',')) v.push_back(std::stod(tok));
    const double d = v[0], conf_grad = v[2], mm_grad = v[4];
    if (d < 0.50 && !(std::abs(conf_grad) > std::abs(mm_grad))) dominates = false;
    if (std::abs(d - 0.10) < 1e-9) {
      conf_at_01 = conf_grad;
      mm_at_01 = mm_grad;
    }
  }
  detail("rows=" + std::to_string(rows) + " |conf_grad(0.1)|=" +
         fmt(std::abs(conf_at_01)) + " |mm_grad(0.1)|=" + fmt(std::abs(mm_at_01)));
  return rows == 99 && dominates &&
         std::abs(std::abs(conf_at_01) - 10.0) < 1e-12 &&
         std::abs(std::abs(mm_at_01) - 10.0 / 9.0) < 1e-3;
}

// ---------------------------------------------------------------------------
// 4. Gradient routing isolation: lambda=0 leaves the discriminator's
//    parameters bit-identical over a full run, and with a perfect supervised
//    head the adversarial-only step leaves the task head bit-identical.
// ---------------------------------------------------------------------------

RunConfig quick_cfg() {
  RunConfig cfg;
  cfg.data.family = DataFamily::Gauss2d;
  cfg.data.severity = 0.35;
  cfg.data.classes = 3;
  cfg.data.n_train = 120;
  cfg.data.n_test = 60;
  cfg.train.lambda = 0.5;
  cfg.train.warmup_epochs = 2;
  cfg.train.total_epochs = 5;
  cfg.train.batch_size = 32;
  cfg.train.learning_rate = 0.05;
  cfg.train.seed = 1;
  return cfg;
}

bool criterion_routing_isolation() {
  bool ok = true;

  // Discriminator freeze under lambda=0 across ten adversarial epochs.
  RunConfig cfg = quick_cfg();
  cfg.train.lambda = 0.0;
  cfg.train.warmup_epochs = 0;
  cfg.train.total_epochs = 10;
  const DomainData data = make_pair(cfg.resolved_data());
  SplitModel model = build_split_model(cfg.network(), cfg.train.seed);
  std::vector<Tensor> disc_before;
  for (const auto& p : model.params)
    if (p.group == ParamGroup::Discriminator)
      disc_before.push_back(p.value.data());
  train(model, data, cfg.train, cfg.hash());
  size_t k = 0;
  int disc_params = 0;
  for (const auto& p : model.params)
    if (p.group == ParamGroup::Discriminator) {
      ++disc_params;
      if (!bits_equal(p.value.data(), disc_before[k++])) {
        detail("discriminator parameter changed under lambda=0: " + p.name);
        ok = false;
      }
    }
  detail("lambda=0, 10 epochs: " + std::to_string(disc_params) +
         " discriminator tensors bit-compared");

  // Task-head freeze when the supervised gradient is exactly zero.
  SplitModel m2 = build_split_model(quick_cfg().network(), 3);
  DomainBatch batch;
  batch.source_inputs = data.source_train.inputs;
  batch.source_labels = data.source_train.labels;
  batch.target_inputs = data.target_train.inputs;
  ObjectiveConfig oc;
  oc.lambda = 0.7;
  oc.encoder_loss = EncoderLossKind::Confusion;
  oc.test_zero_supervised = true;
  const RoutedGrads rg = routed_gradients(m2, batch, oc);
  std::vector<Tensor> task_before;
  for (const auto& p : m2.params)
    if (p.group == ParamGroup::Task) task_before.push_back(p.value.data());
  for (size_t i = 0; i < m2.params.size(); ++i) {
    Tensor& pv = m2.params[i].value.data();
    for (int64_t j = 0; j < pv.numel(); ++j)
      pv[static_cast<size_t>(j)] -=
          0.05 * rg.grads[i][static_cast<size_t>(j)];
  }
  k = 0;
  int task_params = 0;
  for (const auto& p : m2.params)
    if (p.group == ParamGroup::Task) {
      ++task_params;
      if (!bits_equal(p.value.data(), task_before[k++])) {
        detail("task parameter changed by adversarial-only step: " + p.name);
        ok = false;
      }
    }
  detail("zero-supervised hook: " + std::to_string(task_params) +
         " task tensors bit-compared after a routed step");
  return ok;
}

// ---------------------------------------------------------------------------
// 5. Three-condition ordering on the mild preset, with the adaptation gain
//    and the per-family time budget.
// ---------------------------------------------------------------------------

const std::vector<DataFamily> kCompareFamilies = {
    DataFamily::Gauss2d, DataFamily::Moons2d, DataFamily::TextureCls};

bool criterion_conditions_mild() {
  bool ok = true;
  int big_gains = 0;
  for (DataFamily family : kCompareFamilies) {
    const ConditionReport& r = g_cache.report(family, Preset::Mild);
    const double base = r.baseline.median_pt, ada = r.ada.median_pt,
                 upper = r.upper.median_pt;
    const double cpu = g_cache.cpu_seconds(family, Preset::Mild);
    const double gain = ada - base;
    if (gain >= 0.05) ++big_gains;
    const bool ordered = base < ada && ada < upper;
    detail(std::string(family_label(family)) + ": base=" + fmt(base) +
           " ada=" + fmt(ada) + " upper=" + fmt(upper) + " gain=" + fmt(gain) +
           " cpu=" + fmt(cpu) + "s");
    if (!ordered) {
      detail(std::string(family_label(family)) + ": ordering violated");
      ok = false;
    }
    if (cpu >= 300.0) {
      detail(std::string(family_label(family)) + ": over the 5-minute budget");
      ok = false;
    }
  }
  detail("families with gain >= 5 points: " + std::to_string(big_gains) +
         " (need >= 2)");
  return ok && big_gains >= 2;
}

// ---------------------------------------------------------------------------
// 6. The relative gap closure shrinks strictly from mild to severe.
// ---------------------------------------------------------------------------

bool criterion_closure_shrinks() {
  bool ok = true;
  for (DataFamily family : kCompareFamilies) {
    const double mild = g_cache.report(family, Preset::Mild).closure();
    const double severe = g_cache.report(family, Preset::Severe).closure();
    detail(std::string(family_label(family)) + ": closure mild=" + fmt(mild) +
           " severe=" + fmt(severe));
    if (!(severe < mild)) {
      detail(std::string(family_label(family)) + ": closure did not shrink");
      ok = false;
    }
  }
  return ok;
}

// ---------------------------------------------------------------------------
// 7. Adaptation does not buy target accuracy with source accuracy: on the
//    mild preset the source metric drops by at most one point.
// ---------------------------------------------------------------------------

bool criterion_source_preserved() {
  bool ok = true;
  for (DataFamily family : kCompareFamilies) {
    const ConditionReport& r = g_cache.report(family, Preset::Mild);
    const double drop = r.baseline.median_ps - r.ada.median_ps;
    detail(std::string(family_label(family)) + ": base_ps=" +
           fmt(r.baseline.median_ps) + " ada_ps=" + fmt(r.ada.median_ps) +
           " drop=" + fmt(drop));
    if (drop > 0.01 + 1e-9) {
      detail(std::string(family_label(family)) + ": source drop exceeds 1 point");
      ok = false;
    }
  }
  return ok;
}

// ---------------------------------------------------------------------------
// 8. The confusion lambda sweep has an interior optimum, and at least one
//    extreme is unstable (high variance or divergence).
// ---------------------------------------------------------------------------

bool criterion_lambda_sweep() {
  SweepSpec s;
  s.base = condition_profile(DataFamily::Moons2d, Preset::Mild);
  s.axis = SweepAxis::Lambda;
  s.values = default_axis_values(SweepAxis::Lambda, EncoderLossKind::Confusion);
  s.seeds = kSeeds;
  const SweepTable t = run_sweep(s);

  size_t best = 0;
  for (size_t i = 1; i < t.rows.size(); ++i)
    if (t.rows[i].mean_pt > t.rows[best].mean_pt) best = i;
  for (const auto& row : t.rows)
    detail("lambda=" + row.value + " mean_pt=" + fmt(row.mean_pt) +
           " std_pt=" + fmt(row.std_pt) +
           " diverged=" + std::to_string(row.diverged));
  detail("optimum at lambda=" + t.rows[best].value);

  const bool interior = best != 0 && best != t.rows.size() - 1;
  const double opt_std = t.rows[best].std_pt;
  auto unstable = [&](const SweepRow& r) {
    return r.diverged > 0 || r.std_pt >= 3.0 * opt_std;
  };
  const bool extreme_unstable =
      unstable(t.rows.front()) || unstable(t.rows.back());
  if (!interior) detail("optimum sits at a grid extreme");
  if (!extreme_unstable) detail("no extreme shows instability");
  return interior && extreme_unstable;
}

// ---------------------------------------------------------------------------
// 9. The split-index sweep over the seven-layer classifier peaks strictly
//    inside the range.
// ---------------------------------------------------------------------------

bool criterion_split_sweep() {
  SweepSpec s;
  s.base = condition_profile(DataFamily::TextureCls, Preset::Mild);
  s.base.data.n_train = 288;
  s.base.data.n_test = 160;
  s.base.train.total_epochs = 32;
  s.base.train.warmup_epochs = 10;
  s.base.train.batch_size = 32;
  s.base.train.lambda = 0.1;
  s.axis = SweepAxis::SplitIndex;
  s.values = default_axis_values(SweepAxis::SplitIndex, EncoderLossKind::Confusion);
  s.seeds = kSeeds;
  const SweepTable t = run_sweep(s);

  size_t best = 0;
  for (size_t i = 1; i < t.rows.size(); ++i)
    if (t.rows[i].mean_pt > t.rows[best].mean_pt) best = i;
  for (const auto& row : t.rows)
    detail("split=" + row.value + " mean_pt=" + fmt(row.mean_pt) +
           " std_pt=" + fmt(row.std_pt));
  detail("optimum at split=" + t.rows[best].value);
  return best != 0 && best != t.rows.size() - 1;
}

// ---------------------------------------------------------------------------
// 10. Patch discriminators: the 1x1 patch losses reduce to the scalar losses
//     exactly; full-image adaptation lifts roadway mAP by >= 3 points; the
//     patch variant is measured and reported alongside.
// ---------------------------------------------------------------------------

bool criterion_segmentation() {
  bool ok = true;

  // Degenerate 1x1 patch maps must give the scalar losses to 1e-12.
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor s4(Shape{2, 1, 1, 1}), t4(Shape{3, 1, 1, 1});
    Tensor s2(Shape{2, 1}), t2(Shape{3, 1});
    for (int64_t i = 0; i < 2; ++i) {
      const double v = unit(rng);
      s4[static_cast<size_t>(i)] = v;
      s2[static_cast<size_t>(i)] = v;
    }
    for (int64_t i = 0; i < 3; ++i) {
      const double v = unit(rng);
      t4[static_cast<size_t>(i)] = v;
      t2[static_cast<size_t>(i)] = v;
    }
    const Value ps = Value::constant(s4), pt = Value::constant(t4);
    const Value qs = Value::constant(s2), qt = Value::constant(t2);
    worst = std::max(worst,
                     std::abs(patch_discriminator_loss(ps, pt).data()[0] -
                              discriminator_loss(qs, qt).data()[0]));
    for (EncoderLossKind kind :
         {EncoderLossKind::Confusion, EncoderLossKind::Minimax})
      worst = std::max(
          worst, std::abs(patch_encoder_adversarial_loss(kind, ps, pt).data()[0] -
                          encoder_adversarial_loss(kind, qs, qt).data()[0]));
  }
  detail("1x1 patch vs scalar: max |diff| = " + std::to_string(worst));
  if (worst >= 1e-12) ok = false;

  // Full-image adaptation on the segmentation family.
  const ConditionReport& r = g_cache.report(DataFamily::RoadwaySeg, Preset::Mild);
  const double gain = r.ada.median_pt - r.baseline.median_pt;
  detail("roadway mild: base_map=" + fmt(r.baseline.median_pt) +
         " ada_map=" + fmt(r.ada.median_pt) + " gain=" + fmt(gain) +
         " (need >= 0.03)");
  if (gain < 0.03) ok = false;

  // Patch-level adaptation: measured and reported, not gated.
  RunConfig patch = condition_profile(DataFamily::RoadwaySeg, Preset::Mild);
  patch.train.patch_mode = true;
  std::vector<double> patch_pt;
  for (uint32_t seed : kSeeds) {
    patch.train.seed = seed;
    patch_pt.push_back(run_trial(patch).final_p_t);
  }
  std::sort(patch_pt.begin(), patch_pt.end());
  detail("roadway mild patch-ada: median map=" + fmt(patch_pt[patch_pt.size() / 2]) +
         " (reported only)");
  return ok;
}

// ---------------------------------------------------------------------------
// 11. Repeating the train command produces byte-identical trial files.
// ---------------------------------------------------------------------------

bool criterion_reproducible_cli() {
  const fs::path dir = fs::temp_directory_path() / "adaforge_acceptance_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << serialize_config(quick_cfg());
  }
  auto run_once = [&](const std::string& out) {
    const std::string cmd = std::string(ADAFORGE_CLI_PATH) + " train --config " +
                            (dir / "run.cfg").string() + " --out " +
                            (dir / out).string() + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  if (run_once("a") != 0 || run_once("b") != 0) {
    detail("train command failed");
    return false;
  }
  auto find_trial = [&](const std::string& out) -> fs::path {
    for (const auto& e : fs::recursive_directory_iterator(dir / out))
      if (e.path().filename() == "trial.json") return e.path();
    return {};
  };
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  const fs::path ta = find_trial("a"), tb = find_trial("b");
  if (ta.empty() || tb.empty()) {
    detail("trial.json missing");
    return false;
  }
  const bool same = slurp(ta) == slurp(tb);
  detail(std::string("independent invocations byte-identical: ") +
         (same ? "yes" : "NO"));
  return same;
}

struct Criterion {
  const char* title;
  std::function<bool()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"analytic gradients match finite differences on 20 random models",
       criterion_gradcheck},
      {"minimax encoder loss is the exact negation of the discriminator loss",
       criterion_minimax_identity},
      {"confusion gradients dominate minimax gradients on confident outputs",
       criterion_curves},
      {"gradient routing isolates parameter groups bit-exactly",
       criterion_routing_isolation},
      {"mild-shift condition study: baseline < adapted < target-labeled",
       criterion_conditions_mild},
      {"relative gap closure shrinks strictly under severe shift",
       criterion_closure_shrinks},
      {"adaptation costs at most one source point on the mild preset",
       criterion_source_preserved},
      {"confusion lambda sweep: interior optimum, unstable extremes",
       criterion_lambda_sweep},
      {"split-index sweep peaks strictly inside the layer range",
       criterion_split_sweep},
      {"segmentation: 1x1 patch equivalence and full-image adaptation gain",
       criterion_segmentation},
      {"repeated train command is byte-identical", criterion_reproducible_cli},
  };

  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    g_detail.str("");
    bool ok = false;
    std::string error;
    Timer t;
    try {
      ok = criteria[i].run();
    } catch (const std::exception& e) {
      error = e.what();
    }
    std::printf("[%s] criterion %zu: %s (%.1fs)\n", ok ? "PASS" : "FAIL",
                i + 1, criteria[i].title, t.wall());
    std::fputs(g_detail.str().c_str(), stdout);
    if (!error.empty()) std::printf("    exception: %s\n", error.c_str());
    std::fflush(stdout);
    if (!ok) ++failed;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed;
}
