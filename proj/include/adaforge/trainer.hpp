#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaforge/config.hpp"
#include "adaforge/datasets.hpp"
#include "adaforge/model.hpp"

namespace adaforge {

/// Scales the whole gradient set by max_norm / g when its global L2 norm g
/// exceeds max_norm; otherwise leaves it unchanged. max_norm must be > 0.
void clip_gradients(const std::vector<Tensor*>& grads, double max_norm);

/// Task metric on one labeled set.
struct EvalResult {
  bool segmentation = false;
  double accuracy = 0.0;   // fraction correct; per-pixel for segmentation
  double map = 0.0;        // two-class mean average precision (segmentation)
  /// The headline number reported as P_S / P_T: classification accuracy, or
  /// mAP for segmentation.
  double headline() const { return segmentation ? map : accuracy; }
};

EvalResult evaluate(const SplitModel& model, const Tensor& inputs,
                    const std::vector<int64_t>& labels);

/// Fraction of held-out samples the discriminator assigns to the correct
/// domain (source = probability > 0.5); per-patch for patch discriminators.
double discriminator_accuracy(const SplitModel& model, const Tensor& source_inputs,
                              const Tensor& target_inputs);

/// Everything one training run records. Serialized as one JSON document;
/// wall_time_s is diagnostic only and deliberately left out of the JSON so
/// that identical configs produce byte-identical files.
struct TrialResult {
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  bool diverged = false;
  bool segmentation = false;
  // Per-epoch traces, each of length total_epochs.
  std::vector<double> p_s, p_t;                    // headline task metrics
  std::vector<double> l_s, l_ad, l_ae, combined;   // mean per-step losses
  std::vector<double> disc_acc;
  std::vector<double> pixel_acc_s, pixel_acc_t;    // segmentation only
  double final_p_s = 0.0, final_p_t = 0.0;
  double wall_time_s = 0.0;

  std::string to_json() const;
};

TrialResult parse_trial_json(const std::string& text);

/// Full training procedure: optional encoder checkpoint load, supervised
/// warmup (adversarial path entirely inert), then routed adversarial updates
/// with per-group gradient clipping and plain SGD. Deterministic given cfg.
TrialResult train(SplitModel& model, const DomainData& data, const AdaConfig& cfg,
                  uint64_t config_hash);

/// Builds dataset and model from the config and trains; the trained model is
/// returned through model_out when given (for checkpointing).
TrialResult run_trial(const RunConfig& cfg, SplitModel* model_out = nullptr);

}  // namespace adaforge
