#pragma once

#include <cstdint>
#include <vector>

#include "adaforge/losses.hpp"
#include "adaforge/model.hpp"

namespace adaforge {

/// One adversarial mini-batch: labeled source samples plus unlabeled target
/// samples. Input shapes match except for the batch dimension.
struct DomainBatch {
  Tensor source_inputs;
  std::vector<int64_t> source_labels;
  Tensor target_inputs;
};

struct ObjectiveConfig {
  double lambda = 1.0;
  EncoderLossKind encoder_loss = EncoderLossKind::Confusion;
  LambdaScope lambda_scope = LambdaScope::Both;
  /// Diagnostic hook: replaces the supervised gradient contribution with the
  /// perfect-prediction case (zero) while still reporting the true loss value.
  /// Used by the routing-isolation tests only.
  bool test_zero_supervised = false;
};

/// Per-parameter gradients of one routed step, parallel to
/// SplitModel::params, plus the scalar losses of the batch.
struct RoutedGrads {
  std::vector<Tensor> grads;
  LossReport report;
};

/// Computes the three per-group gradient contributions with no
/// cross-contamination:
///   task head:      d(L_S)
///   discriminator:  lambda_d * d(L_AD), on features detached from the encoder
///   encoder:        d(L_S) + lambda_e * d(L_AE)
/// where lambda_e = lambda and lambda_d = lambda (scope both) or 1
/// (scope encoder_only). Model parameter .grad fields are left zeroed.
RoutedGrads routed_gradients(const SplitModel& model, const DomainBatch& batch,
                             const ObjectiveConfig& cfg);

}  // namespace adaforge
