#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaforge/autodiff.hpp"

namespace adaforge {

enum class EncoderLossKind { Confusion, Minimax };
const char* encoder_loss_kind_name(EncoderLossKind k);
EncoderLossKind encoder_loss_kind_from_name(const std::string& name);

/// Whether lambda weights both adversarial terms (discriminator and encoder)
/// or only the encoder's, leaving the discriminator at full strength.
enum class LambdaScope { Both, EncoderOnly };
const char* lambda_scope_name(LambdaScope s);
LambdaScope lambda_scope_from_name(const std::string& name);

/// Scalar diagnostics of one adversarial step.
struct LossReport {
  double l_s = 0.0;      // supervised cross-entropy
  double l_ad = 0.0;     // discriminator loss
  double l_ae = 0.0;     // encoder adversarial loss
  double lambda = 0.0;
  double combined = 0.0;  // l_s + lambda * (l_ad + l_ae)
};

/// Mean negative log-likelihood.
/// Classifier: scores (B, c) logits, labels length B with values in [0, c).
/// Segmenter: scores (B, 2, H, W), labels length B*H*W with values in {0, 1};
/// averaged over every pixel of every sample.
Value supervised_loss(const Value& scores, const std::vector<int64_t>& labels);

/// Mean of -log d_source plus mean of -log(1 - d_target); works on (B, 1)
/// probabilities and on (B, 1, H, W) per-patch probability maps alike.
Value discriminator_loss(const Value& d_source, const Value& d_target);

/// Confusion: mean of -log(1 - d_source) plus mean of -log d_target
/// (drives the discriminator toward mislabeling both domains).
/// Minimax: exactly the negated discriminator loss.
Value encoder_adversarial_loss(EncoderLossKind kind, const Value& d_source,
                               const Value& d_target);

/// Per-patch forms; require rank-4 probability maps, then reduce over all
/// patches and samples. A 1x1 map degenerates to the scalar losses exactly.
Value patch_discriminator_loss(const Value& d_source_map, const Value& d_target_map);
Value patch_encoder_adversarial_loss(EncoderLossKind kind, const Value& d_source_map,
                                     const Value& d_target_map);

/// 1 - x as a graph op.
Value one_minus(const Value& x);

}  // namespace adaforge
