#include "adaforge/losses.hpp"

#include <stdexcept>

namespace adaforge {

const char* encoder_loss_kind_name(EncoderLossKind k) {
  return k == EncoderLossKind::Confusion ? "confusion" : "minimax";
}

EncoderLossKind encoder_loss_kind_from_name(const std::string& name) {
  if (name == "confusion") return EncoderLossKind::Confusion;
  if (name == "minimax") return EncoderLossKind::Minimax;
  throw std::invalid_argument("unknown encoder loss kind: " + name);
}

const char* lambda_scope_name(LambdaScope s) {
  return s == LambdaScope::Both ? "both" : "encoder_only";
}

LambdaScope lambda_scope_from_name(const std::string& name) {
  if (name == "both") return LambdaScope::Both;
  if (name == "encoder_only") return LambdaScope::EncoderOnly;
  throw std::invalid_argument("unknown lambda scope: " + name);
}

Value one_minus(const Value& x) {
  return add(Value::constant(x.shape(), 1.0), neg(x));
}

namespace {

Value scale(const Value& scalar_value, double factor) {
  return mul(scalar_value, Value::scalar(factor));
}

Value classification_nll(const Value& scores, const std::vector<int64_t>& labels) {
  const int64_t B = scores.shape().dim(0);
  const int64_t c = scores.shape().dim(1);
  if (static_cast<int64_t>(labels.size()) != B)
    throw std::invalid_argument("supervised_loss: " + std::to_string(labels.size()) +
                                " labels for a batch of " + std::to_string(B));
  Tensor mask(Shape{B, c});
  for (int64_t i = 0; i < B; ++i) {
    const int64_t y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= c)
      throw std::invalid_argument("supervised_loss: label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(c) + ")");
    mask[static_cast<size_t>(i * c + y)] = 1.0;
  }
  Value picked = mul(log(softmax_rows(scores)), Value::constant(std::move(mask)));
  return scale(neg(sum(picked)), 1.0 / static_cast<double>(B));
}

Value segmentation_nll(const Value& scores, const std::vector<int64_t>& labels) {
  const Shape& s = scores.shape();
  if (s.dim(1) != 2)
    throw std::invalid_argument("supervised_loss: segmentation scores need 2 channels, got " +
                                s.str());
  const int64_t B = s.dim(0), H = s.dim(2), W = s.dim(3);
  if (static_cast<int64_t>(labels.size()) != B * H * W)
    throw std::invalid_argument("supervised_loss: " + std::to_string(labels.size()) +
                                " pixel labels for score map " + s.str());
  Tensor pos(Shape{B, 1, H, W});
  for (int64_t i = 0; i < B * H * W; ++i) {
    const int64_t y = labels[static_cast<size_t>(i)];
    if (y != 0 && y != 1)
      throw std::invalid_argument("supervised_loss: pixel label " + std::to_string(y) +
                                  " outside {0, 1}");
    pos[static_cast<size_t>(i)] = static_cast<double>(y);
  }
  // Two-class softmax collapses to a sigmoid of the logit difference.
  Value diff = add(slice_channel(scores, 1), neg(slice_channel(scores, 0)));
  Value p1 = sigmoid(diff);
  Value y = Value::constant(std::move(pos));
  Value ll = add(mul(y, log(p1)), mul(one_minus(y), log(one_minus(p1))));
  return neg(mean(ll));
}

}  // namespace

Value supervised_loss(const Value& scores, const std::vector<int64_t>& labels) {
  if (scores.shape().rank() == 2) return classification_nll(scores, labels);
  if (scores.shape().rank() == 4) return segmentation_nll(scores, labels);
  throw std::invalid_argument("supervised_loss: scores must be (batch, classes) or "
                              "(batch, 2, H, W), got " +
                              scores.shape().str());
}

Value discriminator_loss(const Value& d_source, const Value& d_target) {
  return add(mean(neg(log(d_source))), mean(neg(log(one_minus(d_target)))));
}

Value encoder_adversarial_loss(EncoderLossKind kind, const Value& d_source,
                               const Value& d_target) {
  switch (kind) {
    case EncoderLossKind::Confusion:
      return add(mean(neg(log(one_minus(d_source)))), mean(neg(log(d_target))));
    case EncoderLossKind::Minimax:
      return neg(discriminator_loss(d_source, d_target));
  }
  throw std::invalid_argument("unknown encoder loss kind");
}

namespace {

void require_map(const char* who, const Value& v) {
  if (v.shape().rank() != 4)
    throw std::invalid_argument(std::string(who) +
                                ": expects a (batch, 1, H, W) probability map, got " +
                                v.shape().str());
}

}  // namespace

Value patch_discriminator_loss(const Value& d_source_map, const Value& d_target_map) {
  require_map("patch_discriminator_loss", d_source_map);
  require_map("patch_discriminator_loss", d_target_map);
  // mean() already averages over every patch of every sample.
  return discriminator_loss(d_source_map, d_target_map);
}

Value patch_encoder_adversarial_loss(EncoderLossKind kind, const Value& d_source_map,
                                     const Value& d_target_map) {
  require_map("patch_encoder_adversarial_loss", d_source_map);
  require_map("patch_encoder_adversarial_loss", d_target_map);
  return encoder_adversarial_loss(kind, d_source_map, d_target_map);
}

}  // namespace adaforge
