#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaforge/autodiff.hpp"
#include "adaforge/layers.hpp"

namespace adaforge {

/// One atom bound to its parameter slots (indices into SplitModel::params,
/// -1 when the atom has no parameters).
struct LayerInstance {
  LayerSpec spec;
  int w = -1;
  int b = -1;
};

/// The three functional blocks of an adversarially trained model:
/// encoder E (shared trunk up to the split), task head S (rest of the trunk
/// plus the output layer), discriminator D (a copy of S's trunk structure,
/// optionally capacity-adjusted, ending in domain logit(s)).
struct SplitModel {
  NetworkSpec spec;
  uint64_t seed = 0;
  std::vector<Parameter> params;
  std::vector<LayerInstance> encoder_atoms;
  std::vector<LayerInstance> task_atoms;
  std::vector<LayerInstance> disc_atoms;
  Shape feature_shape;  // per-sample shape of E's output

  /// E: input batch -> shared features.
  Value forward_encoder(const Value& x) const;
  /// S: features -> task scores (classifier: (B, c) logits; segmenter:
  /// (B, 2, H, W) per-pixel scores).
  Value forward_task(const Value& features) const;
  /// D: features -> domain probability in (0, 1); shape (B, 1), or
  /// (B, 1, H, W) for the patch discriminator.
  Value forward_disc(const Value& features) const;
  /// S ∘ E.
  Value predict(const Value& x) const;

  std::vector<Parameter> group(ParamGroup g) const;
  int64_t param_count(ParamGroup g) const;
  int64_t param_count() const;
};

SplitModel build_split_model(const NetworkSpec& spec, uint64_t seed);

}  // namespace adaforge
