#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaforge/tensor.hpp"

namespace adaforge {

enum class LayerKind { Dense, Conv, Pool, Relu, Flatten, Upsample };

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

/// One atom of a network description. `width` is the output features (dense)
/// or output channels (conv); `kernel` applies to conv only.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int64_t width = 0;
  int64_t kernel = 3;

  static LayerSpec dense(int64_t w) { return {LayerKind::Dense, w, 0}; }
  static LayerSpec conv(int64_t channels, int64_t kernel = 3) {
    return {LayerKind::Conv, channels, kernel};
  }
  static LayerSpec pool() { return {LayerKind::Pool, 0, 0}; }
  static LayerSpec relu() { return {LayerKind::Relu, 0, 0}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0}; }
  static LayerSpec upsample() { return {LayerKind::Upsample, 0, 0}; }

  bool has_params() const { return kind == LayerKind::Dense || kind == LayerKind::Conv; }
  std::string str() const;  // e.g. "conv(16,k3)", "dense(64)", "relu"
  bool operator==(const LayerSpec& o) const = default;
};

enum class HeadKind { Classifier, Segmenter };
const char* head_kind_name(HeadKind k);
HeadKind head_kind_from_name(const std::string& name);

/// Shared trunk description plus the split point. `layers` lists the trunk
/// atoms only; the task head and the discriminator head (both ending in their
/// respective output layers) are appended at build time based on head_kind.
struct NetworkSpec {
  std::vector<LayerSpec> layers;
  int split_index = 1;  // in [1, layers.size()-1]; encoder = atoms before it
  HeadKind head_kind = HeadKind::Classifier;
  int64_t num_classes = 2;  // classifier output width; segmenter is fixed 2-class
  Shape input_shape;        // per-sample shape: (features) or (C, H, W)
  int disc_capacity_delta = 0;      // {-2, 0, +2} hidden dense layers in D
  bool patch_discriminator = false;  // segmenter only: per-patch logit map

  void validate() const;  // throws std::invalid_argument with a reason
  std::string canonical() const;
  uint64_t hash() const;
  bool operator==(const NetworkSpec& o) const = default;
};

/// Task-head atoms appended to the trunk for S (ends in the class/score layer).
std::vector<LayerSpec> task_head_atoms(const NetworkSpec& spec);
/// Discriminator-head atoms appended to D's trunk copy (ends in logit(s)).
std::vector<LayerSpec> disc_head_atoms(const NetworkSpec& spec);

/// Per-sample output shape of `atom` given per-sample input shape `in`.
/// Throws std::invalid_argument naming the atom when shapes are incompatible.
Shape infer_shape(const LayerSpec& atom, const Shape& in);
/// Folds infer_shape over a sequence.
Shape infer_sequence(const std::vector<LayerSpec>& atoms, const Shape& in);

// Reference toy architectures. Trunks have 8 atoms (split positions 1..7)
// for the image families and 5 atoms (split positions 1..4) for the
// two-dimensional point families.
NetworkSpec toy_classifier_spec(const Shape& input, int64_t num_classes);
NetworkSpec toy_segmenter_spec(const Shape& input);
NetworkSpec toy_point_spec(int64_t in_features, int64_t num_classes);

}  // namespace adaforge
