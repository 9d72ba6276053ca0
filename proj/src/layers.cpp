#include "adaforge/layers.hpp"

#include <stdexcept>

#include "adaforge/hashing.hpp"

namespace adaforge {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv: return "conv";
    case LayerKind::Pool: return "pool";
    case LayerKind::Relu: return "relu";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Upsample: return "upsample";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "dense") return LayerKind::Dense;
  if (name == "conv") return LayerKind::Conv;
  if (name == "pool") return LayerKind::Pool;
  if (name == "relu") return LayerKind::Relu;
  if (name == "flatten") return LayerKind::Flatten;
  if (name == "upsample") return LayerKind::Upsample;
  throw std::invalid_argument("unknown layer kind: " + name);
}

std::string LayerSpec::str() const {
  switch (kind) {
    case LayerKind::Dense: return "dense(" + std::to_string(width) + ")";
    case LayerKind::Conv:
      return "conv(" + std::to_string(width) + ",k" + std::to_string(kernel) + ")";
    default: return layer_kind_name(kind);
  }
}

const char* head_kind_name(HeadKind k) {
  return k == HeadKind::Classifier ? "classifier" : "segmenter";
}

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "classifier") return HeadKind::Classifier;
  if (name == "segmenter") return HeadKind::Segmenter;
  throw std::invalid_argument("unknown head kind: " + name);
}

void NetworkSpec::validate() const {
  if (layers.size() < 2)
    throw std::invalid_argument("network needs at least 2 trunk layers, got " +
                                std::to_string(layers.size()));
  if (split_index < 1 || split_index > static_cast<int>(layers.size()) - 1)
    throw std::invalid_argument(
        "split_index " + std::to_string(split_index) + " outside [1, " +
        std::to_string(layers.size() - 1) + "] for a " +
        std::to_string(layers.size()) + "-layer trunk");
  for (const auto& l : layers)
    if (l.has_params() && l.width < 1)
      throw std::invalid_argument("layer " + l.str() + " needs positive width");
  if (num_classes < 2)
    throw std::invalid_argument("num_classes must be >= 2, got " +
                                std::to_string(num_classes));
  if (disc_capacity_delta != -2 && disc_capacity_delta != 0 && disc_capacity_delta != 2)
    throw std::invalid_argument("disc_capacity_delta must be -2, 0 or +2, got " +
                                std::to_string(disc_capacity_delta));
  if (patch_discriminator && head_kind != HeadKind::Segmenter)
    throw std::invalid_argument("patch discriminator requires the segmenter head");
  if (patch_discriminator && disc_capacity_delta != 0)
    throw std::invalid_argument(
        "patch discriminator has no dense layers to add or remove; "
        "disc_capacity_delta must be 0");
  if (input_shape.rank() == 0)
    throw std::invalid_argument("input_shape is unset");
  if (head_kind == HeadKind::Segmenter && input_shape.rank() != 3)
    throw std::invalid_argument("segmenter expects (C, H, W) input, got " +
                                input_shape.str());
  // Shape compatibility of trunk + task head. The discriminator branch is
  // checked again at build time after capacity edits are applied.
  (void)infer_sequence(task_head_atoms(*this), infer_sequence(layers, input_shape));
}

std::string NetworkSpec::canonical() const {
  std::string s = "net{in=" + input_shape.str() + ";layers=";
  for (size_t i = 0; i < layers.size(); ++i) {
    if (i) s += "-";
    s += layers[i].str();
  }
  s += ";split=" + std::to_string(split_index);
  s += ";head=" + std::string(head_kind_name(head_kind));
  s += ";classes=" + std::to_string(num_classes);
  s += ";dcap=" + std::to_string(disc_capacity_delta);
  s += ";patch=" + std::string(patch_discriminator ? "1" : "0");
  return s + "}";
}

uint64_t NetworkSpec::hash() const { return fnv1a(canonical()); }

std::vector<LayerSpec> task_head_atoms(const NetworkSpec& spec) {
  if (spec.head_kind == HeadKind::Classifier)
    return {LayerSpec::relu(), LayerSpec::dense(spec.num_classes)};
  return {LayerSpec::conv(2)};  // per-pixel two-class scores
}

std::vector<LayerSpec> disc_head_atoms(const NetworkSpec& spec) {
  if (spec.patch_discriminator) return {LayerSpec::conv(1)};  // per-patch logit map
  std::vector<LayerSpec> head;
  if (spec.head_kind == HeadKind::Segmenter) head.push_back(LayerSpec::flatten());
  head.push_back(LayerSpec::relu());
  for (int i = 0; i < spec.disc_capacity_delta; i += 2) {
    head.push_back(LayerSpec::dense(64));
    head.push_back(LayerSpec::relu());
    head.push_back(LayerSpec::dense(64));
    head.push_back(LayerSpec::relu());
  }
  head.push_back(LayerSpec::dense(1));
  return head;
}

Shape infer_shape(const LayerSpec& atom, const Shape& in) {
  auto fail = [&](const std::string& why) -> Shape {
    throw std::invalid_argument(atom.str() + ": " + why + " (input " + in.str() + ")");
  };
  switch (atom.kind) {
    case LayerKind::Dense:
      if (in.rank() != 1) return fail("expects flat per-sample features");
      return Shape{atom.width};
    case LayerKind::Conv:
      if (in.rank() != 3) return fail("expects (C, H, W) per-sample input");
      return Shape{atom.width, in.dim(1), in.dim(2)};
    case LayerKind::Pool:
      if (in.rank() != 3) return fail("expects (C, H, W) per-sample input");
      if (in.dim(1) % 2 != 0 || in.dim(2) % 2 != 0)
        return fail("spatial dims must be even");
      return Shape{in.dim(0), in.dim(1) / 2, in.dim(2) / 2};
    case LayerKind::Relu:
      return in;
    case LayerKind::Flatten:
      if (in.rank() == 1) return in;
      return Shape{in.numel()};
    case LayerKind::Upsample:
      if (in.rank() != 3) return fail("expects (C, H, W) per-sample input");
      return Shape{in.dim(0), in.dim(1) * 2, in.dim(2) * 2};
  }
  return fail("unknown layer kind");
}

Shape infer_sequence(const std::vector<LayerSpec>& atoms, const Shape& in) {
  Shape cur = in;
  for (const auto& a : atoms) cur = infer_shape(a, cur);
  return cur;
}

NetworkSpec toy_classifier_spec(const Shape& input, int64_t num_classes) {
  NetworkSpec spec;
  spec.layers = {LayerSpec::conv(8),  LayerSpec::relu(), LayerSpec::pool(),
                 LayerSpec::conv(16), LayerSpec::relu(), LayerSpec::pool(),
                 LayerSpec::flatten(), LayerSpec::dense(64)};
  spec.split_index = 4;
  spec.head_kind = HeadKind::Classifier;
  spec.num_classes = num_classes;
  spec.input_shape = input;
  return spec;
}

NetworkSpec toy_segmenter_spec(const Shape& input) {
  NetworkSpec spec;
  spec.layers = {LayerSpec::conv(8),  LayerSpec::relu(), LayerSpec::pool(),
                 LayerSpec::conv(16), LayerSpec::relu(), LayerSpec::conv(16),
                 LayerSpec::relu(),   LayerSpec::upsample()};
  spec.split_index = 4;
  spec.head_kind = HeadKind::Segmenter;
  spec.num_classes = 2;
  spec.input_shape = input;
  return spec;
}

NetworkSpec toy_point_spec(int64_t in_features, int64_t num_classes) {
  NetworkSpec spec;
  spec.layers = {LayerSpec::dense(32), LayerSpec::relu(), LayerSpec::dense(32),
                 LayerSpec::relu(), LayerSpec::dense(32)};
  spec.split_index = 3;
  spec.head_kind = HeadKind::Classifier;
  spec.num_classes = num_classes;
  spec.input_shape = Shape{in_features};
  return spec;
}

}  // namespace adaforge
