#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaforge/tensor.hpp"

namespace adaforge {

enum class DataFamily { Gauss2d, Moons2d, TextureCls, RoadwaySeg };
const char* family_name(DataFamily f);
DataFamily family_from_name(const std::string& name);

/// Named severity presets standing in for the two adaptation scenarios of the
/// synthetic study: a mild appearance change and a severe one.
inline constexpr double kMildSeverity = 0.35;
inline constexpr double kSevereSeverity = 0.85;

struct ShiftSpec {
  DataFamily family = DataFamily::Gauss2d;
  double severity = 0.0;  // 0 = identical distributions
  int64_t classes = 3;    // moons2d forces 2, texture_cls defaults 20, roadway_seg 2
  int64_t n_train = 2000;
  int64_t n_test = 500;
  uint64_t seed = 0;

  void validate() const;
  Shape sample_shape() const;  // per-sample input shape
  std::string canonical() const;
};

struct LabeledSet {
  Tensor inputs;                // (N, ...)
  std::vector<int64_t> labels;  // N entries, or N*H*W pixel labels
  std::string domain;
  int64_t size() const { return inputs.shape.dim(0); }
};

struct UnlabeledSet {
  Tensor inputs;
  std::string domain;
  int64_t size() const { return inputs.shape.dim(0); }
};

/// A full adaptation problem: labeled source, unlabeled target, plus held-out
/// labeled test splits for both domains (target labels are for evaluation and
/// the explicit upper-bound condition only — never for adaptation training).
struct DomainData {
  LabeledSet source_train;
  LabeledSet source_test;
  UnlabeledSet target_train;
  LabeledSet target_test;
  /// Labels of target_train, retained solely for the target-supervised
  /// upper-bound condition; regular training must not read them.
  std::vector<int64_t> target_train_held_out_labels;
  double shift_report = 0.0;  // distance between the two domain mean inputs
};

DomainData make_pair(const ShiftSpec& spec);

/// The target-labeled training set for the upper-bound condition, made
/// explicit so accidental label leakage is impossible elsewhere.
LabeledSet upper_bound_target_train(const DomainData& data);

/// Maps target-domain inputs back to source-domain coordinates. Defined for
/// the point families (exact inverse of the rotation+translation) and the
/// global photometric transforms of the image families.
Tensor inverse_transform(const ShiftSpec& spec, const Tensor& target_inputs);

/// Deterministic shuffled epoch stream over sample indices; the final short
/// batch of each epoch is dropped.
class BatchIterator {
 public:
  BatchIterator(int64_t set_size, int64_t batch_size, uint64_t seed);
  /// Indices of the next batch; reshuffles at each epoch boundary.
  const std::vector<int64_t>& next();
  int64_t batches_per_epoch() const { return set_size_ / batch_size_; }

 private:
  void reshuffle();
  int64_t set_size_;
  int64_t batch_size_;
  uint64_t state_;
  std::vector<int64_t> order_;
  int64_t cursor_ = 0;
  std::vector<int64_t> batch_;
};

/// Rows of `inputs` (and labels, when given) selected by `idx`, preserving
/// per-sample label blocks for pixel-labeled sets.
Tensor gather_inputs(const Tensor& inputs, const std::vector<int64_t>& idx);
std::vector<int64_t> gather_labels(const std::vector<int64_t>& labels,
                                   int64_t block_size,
                                   const std::vector<int64_t>& idx);

/// Writes inputs/labels as flat little-endian binaries plus manifest.json
/// (shapes, dtype, spec, shift report) into `dir`.
void export_dataset(const DomainData& data, const ShiftSpec& spec,
                    const std::string& dir);

}  // namespace adaforge
