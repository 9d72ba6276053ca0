#pragma once

#include <cstdint>
#include <string>

#include "adaforge/datasets.hpp"
#include "adaforge/layers.hpp"
#include "adaforge/losses.hpp"

namespace adaforge {

/// Trainer-level settings for one adversarial adaptation run.
struct AdaConfig {
  double lambda = 1.0;
  EncoderLossKind loss_kind = EncoderLossKind::Confusion;
  int64_t warmup_epochs = 15;
  int64_t total_epochs = 60;
  double clip_norm = 5.0;  // values <= 0 disable clipping ("none")
  double learning_rate = 0.05;
  int64_t batch_size = 32;
  uint64_t seed = 1;
  int64_t split_index = 0;  // 0 = family default
  int64_t disc_capacity_delta = 0;
  bool patch_mode = false;
  std::string pretrain_checkpoint;  // empty = none
  int64_t disc_steps_per_encoder_step = 1;
  LambdaScope lambda_scope = LambdaScope::Both;

  void validate() const;
};

/// A complete, self-contained run description: the dataset pair plus the
/// trainer settings. One seed drives both (data draws and parameter init use
/// separate derived streams).
struct RunConfig {
  ShiftSpec data;
  AdaConfig train;

  void validate() const;
  /// The dataset spec with its seed slaved to the run seed.
  ShiftSpec resolved_data() const;
  /// The fully-resolved architecture for this run (family default trunk with
  /// split/capacity/patch overrides applied).
  NetworkSpec network() const;
  std::string canonical() const;
  uint64_t hash() const;
  std::string hash_hex() const;
};

/// Flat key=value config text ('#' comments, blank lines ignored). Unknown
/// keys and malformed values raise std::invalid_argument naming the key.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

/// Applies one "key=value" override in place.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Canonical key=value rendering; parse_config_text round-trips it.
std::string serialize_config(const RunConfig& cfg);

}  // namespace adaforge
