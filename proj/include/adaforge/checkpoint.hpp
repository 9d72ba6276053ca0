#pragma once

#include <cstdint>
#include <string>

#include "adaforge/model.hpp"

namespace adaforge {

/// Binary checkpoint container. Layout (little-endian):
///   magic "ADAF" | u32 version | u64 network-spec hash | i64 epoch |
///   u32 entry count | entries...
/// entry: u32 name length | name bytes | u8 rank | i64 dims... | f64 data...
/// Round-trip restores parameters bit-exactly.
void save_checkpoint(const SplitModel& model, const std::string& path, int64_t epoch);

/// Loads parameters into `model`. The stored spec hash must match the model's.
/// With encoder_only, only "encoder.*" entries are applied (pretrained-trunk
/// use case); otherwise the name sets must match exactly. Returns the stored
/// epoch. Throws std::runtime_error on any mismatch or I/O failure.
int64_t load_checkpoint(SplitModel& model, const std::string& path,
                        bool encoder_only = false);

}  // namespace adaforge
