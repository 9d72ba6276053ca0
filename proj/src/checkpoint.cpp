#include "adaforge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

namespace adaforge {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'A', 'F'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const SplitModel& model, const std::string& path, int64_t epoch) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write(kMagic, 4);
  put<uint32_t>(os, kVersion);
  put<uint64_t>(os, model.spec.hash());
  put<int64_t>(os, epoch);
  put<uint32_t>(os, static_cast<uint32_t>(model.params.size()));
  for (const auto& p : model.params) {
    put<uint32_t>(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& s = p.value.shape();
    put<uint8_t>(os, static_cast<uint8_t>(s.rank()));
    for (int i = 0; i < s.rank(); ++i) put<int64_t>(os, s.dim(i));
    os.write(reinterpret_cast<const char*>(p.value.data().data()),
             static_cast<std::streamsize>(sizeof(double) * p.value.numel()));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

int64_t load_checkpoint(SplitModel& model, const std::string& path, bool encoder_only) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = get<uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint64_t stored_hash = get<uint64_t>(is);
  if (stored_hash != model.spec.hash())
    throw std::runtime_error(
        "checkpoint: network spec hash mismatch (file was written for a "
        "different architecture)");
  const int64_t epoch = get<int64_t>(is);
  const uint32_t count = get<uint32_t>(is);

  std::map<std::string, Tensor> entries;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t len = get<uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const uint8_t rank = get<uint8_t>(is);
    std::vector<int64_t> dims;
    for (uint8_t d = 0; d < rank; ++d) dims.push_back(get<int64_t>(is));
    Tensor t((Shape(dims)));
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * t.numel()));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    entries.emplace(std::move(name), std::move(t));
  }

  size_t applied = 0;
  for (auto& p : model.params) {
    const bool wanted = !encoder_only || p.group == ParamGroup::Encoder;
    auto it = entries.find(p.name);
    if (it == entries.end()) {
      if (wanted && !encoder_only)
        throw std::runtime_error("checkpoint: missing parameter " + p.name);
      continue;
    }
    if (!wanted) continue;
    if (it->second.shape != p.value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name + ": " +
                               it->second.shape.str() + " vs " +
                               p.value.shape().str());
    p.value.data() = it->second;
    ++applied;
  }
  if (!encoder_only && applied != entries.size())
    throw std::runtime_error("checkpoint: file contains parameters unknown to this model");
  if (encoder_only && applied == 0)
    throw std::runtime_error("checkpoint: no encoder parameters found in " + path);
  return epoch;
}

}  // namespace adaforge
