#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adaforge {

/// Version string stamped into run manifests and the Python module.
inline constexpr const char* kArtifactVersion = "adaforge-0.1.0";

/// Everything needed to re-run a command bit-identically: the argv it was
/// invoked with, the fully-resolved canonical config text, the seed list, the
/// artifact version, and the output files it is about to write. Written to
/// manifest.json in the run directory before any trial starts.
struct RunManifest {
  std::vector<std::string> command_line;
  std::string config_text;  // canonical key=value block; empty when unused
  std::vector<uint32_t> seeds;
  std::string artifact_version = kArtifactVersion;
  std::vector<std::string> outputs;  // paths relative to the run directory

  std::string to_json() const;
  static RunManifest parse(const std::string& json_text);
};

/// Output directory for one command: <out_root>/<command>-<hash_hex>. The
/// hash is the resolved config hash (or a fixed tag for config-free
/// commands), so repeated identical invocations land in the same place and
/// nothing depends on timestamps.
std::string run_directory(const std::string& out_root, const std::string& command,
                          const std::string& hash_hex);

/// Filesystem-safe directory component: characters outside [A-Za-z0-9._-]
/// become '_'.
std::string sanitize_component(const std::string& s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace adaforge
