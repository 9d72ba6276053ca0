#include "adaforge/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace adaforge {

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command_line"] = command_line;
  j["config"] = config_text;
  j["seeds"] = seeds;
  j["artifact_version"] = artifact_version;
  j["outputs"] = outputs;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::parse(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  RunManifest m;
  m.command_line = j.at("command_line").get<std::vector<std::string>>();
  m.config_text = j.at("config").get<std::string>();
  m.seeds = j.at("seeds").get<std::vector<uint32_t>>();
  m.artifact_version = j.at("artifact_version").get<std::string>();
  m.outputs = j.at("outputs").get<std::vector<std::string>>();
  return m;
}

std::string run_directory(const std::string& out_root, const std::string& command,
                          const std::string& hash_hex) {
  return (std::filesystem::path(out_root) / (command + "-" + hash_hex)).string();
}

std::string sanitize_component(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
    if (!ok) c = '_';
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace adaforge
