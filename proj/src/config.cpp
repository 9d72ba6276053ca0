#include "adaforge/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "adaforge/hashing.hpp"

namespace adaforge {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw std::invalid_argument("config key '" + key + "': cannot parse '" + value +
                              "' (" + expected + ")");
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    size_t idx = 0;
    const double x = std::stod(v, &idx);
    if (idx != v.size()) bad_value(key, v, "expected a number");
    return x;
  } catch (const std::invalid_argument&) {
    bad_value(key, v, "expected a number");
  } catch (const std::out_of_range&) {
    bad_value(key, v, "number out of range");
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t idx = 0;
    const int64_t x = std::stoll(v, &idx);
    if (idx != v.size()) bad_value(key, v, "expected an integer");
    return x;
  } catch (const std::invalid_argument&) {
    bad_value(key, v, "expected an integer");
  } catch (const std::out_of_range&) {
    bad_value(key, v, "integer out of range");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "expected true/false");
}

std::string real_str(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "family") {
    try {
      cfg.data.family = family_from_name(value);
    } catch (const std::invalid_argument&) {
      bad_value(key, value, "expected gauss2d|moons2d|texture_cls|roadway_seg");
    }
  } else if (key == "severity") {
    cfg.data.severity = parse_real(key, value);
  } else if (key == "classes") {
    cfg.data.classes = parse_int(key, value);
  } else if (key == "n_train") {
    cfg.data.n_train = parse_int(key, value);
  } else if (key == "n_test") {
    cfg.data.n_test = parse_int(key, value);
  } else if (key == "lambda") {
    cfg.train.lambda = parse_real(key, value);
  } else if (key == "loss_kind") {
    try {
      cfg.train.loss_kind = encoder_loss_kind_from_name(value);
    } catch (const std::invalid_argument&) {
      bad_value(key, value, "expected confusion|minimax");
    }
  } else if (key == "warmup_epochs") {
    cfg.train.warmup_epochs = parse_int(key, value);
  } else if (key == "total_epochs") {
    cfg.train.total_epochs = parse_int(key, value);
  } else if (key == "clip_norm") {
    cfg.train.clip_norm = (value == "none") ? 0.0 : parse_real(key, value);
  } else if (key == "learning_rate") {
    cfg.train.learning_rate = parse_real(key, value);
  } else if (key == "batch_size") {
    cfg.train.batch_size = parse_int(key, value);
  } else if (key == "seed") {
    cfg.train.seed = static_cast<uint64_t>(parse_int(key, value));
  } else if (key == "split_index") {
    cfg.train.split_index = (value == "default") ? 0 : parse_int(key, value);
  } else if (key == "disc_capacity_delta") {
    cfg.train.disc_capacity_delta = parse_int(key, value);
  } else if (key == "patch_mode") {
    cfg.train.patch_mode = parse_bool(key, value);
  } else if (key == "pretrain_checkpoint") {
    cfg.train.pretrain_checkpoint = (value == "none") ? "" : value;
  } else if (key == "disc_steps_per_encoder_step") {
    cfg.train.disc_steps_per_encoder_step = parse_int(key, value);
  } else if (key == "lambda_scope") {
    try {
      cfg.train.lambda_scope = lambda_scope_from_name(value);
    } catch (const std::invalid_argument&) {
      bad_value(key, value, "expected both|encoder_only");
    }
  } else {
    throw std::invalid_argument("config key '" + key + "' is not recognized");
  }
}

}  // namespace

void AdaConfig::validate() const {
  if (lambda < 0.0) throw std::invalid_argument("config key 'lambda': must be >= 0");
  if (warmup_epochs < 0)
    throw std::invalid_argument("config key 'warmup_epochs': must be >= 0");
  if (total_epochs < 1)
    throw std::invalid_argument("config key 'total_epochs': must be >= 1");
  if (warmup_epochs > total_epochs)
    throw std::invalid_argument(
        "config key 'warmup_epochs': must not exceed total_epochs (" +
        std::to_string(warmup_epochs) + " > " + std::to_string(total_epochs) + ")");
  if (learning_rate <= 0.0)
    throw std::invalid_argument("config key 'learning_rate': must be > 0");
  if (batch_size < 1)
    throw std::invalid_argument("config key 'batch_size': must be >= 1");
  if (disc_steps_per_encoder_step < 1)
    throw std::invalid_argument(
        "config key 'disc_steps_per_encoder_step': must be >= 1");
}

void RunConfig::validate() const {
  data.validate();
  train.validate();
  if (train.patch_mode && data.family != DataFamily::RoadwaySeg)
    throw std::invalid_argument(
        "config key 'patch_mode': only valid with the segmentation family "
        "roadway_seg");
  if (train.batch_size > data.n_train)
    throw std::invalid_argument("config key 'batch_size': exceeds n_train");
  network().validate();  // resolves split/capacity issues with layer context
}

NetworkSpec RunConfig::network() const {
  NetworkSpec spec;
  switch (data.family) {
    case DataFamily::Gauss2d:
    case DataFamily::Moons2d:
      spec = toy_point_spec(2, data.family == DataFamily::Moons2d ? 2 : data.classes);
      break;
    case DataFamily::TextureCls:
      spec = toy_classifier_spec(data.sample_shape(), data.classes);
      break;
    case DataFamily::RoadwaySeg:
      spec = toy_segmenter_spec(data.sample_shape());
      break;
  }
  if (train.split_index != 0) spec.split_index = static_cast<int>(train.split_index);
  spec.disc_capacity_delta = static_cast<int>(train.disc_capacity_delta);
  spec.patch_discriminator = train.patch_mode;
  return spec;
}

ShiftSpec RunConfig::resolved_data() const {
  // The dataset seed is not independent: the run seed drives both streams.
  ShiftSpec d = data;
  d.seed = train.seed;
  return d;
}

std::string RunConfig::canonical() const {
  return serialize_config(RunConfig{resolved_data(), train});
}

uint64_t RunConfig::hash() const { return fnv1a(canonical()); }

std::string RunConfig::hash_hex() const { return hex16(hash()); }

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + t + "'");
    set_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is.good())
    throw std::invalid_argument("config file not readable: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override '" + assignment +
                                "': expected key=value");
  set_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "family=" << family_name(cfg.data.family) << "\n";
  os << "severity=" << real_str(cfg.data.severity) << "\n";
  os << "classes=" << cfg.data.classes << "\n";
  os << "n_train=" << cfg.data.n_train << "\n";
  os << "n_test=" << cfg.data.n_test << "\n";
  os << "lambda=" << real_str(cfg.train.lambda) << "\n";
  os << "loss_kind=" << encoder_loss_kind_name(cfg.train.loss_kind) << "\n";
  os << "warmup_epochs=" << cfg.train.warmup_epochs << "\n";
  os << "total_epochs=" << cfg.train.total_epochs << "\n";
  if (cfg.train.clip_norm > 0.0)
    os << "clip_norm=" << real_str(cfg.train.clip_norm) << "\n";
  else
    os << "clip_norm=none\n";
  os << "learning_rate=" << real_str(cfg.train.learning_rate) << "\n";
  os << "batch_size=" << cfg.train.batch_size << "\n";
  os << "seed=" << cfg.train.seed << "\n";
  if (cfg.train.split_index != 0)
    os << "split_index=" << cfg.train.split_index << "\n";
  else
    os << "split_index=default\n";
  os << "disc_capacity_delta=" << cfg.train.disc_capacity_delta << "\n";
  os << "patch_mode=" << (cfg.train.patch_mode ? "true" : "false") << "\n";
  os << "pretrain_checkpoint="
     << (cfg.train.pretrain_checkpoint.empty() ? "none" : cfg.train.pretrain_checkpoint)
     << "\n";
  os << "disc_steps_per_encoder_step=" << cfg.train.disc_steps_per_encoder_step
     << "\n";
  os << "lambda_scope=" << lambda_scope_name(cfg.train.lambda_scope) << "\n";
  return os.str();
}

}  // namespace adaforge
