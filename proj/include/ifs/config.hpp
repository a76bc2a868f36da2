#pragma once

#include <cstdio>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ifs/dataset.hpp"
#include "ifs/error.hpp"
#include "ifs/trainer.hpp"

namespace ifs {

// Every tunable of the pipeline as one flat key = value namespace shared by
// the config file and command-line overrides. Unknown keys are rejected and
// every value round-trips through serialization.
struct RunConfig {
  TrainConfig train;
  int clips = 1000;
  int shapes_per_clip = 2;
  double speed_min = 1.0;
  double speed_max = 2.0;
  double train_fraction = 0.8;
  int samples_per_video = 4;

  GeneratorConfig generator_config() const {
    GeneratorConfig g;
    g.num_clips = clips;
    g.num_classes = train.num_classes;
    g.T = train.T;
    g.H = train.H;
    g.W = train.W;
    g.shapes_per_clip = shapes_per_clip;
    g.speed_min = speed_min;
    g.speed_max = speed_max;
    g.seed = train.seed;
    g.train_fraction = train_fraction;
    g.block_size = train.block_size;
    return g;
  }
};

namespace detail {

struct ConfigKey {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline long parse_long(const std::string& v) {
  std::size_t used = 0;
  const long out = std::stol(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return out;
}

inline double parse_double(const std::string& v) {
  std::size_t used = 0;
  const double out = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(v);
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline const std::vector<ConfigKey>& config_keys() {
  auto int_key = [](const char* name, auto member) {
    return ConfigKey{
        name,
        [member](const RunConfig& c) { return std::to_string(c.*member); },
        [member](RunConfig& c, const std::string& v) {
          c.*member = static_cast<int>(parse_long(v));
        }};
  };
  auto train_int = [](const char* name, auto member) {
    return ConfigKey{
        name,
        [member](const RunConfig& c) { return std::to_string(c.train.*member); },
        [member](RunConfig& c, const std::string& v) {
          c.train.*member = static_cast<int>(parse_long(v));
        }};
  };
  auto train_double = [](const char* name, auto member) {
    return ConfigKey{
        name,
        [member](const RunConfig& c) { return fmt_double(c.train.*member); },
        [member](RunConfig& c, const std::string& v) { c.train.*member = parse_double(v); }};
  };
  auto run_double = [](const char* name, auto member) {
    return ConfigKey{
        name,
        [member](const RunConfig& c) { return fmt_double(c.*member); },
        [member](RunConfig& c, const std::string& v) { c.*member = parse_double(v); }};
  };
  auto task_bool = [](const char* name, auto member) {
    return ConfigKey{
        name,
        [member](const RunConfig& c) { return c.train.tasks.*member ? "true" : "false"; },
        [member](RunConfig& c, const std::string& v) {
          c.train.tasks.*member = parse_bool(v);
        }};
  };

  static const std::vector<ConfigKey> keys = {
      train_int("epochs", &TrainConfig::epochs),
      train_int("batch_size", &TrainConfig::batch_size),
      train_double("base_lr", &TrainConfig::base_lr),
      train_double("beta1", &TrainConfig::beta1),
      train_double("beta2", &TrainConfig::beta2),
      train_double("adam_eps", &TrainConfig::adam_eps),
      task_bool("task_app", &TaskFlags::app),
      task_bool("task_cat", &TaskFlags::cat),
      task_bool("task_mot", &TaskFlags::mot),
      task_bool("reg_adv", &TaskFlags::adv),
      task_bool("reg_color", &TaskFlags::color),
      ConfigKey{"lsgan_real_is_zero",
                [](const RunConfig& c) { return c.train.lsgan_real_is_zero ? "true" : "false"; },
                [](RunConfig& c, const std::string& v) {
                  c.train.lsgan_real_is_zero = parse_bool(v);
                }},
      ConfigKey{"input_mode",
                [](const RunConfig& c) { return input_mode_name(c.train.input_mode); },
                [](RunConfig& c, const std::string& v) {
                  c.train.input_mode = parse_input_mode(v);
                }},
      train_int("base_width", &TrainConfig::base_width),
      train_int("n_res_blocks", &TrainConfig::n_res_blocks),
      train_int("classes", &TrainConfig::num_classes),
      train_int("T", &TrainConfig::T),
      train_int("height", &TrainConfig::H),
      train_int("width", &TrainConfig::W),
      train_int("block_size", &TrainConfig::block_size),
      train_int("search_range", &TrainConfig::search_range),
      ConfigKey{"seed",
                [](const RunConfig& c) { return std::to_string(c.train.seed); },
                [](RunConfig& c, const std::string& v) {
                  c.train.seed = static_cast<std::uint64_t>(std::stoull(v));
                }},
      ConfigKey{"flip",
                [](const RunConfig& c) { return flip_mode_name(c.train.flip); },
                [](RunConfig& c, const std::string& v) { c.train.flip = parse_flip_mode(v); }},
      train_int("disc_every", &TrainConfig::disc_every),
      train_int("jobs", &TrainConfig::jobs),
      int_key("clips", &RunConfig::clips),
      int_key("shapes_per_clip", &RunConfig::shapes_per_clip),
      run_double("speed_min", &RunConfig::speed_min),
      run_double("speed_max", &RunConfig::speed_max),
      run_double("train_fraction", &RunConfig::train_fraction),
      int_key("samples_per_video", &RunConfig::samples_per_video),
  };
  return keys;
}

inline const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

}  // namespace detail

inline void apply_config_value(RunConfig& cfg, const std::string& key,
                               const std::string& value, const std::string& where) {
  const auto* k = detail::find_key(key);
  if (!k) throw ConfigError(where + ": unknown key '" + key + "'");
  try {
    k->set(cfg, value);
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse value '" + value + "' for key '" + key + "'");
  }
}

// "key = value" lines with '#' comments. Later command-line overrides win.
inline RunConfig parse_config(const std::string& path,
                              const std::vector<std::pair<std::string, std::string>>&
                                  overrides = {}) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw LoadError("cannot open config file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(path + " line " + std::to_string(line_no) +
                          ": expected 'key = value'");
      }
      apply_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)),
                         path + " line " + std::to_string(line_no));
    }
  }
  for (const auto& [key, value] : overrides) {
    apply_config_value(cfg, key, value, "override --" + key);
  }
  return cfg;
}

inline void write_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot write config file: " + path);
  for (const auto& k : detail::config_keys()) {
    os << k.name << " = " << k.get(cfg) << '\n';
  }
}

inline std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& k : detail::config_keys()) {
    os << k.name << " = " << k.get(cfg) << '\n';
  }
  return os.str();
}

}  // namespace ifs
