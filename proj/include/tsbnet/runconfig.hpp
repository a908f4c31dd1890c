#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsbnet/model.hpp"
#include "tsbnet/optim.hpp"

namespace tsbnet {

inline constexpr const char* kToolVersion = "tsbnet 0.1.0";

// Everything a training run needs, addressable by flat string keys so one
// parser serves config files and CLI overrides. Precedence is handled by
// application order: defaults, then file values, then flags.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  bool augment = true;
  std::int64_t checkpoint_every = 0;
};

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::invalid_argument("not a boolean: '" + v + "'");
}

inline void apply_config_kv(RunConfig& c, const std::string& key,
                            const std::string& value) {
  try {
    if (key == "channel_multiplier") c.model.channel_multiplier = std::stod(value);
    else if (key == "use_mask_channel") c.model.use_mask_channel = parse_bool(value);
    else if (key == "use_residual") c.model.use_residual = parse_bool(value);
    else if (key == "attach_bdm") c.model.attach_bdm = parse_bool(value);
    else if (key == "input_size") c.model.input_size = std::stoi(value);
    else if (key == "batch_size") c.train.batch_size = std::stoll(value);
    else if (key == "lr0") c.train.lr0 = std::stod(value);
    else if (key == "lr_decay_factor") c.train.lr_decay_factor = std::stod(value);
    else if (key == "lr_decay_every") c.train.lr_decay_every = std::stoll(value);
    else if (key == "momentum") c.train.momentum = std::stod(value);
    else if (key == "weight_decay") c.train.weight_decay = std::stod(value);
    else if (key == "max_iters") c.train.max_iters = std::stoll(value);
    else if (key == "seed") c.train.seed = std::stoull(value);
    else if (key == "augment") c.augment = parse_bool(value);
    else if (key == "checkpoint_every") c.checkpoint_every = std::stoll(value);
    else throw std::invalid_argument("unknown config key: '" + key + "'");
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad value for config key '" + key + "': '" + value +
                                "'");
  }
}

// Config file grammar: one `key value` (or `key = value`) pair per line;
// blank lines and lines starting with '#' are ignored.
inline void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config file: " + path);
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string key, value, extra;
    ls >> key;
    if (key.empty() || key[0] == '#') continue;
    ls >> value;
    if (value == "=") ls >> value;
    if (value.empty())
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": key '" + key + "' has no value");
    if (ls >> extra)
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": trailing tokens after value");
    try {
      apply_config_kv(c, key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " +
                                  e.what());
    }
  }
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  return nlohmann::json{{"channel_multiplier", c.model.channel_multiplier},
                        {"use_mask_channel", c.model.use_mask_channel},
                        {"use_residual", c.model.use_residual},
                        {"attach_bdm", c.model.attach_bdm},
                        {"input_size", c.model.input_size},
                        {"batch_size", c.train.batch_size},
                        {"lr0", c.train.lr0},
                        {"lr_decay_factor", c.train.lr_decay_factor},
                        {"lr_decay_every", c.train.lr_decay_every},
                        {"momentum", c.train.momentum},
                        {"weight_decay", c.train.weight_decay},
                        {"max_iters", c.train.max_iters},
                        {"seed", c.train.seed},
                        {"augment", c.augment},
                        {"checkpoint_every", c.checkpoint_every}};
}

inline std::string iso_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs, outputs;
  std::string started, finished;
};

// Written atomically (temp file + rename) next to the command's outputs.
inline void write_run_manifest(const RunManifest& m, const std::string& path) {
  nlohmann::json j{{"command", m.command}, {"version", kToolVersion},
                   {"config", m.config},   {"seed", m.seed},
                   {"inputs", m.inputs},   {"outputs", m.outputs},
                   {"started", m.started}, {"finished", m.finished}};
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp);
    f << j.dump(2) << "\n";
    if (!f) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace tsbnet
