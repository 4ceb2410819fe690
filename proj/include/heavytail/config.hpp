#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "heavytail/dataset.hpp"
#include "heavytail/errors.hpp"
#include "heavytail/trainer.hpp"

namespace heavytail {

// Flat key=value configuration with [section] headers mapping to
// "section.key" entries. '#' starts a comment. Command-line overrides win
// over file values.
class Config {
 public:
  Config() = default;

  static Config from_stream(std::istream& in) {
    Config cfg;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      trim_(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3) {
          throw ConfigError("line " + std::to_string(line_no) +
                            ": malformed section '" + line + "'");
        }
        section = line.substr(1, line.size() - 2);
        trim_(section);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("line " + std::to_string(line_no) +
                          ": expected key=value, got '" + line + "'");
      }
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      trim_(key);
      trim_(value);
      if (key.empty()) {
        throw ConfigError("line " + std::to_string(line_no) + ": empty key");
      }
      cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
  }

  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path);
    return from_stream(in);
  }

  // "key=value" strings from the command line.
  void apply_overrides(const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + o + "' is not key=value");
      }
      std::string key = o.substr(0, eq);
      std::string value = o.substr(eq + 1);
      trim_(key);
      trim_(value);
      values_[key] = value;
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key,
                         const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    char* end = nullptr;
    const double v = std::strtod(it->second.c_str(), &end);
    if (it->second.empty() || end != it->second.c_str() + it->second.size()) {
      throw ConfigError("key '" + key + "': bad number '" + it->second + "'");
    }
    return v;
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    char* end = nullptr;
    const long long v = std::strtoll(it->second.c_str(), &end, 10);
    if (it->second.empty() || end != it->second.c_str() + it->second.size() ||
        v < 0) {
      throw ConfigError("key '" + key + "': bad count '" + it->second + "'");
    }
    return static_cast<std::size_t>(v);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(it->second.c_str(), &end, 10);
    if (it->second.empty() || end != it->second.c_str() + it->second.size()) {
      throw ConfigError("key '" + key + "': bad integer '" + it->second + "'");
    }
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("key '" + key + "': bad boolean '" + v + "'");
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static void trim_(std::string& s) {
    const auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
    while (!s.empty() && !notspace(s.back())) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && !notspace(s[i])) ++i;
    s.erase(0, i);
  }

  std::map<std::string, std::string> values_;
};

// ---- typed views over the config ------------------------------------------------

struct GenerateParams {
  std::size_t num_classes = 20;
  std::size_t n_max = 100;
  double imbalance_factor = 50.0;
  std::size_t feature_dim = 16;
  double separation = 3.0;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> cluster_seed;
};

inline GenerateParams generate_params_from(const Config& cfg) {
  GenerateParams p;
  p.num_classes = cfg.get_size("data.num_classes", p.num_classes);
  p.n_max = cfg.get_size("data.n_max", p.n_max);
  p.imbalance_factor = cfg.get_double("data.imbalance_factor",
                                      p.imbalance_factor);
  p.feature_dim = cfg.get_size("data.feature_dim", p.feature_dim);
  p.separation = cfg.get_double("data.separation", p.separation);
  p.seed = cfg.get_u64("data.seed", p.seed);
  if (cfg.has("data.cluster_seed")) {
    p.cluster_seed = cfg.get_u64("data.cluster_seed", 0);
  }
  return p;
}

inline PartitionRule partition_rule_from_name(const std::string& name) {
  if (name == "count_threshold") return PartitionRule::CountThreshold;
  if (name == "median_split") return PartitionRule::MedianSplit;
  throw ConfigError("unknown partition rule '" + name + "'");
}

inline TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.epochs = cfg.get_size("train.epochs", t.epochs);
  t.batch_size = cfg.get_size("train.batch_size", t.batch_size);
  t.lr = cfg.get_double("train.lr", t.lr);
  t.momentum = cfg.get_double("train.momentum", t.momentum);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  t.seed = cfg.get_u64("train.seed", t.seed);
  t.method = method_from_name(cfg.get_string("train.method",
                                             method_name(t.method)));
  t.eis = cfg.get_bool("train.eis", t.eis);
  t.cn = cfg.get_bool("train.cn", t.cn);
  t.iloss = cfg.get_bool("train.iloss", t.iloss);
  t.partition_rule = partition_rule_from_name(
      cfg.get_string("partition.rule", "count_threshold"));
  t.partition_threshold =
      cfg.get_size("partition.threshold", t.partition_threshold);
  t.aug.alpha = cfg.get_double("aug.alpha", t.aug.alpha);
  t.aug.jitter_sigma = cfg.get_double("aug.sigma", t.aug.jitter_sigma);
  t.aug.lambda_min = cfg.get_double("aug.lambda_min", t.aug.lambda_min);
  t.pair_fallback_lambda_min = cfg.get_double(
      "aug.pair_fallback_lambda_min", t.pair_fallback_lambda_min);
  t.hidden_dim = cfg.get_size("model.hidden", t.hidden_dim);
  t.embed_dim = cfg.get_size("model.embed", t.embed_dim);
  t.clamp_tau = cfg.get_bool("model.clamp_tau", t.clamp_tau);
  return t;
}

}  // namespace heavytail
