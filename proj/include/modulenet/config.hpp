#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modulenet/common.hpp"
#include "modulenet/evaluator.hpp"
#include "modulenet/knowledge_base.hpp"
#include "modulenet/model_zoo.hpp"
#include "modulenet/nsga2.hpp"

namespace modulenet {

/// Every recognised key with its default. Order here is the canonical order used for hashing
/// and for `config.txt` dumps.
inline const std::vector<std::pair<std::string, std::string>>& config_defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"dataset", "synthetic"},  // synthetic | cifar10 | cifar100
      {"data_dir", ""},
      {"synth.classes", "10"},
      {"synth.samples_per_class", "120"},
      {"synth.noise", "3.0"},
      {"synth.phase_jitter", "1.0"},
      {"synth.amplitude_jitter", "0.3"},
      {"cifar.train_limit", "0"},
      {"cifar.val_limit", "0"},
      {"cifar.test_limit", "0"},
      {"resolution", "32"},
      {"n", "4"},
      {"c", "3"},
      {"head.hidden", "128,128"},
      {"seed_epochs", "10"},
      {"seed_lr", "0.02"},
      {"batch_size", "32"},
      {"momentum", "0.9"},
      {"weight_decay", "0"},
      {"gen", "10"},
      {"p_size", "12"},
      {"p_mut", "auto"},  // auto = 1/c
      {"alpha", "25"},
      {"beta", "25"},
      {"head_epochs", "5"},
      {"head_lr", "0.01"},
      {"finetune_epochs", "15"},
      {"finetune_lr", "0.03"},
      {"finetune_update_bn_stats", "true"},
      {"finetune_cosine", "true"},
      {"finetune_count", "24"},
      {"cutout", "false"},
      {"cutout_length", "16"},
      {"flip", "false"},
      {"adapter_baseline", "false"},
      {"use_cache", "true"},
      {"record_wall_time", "false"},
      {"seed", "1"},
  };
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config: " + key + " must be a boolean, got '" + v + "'");
}

/// Parsed run configuration. Architectures come from `arch.<i>` keys
/// ("<name> <plain|residual> <w1,...,wc> [depth=D]"), or the default zoo when absent.
struct RunConfig {
  std::map<std::string, std::string> values;  // every default key present
  std::map<int, std::string> arch_lines;

  RunConfig() {
    for (const auto& [k, v] : config_defaults()) values[k] = v;
  }

  static bool known_key(const std::string& key) {
    if (key.rfind("arch.", 0) == 0) {
      const std::string idx = key.substr(5);
      return !idx.empty() && idx.find_first_not_of("0123456789") == std::string::npos;
    }
    for (const auto& [k, v] : config_defaults()) {
      if (k == key) return true;
    }
    return false;
  }

  /// Applies key/value pairs; unknown keys are collected and rejected together.
  void apply(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::vector<std::string> unknown;
    for (const auto& [k, v] : kv) {
      if (!known_key(k)) unknown.push_back(k);
    }
    if (!unknown.empty()) {
      std::string msg = "config: unknown key(s):";
      for (const auto& k : unknown) msg += " " + k;
      throw std::invalid_argument(msg);
    }
    for (const auto& [k, v] : kv) {
      if (k.rfind("arch.", 0) == 0) arch_lines[std::stoi(k.substr(5))] = v;
      else values[k] = v;
    }
  }

  static std::vector<std::pair<std::string, std::string>> parse_text(const std::string& text, const std::string& origin) {
    std::vector<std::pair<std::string, std::string>> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line = line.substr(0, h);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig cfg;
    cfg.apply(parse_text(ss.str(), path));
    cfg.validate();
    return cfg;
  }

  const std::string& str(const std::string& key) const { return values.at(key); }
  int integer(const std::string& key) const {
    size_t used = 0;
    const auto& v = str(key);
    int r = 0;
    try {
      r = std::stoi(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw std::invalid_argument("config: " + key + " must be an integer, got '" + v + "'");
    return r;
  }
  uint64_t u64(const std::string& key) const {
    const auto& v = str(key);
    size_t used = 0;
    uint64_t r = 0;
    try {
      r = std::stoull(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size() || v[0] == '-') {
      throw std::invalid_argument("config: " + key + " must be an unsigned integer, got '" + v + "'");
    }
    return r;
  }
  double real(const std::string& key) const {
    const auto& v = str(key);
    size_t used = 0;
    double r = 0;
    try {
      r = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw std::invalid_argument("config: " + key + " must be a number, got '" + v + "'");
    return r;
  }
  bool flag(const std::string& key) const { return parse_bool(key, str(key)); }

  uint64_t seed() const { return u64("seed"); }
  int n() const { return integer("n"); }
  int c() const { return integer("c"); }

  HeadSpec head(int num_classes) const { return make_head_spec(split_ints(str("head.hidden")), num_classes); }

  std::vector<ArchSpec> archs(int num_classes) const {
    const HeadSpec h = head(num_classes);
    const int res = integer("resolution");
    std::vector<ArchSpec> out;
    if (arch_lines.empty()) {
      auto zoo = default_zoo(c(), h, res);
      if (n() > static_cast<int>(zoo.size())) {
        throw std::invalid_argument("config: n = " + std::to_string(n()) + " needs arch.<i> entries (default zoo has " +
                                    std::to_string(zoo.size()) + ")");
      }
      zoo.resize(static_cast<size_t>(n()));
      return zoo;
    }
    for (int i = 1; i <= n(); ++i) {
      auto it = arch_lines.find(i);
      if (it == arch_lines.end()) throw std::invalid_argument("config: missing arch." + std::to_string(i));
      std::istringstream in(it->second);
      std::string name, rest;
      in >> name;
      std::getline(in, rest);
      auto a = parse_arch(name, rest, h, res);
      if (static_cast<int>(a.cells.size()) != c()) {
        throw std::invalid_argument("config: arch." + std::to_string(i) + " has " + std::to_string(a.cells.size()) +
                                    " cells, c = " + std::to_string(c()));
      }
      out.push_back(std::move(a));
    }
    for (const auto& [i, line] : arch_lines) {
      if (i < 1 || i > n()) throw std::invalid_argument("config: arch." + std::to_string(i) + " outside [1, n]");
    }
    return out;
  }

  SearchConfig search() const {
    SearchConfig s;
    s.n = n();
    s.c = c();
    s.gen = integer("gen");
    s.p_size = integer("p_size");
    s.p_mut = str("p_mut") == "auto" ? -1.0 : real("p_mut");
    s.seed = seed();
    return s;
  }

  EvalConfig eval() const {
    EvalConfig e;
    e.alpha = real("alpha");
    e.beta = real("beta");
    e.head_epochs = integer("head_epochs");
    e.finetune_epochs = integer("finetune_epochs");
    e.batch_size = integer("batch_size");
    e.head_sgd = {static_cast<float>(real("head_lr")), static_cast<float>(real("momentum")),
                  static_cast<float>(real("weight_decay"))};
    e.finetune_sgd = {static_cast<float>(real("finetune_lr")), static_cast<float>(real("momentum")),
                      static_cast<float>(real("weight_decay"))};
    e.cutout_length = flag("cutout") ? integer("cutout_length") : 0;
    e.flip = flag("flip");
    e.baseline_adapters = flag("adapter_baseline");
    e.use_cache = flag("use_cache");
    e.finetune_update_bn_stats = flag("finetune_update_bn_stats");
    e.finetune_cosine = flag("finetune_cosine");
    e.seed = seed();
    return e;
  }

  void validate() const {
    const std::string ds = str("dataset");
    if (ds != "synthetic" && ds != "cifar10" && ds != "cifar100") {
      throw std::invalid_argument("config: dataset must be synthetic, cifar10 or cifar100");
    }
    if (ds != "synthetic" && str("data_dir").empty()) throw std::invalid_argument("config: data_dir required for " + ds);
    for (const char* k : {"n", "c", "gen", "p_size", "seed_epochs", "head_epochs", "finetune_epochs", "batch_size",
                          "synth.classes", "synth.samples_per_class", "resolution"}) {
      if (integer(k) < 1) throw std::invalid_argument(std::string("config: ") + k + " must be >= 1");
    }
    if (integer("synth.classes") < 2) throw std::invalid_argument("config: synth.classes must be >= 2");
    if (integer("finetune_count") < 0 || integer("cutout_length") < 0) {
      throw std::invalid_argument("config: finetune_count and cutout_length must be >= 0");
    }
    for (const char* k : {"cifar.train_limit", "cifar.val_limit", "cifar.test_limit"}) {
      if (integer(k) < 0) throw std::invalid_argument(std::string("config: ") + k + " must be >= 0");
    }
    if (str("p_mut") != "auto" && (real("p_mut") < 0.0 || real("p_mut") > 1.0)) {
      throw std::invalid_argument("config: p_mut must be in [0, 1] or auto");
    }
    if (real("alpha") < 0 || real("beta") < 0) throw std::invalid_argument("config: alpha and beta must be >= 0");
    for (const char* k : {"seed_lr", "head_lr", "finetune_lr", "momentum", "weight_decay", "synth.noise",
                          "synth.phase_jitter", "synth.amplitude_jitter"}) {
      if (real(k) < 0) throw std::invalid_argument(std::string("config: ") + k + " must be >= 0");
    }
    for (const char* k : {"finetune_update_bn_stats", "finetune_cosine", "cutout", "flip", "adapter_baseline", "use_cache",
                          "record_wall_time"}) {
      flag(k);
    }
    seed();
    split_ints(str("head.hidden"));
    archs(ds == "cifar100" ? 100 : 10);
  }

  /// Canonical text: every key in default order, then arch lines.
  std::string canonical() const {
    std::string s;
    for (const auto& [k, v] : config_defaults()) s += k + " = " + values.at(k) + "\n";
    for (const auto& [i, line] : arch_lines) s += "arch." + std::to_string(i) + " = " + line + "\n";
    return s;
  }

  uint64_t hash() const { return fnv1a(canonical()); }
};

}  // namespace modulenet
