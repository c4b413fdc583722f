#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modulenet/adapter.hpp"
#include "modulenet/common.hpp"
#include "modulenet/knowledge_base.hpp"

namespace modulenet {

/// One source-architecture id (1-based) per cell position.
struct Genotype {
  std::vector<int> code;

  int length() const { return static_cast<int>(code.size()); }
  int operator[](size_t j) const { return code[j]; }
  bool operator==(const Genotype&) const = default;
  auto operator<=>(const Genotype&) const = default;

  /// Hyphen-joined text form, e.g. "3-4-1-2-5".
  std::string str() const {
    std::string s;
    for (size_t j = 0; j < code.size(); ++j) {
      if (j) s += '-';
      s += std::to_string(code[j]);
    }
    return s;
  }

  static Genotype parse(const std::string& text) {
    Genotype g;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, '-')) {
      if (tok.empty()) throw std::invalid_argument("bad genotype '" + text + "'");
      size_t used = 0;
      int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument("bad genotype '" + text + "'");
      g.code.push_back(v);
    }
    if (g.code.empty()) throw std::invalid_argument("empty genotype");
    return g;
  }

  /// The constant code (i, ..., i) that reproduces seed architecture i.
  static Genotype uniform(int arch_id, int c) { return Genotype{std::vector<int>(static_cast<size_t>(c), arch_id)}; }
};

inline bool is_valid(const Genotype& g, int n, int c) {
  if (g.length() != c) return false;
  for (int v : g.code) {
    if (v < 1 || v > n) return false;
  }
  return true;
}

inline void require_valid(const Genotype& g, int n, int c) {
  if (g.length() != c) {
    throw std::invalid_argument("genotype " + g.str() + " has length " + std::to_string(g.length()) + ", expected " +
                                std::to_string(c));
  }
  for (size_t j = 0; j < g.code.size(); ++j) {
    if (g.code[j] < 1 || g.code[j] > n) {
      throw std::out_of_range("genotype " + g.str() + ": gene " + std::to_string(j + 1) + " outside [1, " +
                              std::to_string(n) + "]");
    }
  }
}

/// |search space| = n^c.
inline uint64_t space_size(int n, int c) {
  if (n < 1 || c < 1) throw std::invalid_argument("space_size: n and c must be >= 1");
  uint64_t s = 1;
  for (int j = 0; j < c; ++j) {
    if (s > std::numeric_limits<uint64_t>::max() / static_cast<uint64_t>(n)) {
      throw std::overflow_error("space_size: n^c exceeds 64 bits");
    }
    s *= static_cast<uint64_t>(n);
  }
  return s;
}

inline Genotype sample_genotype(int n, int c, Rng& rng) {
  std::uniform_int_distribution<int> gene(1, n);
  Genotype g;
  g.code.resize(static_cast<size_t>(c));
  for (auto& v : g.code) v = gene(rng);
  return g;
}

/// Single-point crossover at a uniform cut in [1, c-1], swapping suffixes. Length-1 codes
/// are returned unchanged.
inline std::pair<Genotype, Genotype> crossover(const Genotype& a, const Genotype& b, Rng& rng) {
  if (a.length() != b.length()) throw std::invalid_argument("crossover: parents differ in length");
  Genotype x = a, y = b;
  const int c = a.length();
  if (c < 2) return {x, y};
  std::uniform_int_distribution<int> cut_dist(1, c - 1);
  const int cut = cut_dist(rng);
  for (int j = cut; j < c; ++j) std::swap(x.code[static_cast<size_t>(j)], y.code[static_cast<size_t>(j)]);
  return {x, y};
}

/// Each gene independently resampled, with probability p_mut, to a uniformly chosen
/// different value. n == 1 leaves the code unchanged.
inline Genotype mutate(const Genotype& g, double p_mut, int n, Rng& rng) {
  Genotype out = g;
  if (n < 2 || p_mut <= 0.0) return out;
  std::bernoulli_distribution hit(std::min(1.0, p_mut));
  std::uniform_int_distribution<int> other(1, n - 1);
  for (auto& v : out.code) {
    if (!hit(rng)) continue;
    int r = other(rng);
    v = r >= v ? r + 1 : r;
  }
  return out;
}

struct ModuleRef {
  int position = 0;
  int arch_id = 0;
  bool operator==(const ModuleRef&) const = default;
};

/// Decoded architecture: module j comes from arch code[j] at position j, with one adapter
/// between each consecutive pair and the knowledge base's head spec.
struct AssemblySpec {
  std::vector<ModuleRef> modules;
  std::vector<AdapterPlan> adapters;
  HeadSpec head;
  int head_in_features = 0;
};

inline AssemblySpec decode(const Genotype& g, const KnowledgeBase& kb, bool baseline_adapters = false) {
  require_valid(g, kb.n, kb.c);
  AssemblySpec a;
  for (int j = 1; j <= kb.c; ++j) a.modules.push_back({j, g.code[static_cast<size_t>(j - 1)]});
  for (int j = 1; j < kb.c; ++j) {
    const auto& left = kb.at(j, a.modules[static_cast<size_t>(j - 1)].arch_id);
    const auto& right = kb.at(j + 1, a.modules[static_cast<size_t>(j)].arch_id);
    a.adapters.push_back(plan_adapter(left.out_channels, right.in_channels, baseline_adapters));
  }
  a.head = kb.head;
  const auto& last = kb.at(kb.c, a.modules.back().arch_id);
  a.head_in_features = last.out_channels * last.out_resolution * last.out_resolution;
  return a;
}

/// Reads the (position, arch) pairs of a decoded assembly back into a code.
inline Genotype encode(const AssemblySpec& a) {
  Genotype g;
  for (const auto& m : a.modules) g.code.push_back(m.arch_id);
  return g;
}

}  // namespace modulenet
