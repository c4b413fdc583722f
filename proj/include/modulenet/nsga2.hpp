#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "modulenet/common.hpp"
#include "modulenet/genotype.hpp"

namespace modulenet {

struct Individual {
  Genotype genotype;
  std::vector<double> objectives;  // minimized
  int rank = 0;
  double crowding = 0.0;
};

/// a dominates b: no worse in every objective and strictly better in one.
inline bool dominates(const std::vector<double>& a, const std::vector<double>& b) {
  bool better = false;
  for (size_t k = 0; k < a.size(); ++k) {
    if (a[k] > b[k]) return false;
    if (a[k] < b[k]) better = true;
  }
  return better;
}

/// Fast non-dominated sort. Returns fronts of indices into objs; members keep index order.
inline std::vector<std::vector<size_t>> non_dominated_sort(const std::vector<std::vector<double>>& objs) {
  const size_t n = objs.size();
  std::vector<std::vector<size_t>> dominated(n);
  std::vector<int> count(n, 0);
  std::vector<std::vector<size_t>> fronts;
  std::vector<size_t> current;
  for (size_t p = 0; p < n; ++p) {
    for (size_t q = 0; q < n; ++q) {
      if (p == q) continue;
      if (dominates(objs[p], objs[q])) dominated[p].push_back(q);
      else if (dominates(objs[q], objs[p])) ++count[p];
    }
    if (count[p] == 0) current.push_back(p);
  }
  while (!current.empty()) {
    fronts.push_back(current);
    std::vector<size_t> next;
    for (size_t p : current) {
      for (size_t q : dominated[p]) {
        if (--count[q] == 0) next.push_back(q);
      }
    }
    std::sort(next.begin(), next.end());
    current = std::move(next);
  }
  return fronts;
}

/// Crowding distance of each member of `front` (indices into objs), in front order.
inline std::vector<double> crowding_distance(const std::vector<std::vector<double>>& objs,
                                             const std::vector<size_t>& front) {
  const size_t m = front.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(m, 0.0);
  if (m == 0) return d;
  if (m <= 2) return std::vector<double>(m, inf);
  const size_t n_obj = objs[front[0]].size();
  std::vector<size_t> order(m);
  for (size_t k = 0; k < n_obj; ++k) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return objs[front[a]][k] < objs[front[b]][k]; });
    const double lo = objs[front[order.front()]][k];
    const double hi = objs[front[order.back()]][k];
    d[order.front()] = inf;
    d[order.back()] = inf;
    if (hi - lo <= 0.0) continue;
    for (size_t i = 1; i + 1 < m; ++i) {
      if (std::isinf(d[order[i]])) continue;
      d[order[i]] += (objs[front[order[i + 1]]][k] - objs[front[order[i - 1]]][k]) / (hi - lo);
    }
  }
  return d;
}

inline void assign_rank_and_crowding(std::vector<Individual>& pop) {
  std::vector<std::vector<double>> objs;
  for (const auto& ind : pop) objs.push_back(ind.objectives);
  auto fronts = non_dominated_sort(objs);
  for (size_t r = 0; r < fronts.size(); ++r) {
    auto cd = crowding_distance(objs, fronts[r]);
    for (size_t i = 0; i < fronts[r].size(); ++i) {
      pop[fronts[r][i]].rank = static_cast<int>(r);
      pop[fronts[r][i]].crowding = cd[i];
    }
  }
}

/// Survival order: rank ascending, crowding descending, genotype text ascending.
inline bool survives_before(const Individual& a, const Individual& b) {
  if (a.rank != b.rank) return a.rank < b.rank;
  if (a.crowding != b.crowding) return a.crowding > b.crowding;
  return a.genotype.str() < b.genotype.str();
}

/// Keeps the best p_size of a ranked population. Stable for equal keys.
inline std::vector<Individual> select_survivors(std::vector<Individual> combined, size_t p_size) {
  std::stable_sort(combined.begin(), combined.end(), survives_before);
  if (combined.size() > p_size) combined.resize(p_size);
  return combined;
}

/// Binary tournament on (rank, crowding); index of the winner.
inline size_t binary_tournament(const std::vector<Individual>& pop, Rng& rng) {
  std::uniform_int_distribution<size_t> pick(0, pop.size() - 1);
  const size_t a = pick(rng);
  const size_t b = pick(rng);
  return survives_before(pop[b], pop[a]) ? b : a;
}

struct SearchConfig {
  int n = 4;
  int c = 3;
  int gen = 10;
  int p_size = 12;
  double p_mut = -1.0;  // negative means 1/c
  uint64_t seed = 1;

  double mutation_rate() const { return p_mut < 0.0 ? 1.0 / c : p_mut; }

  void validate() const {
    if (n < 1 || c < 1 || gen < 1 || p_size < 1) throw std::invalid_argument("search config: counts must be >= 1");
    if (p_mut > 1.0) throw std::invalid_argument("search config: p_mut must be in [0, 1]");
  }
};

struct GenerationStats {
  int generation = 0;
  double best_score = 0.0;
  double mean_score = 0.0;
  int new_survival = 0;
  int evaluations = 0;  // trainings performed this generation
  int cache_hits = 0;
};

/// What a batch evaluation returns per requested genotype.
struct Evaluation {
  std::vector<double> objectives;
  bool cache_hit = false;
};

struct SearchResult {
  std::vector<Individual> population;
  std::vector<GenerationStats> stats;
  std::vector<std::vector<Individual>> history;  // population after each generation
};

inline int count_new(const std::vector<Individual>& now, const std::vector<Individual>& before) {
  std::set<std::string> prev;
  for (const auto& i : before) prev.insert(i.genotype.str());
  std::set<std::string> fresh;
  for (const auto& i : now) {
    if (!prev.count(i.genotype.str())) fresh.insert(i.genotype.str());
  }
  return static_cast<int>(fresh.size());
}

/// Generational loop. eval(genotypes, generation) -> one Evaluation per genotype, in order.
/// Non-finite objectives are replaced by `failure_objective`.
template <class EvalFn>
SearchResult run_search(const SearchConfig& cfg, EvalFn&& eval, double failure_objective = 1e9) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "search"));
  SearchResult result;

  auto score_all = [&](std::vector<Genotype> gs, int generation, GenerationStats& st) {
    auto evals = eval(gs, generation);
    if (evals.size() != gs.size()) throw std::runtime_error("run_search: evaluator returned wrong count");
    std::vector<Individual> out;
    for (size_t i = 0; i < gs.size(); ++i) {
      Individual ind;
      ind.genotype = std::move(gs[i]);
      ind.objectives = evals[i].objectives;
      if (ind.objectives.empty()) ind.objectives = {failure_objective};
      for (auto& v : ind.objectives) {
        if (!std::isfinite(v)) v = failure_objective;
      }
      if (evals[i].cache_hit) ++st.cache_hits;
      else ++st.evaluations;
      out.push_back(std::move(ind));
    }
    return out;
  };
  auto summarize = [&](GenerationStats& st, const std::vector<Individual>& pop) {
    double best = std::numeric_limits<double>::infinity(), sum = 0.0;
    for (const auto& i : pop) {
      best = std::min(best, i.objectives[0]);
      sum += i.objectives[0];
    }
    st.best_score = best;
    st.mean_score = sum / static_cast<double>(pop.size());
  };

  GenerationStats st0;
  st0.generation = 1;
  std::vector<Genotype> init;
  for (int i = 0; i < cfg.p_size; ++i) init.push_back(sample_genotype(cfg.n, cfg.c, rng));
  auto pop = score_all(std::move(init), 1, st0);
  assign_rank_and_crowding(pop);
  st0.new_survival = count_new(pop, {});
  summarize(st0, pop);
  result.stats.push_back(st0);
  result.history.push_back(pop);

  for (int g = 2; g <= cfg.gen; ++g) {
    GenerationStats st;
    st.generation = g;
    std::vector<Genotype> kids;
    while (static_cast<int>(kids.size()) < cfg.p_size) {
      const auto& a = pop[binary_tournament(pop, rng)].genotype;
      const auto& b = pop[binary_tournament(pop, rng)].genotype;
      auto [x, y] = crossover(a, b, rng);
      kids.push_back(mutate(x, cfg.mutation_rate(), cfg.n, rng));
      if (static_cast<int>(kids.size()) < cfg.p_size) kids.push_back(mutate(y, cfg.mutation_rate(), cfg.n, rng));
    }
    auto offspring = score_all(std::move(kids), g, st);
    std::vector<Individual> combined = pop;
    combined.insert(combined.end(), offspring.begin(), offspring.end());
    assign_rank_and_crowding(combined);
    auto next = select_survivors(std::move(combined), static_cast<size_t>(cfg.p_size));
    // Ranks and crowding describe the surviving population from here on.
    assign_rank_and_crowding(next);
    st.new_survival = count_new(next, pop);
    pop = std::move(next);
    summarize(st, pop);
    result.stats.push_back(st);
    result.history.push_back(pop);
  }
  result.population = pop;
  return result;
}

}  // namespace modulenet
