#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "modulenet/genotype.hpp"
#include "modulenet/knowledge_base.hpp"
#include "modulenet/training.hpp"

namespace modulenet {

struct EvalConfig {
  double alpha = 25.0;
  double beta = 25.0;
  int head_epochs = 5;
  int finetune_epochs = 15;
  int batch_size = 32;
  SgdConfig head_sgd{0.01, 0.9, 0.0};
  SgdConfig finetune_sgd{0.01, 0.9, 0.0};
  int cutout_length = 0;  // fine-tune stage only
  bool flip = false;      // fine-tune stage only
  bool baseline_adapters = false;
  bool use_cache = true;
  // Off keeps BN running statistics fixed during fine-tune (batch statistics still normalize).
  bool finetune_update_bn_stats = true;
  bool finetune_cosine = false;
  uint64_t seed = 1;

  /// Score assigned to candidates whose training diverged: err_val = 1, no convergence
  /// credit, full similarity penalty.
  double worst_score() const { return 1.0 + beta; }

  void validate() const {
    if (alpha < 0 || beta < 0) throw std::invalid_argument("eval config: alpha and beta must be >= 0");
    if (head_epochs < 1 || finetune_epochs < 1) throw std::invalid_argument("eval config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("eval config: batch_size must be >= 1");
    if (cutout_length < 0) throw std::invalid_argument("eval config: cutout_length must be >= 0");
  }
};

struct ScoreReport {
  Genotype genotype;
  double err_val = 1.0;
  double acc_val = 0.0;
  double l_rate = 0.0;
  double sim = 0.0;
  double score = 0.0;
  std::vector<double> loss_history;
  bool valid = true;
  double wall_time = 0.0;  // seconds; excluded from equality

  bool same_result(const ScoreReport& o) const {
    return genotype == o.genotype && err_val == o.err_val && acc_val == o.acc_val && l_rate == o.l_rate &&
           sim == o.sim && score == o.score && loss_history == o.loss_history && valid == o.valid;
  }
};

/// (loss_1 - loss_n) / loss_1, clamped to [0, 1].
inline double compute_l_rate(const std::vector<double>& losses) {
  if (losses.size() < 2) throw std::invalid_argument("compute_l_rate: need at least two epochs");
  if (!(losses.front() > 0.0)) throw std::invalid_argument("compute_l_rate: first-epoch loss must be > 0");
  const double r = (losses.front() - losses.back()) / losses.front();
  return std::clamp(r, 0.0, 1.0);
}

/// Length of the leading run of genes equal to gene 1, divided by c.
inline double compute_sim(const Genotype& g) {
  if (g.code.empty()) throw std::invalid_argument("compute_sim: empty genotype");
  size_t run = 1;
  while (run < g.code.size() && g.code[run] == g.code.front()) ++run;
  return static_cast<double>(run) / static_cast<double>(g.code.size());
}

inline double compose_score(double err_val, double l_rate, double sim, double alpha, double beta) {
  return err_val - alpha * l_rate + beta * sim;
}

inline uint64_t head_seed(const EvalConfig& cfg, const Genotype& g) {
  return derive_seed(cfg.seed, std::string("head:") + g.str() + (cfg.baseline_adapters ? ":conv1x1" : ""));
}

/// Frozen modules joined by planned adapters, plus a fresh head. Only the head (and conv1x1
/// adapters when the baseline is requested) is trainable.
inline Network assemble(const Genotype& g, const KnowledgeBase& kb, const EvalConfig& cfg = {}) {
  const AssemblySpec spec = decode(g, kb, cfg.baseline_adapters);
  Rng rng(head_seed(cfg, g));
  Network net;
  net.input_channels = kb.input_channels;
  net.input_resolution = kb.input_resolution;
  for (const auto& m : spec.modules) {
    auto layers = kb.at(m.position, m.arch_id).layers;
    for (auto& l : layers) l.set_frozen(true);
    net.cells.push_back(std::move(layers));
  }
  for (const auto& plan : spec.adapters) net.adapters.push_back(Adapter::make(plan, rng));
  net.head = build_head(spec.head, spec.head_in_features, rng);
  return net;
}

namespace detail {

inline TrainOptions search_stage_options(const EvalConfig& cfg, const Genotype& g) {
  TrainOptions opt;
  opt.epochs = cfg.head_epochs;
  opt.batch_size = cfg.batch_size;
  opt.sgd = cfg.head_sgd;
  opt.cell_mode = Mode::eval;
  opt.seed = derive_seed(cfg.seed, "order:" + g.str());
  opt.measure_val = false;
  return opt;
}

inline ScoreReport invalid_report(const Genotype& g, const EvalConfig& cfg, std::vector<double> losses) {
  ScoreReport r;
  r.genotype = g;
  r.valid = false;
  r.err_val = 1.0;
  r.acc_val = 0.0;
  r.l_rate = 0.0;
  r.sim = compute_sim(g);
  r.score = cfg.worst_score();
  r.loss_history = std::move(losses);
  return r;
}

/// Trains the trainable parts of an assembled network and scores it.
inline ScoreReport search_stage(Network& net, const Genotype& g, const Dataset& ds, const EvalConfig& cfg) {
  auto hist = train_network(net, ds, search_stage_options(cfg, g));
  auto losses = hist.losses();
  if (!hist.finite) return invalid_report(g, cfg, std::move(losses));
  ScoreReport r;
  r.genotype = g;
  r.loss_history = losses;
  r.acc_val = accuracy(net, ds, ds.val);
  r.err_val = 1.0 - r.acc_val;
  r.l_rate = losses.size() >= 2 ? compute_l_rate(losses) : 0.0;
  r.sim = compute_sim(g);
  r.score = compose_score(r.err_val, r.l_rate, r.sim, cfg.alpha, cfg.beta);
  return r;
}

inline void reset_velocity(Network& net) {
  net.for_each_param([](const std::string&, Param& p) { p.velocity = Tensor(); });
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Search-stage evaluation: train the head with modules frozen, then score on the val split.
inline ScoreReport evaluate(const Genotype& g, const KnowledgeBase& kb, const Dataset& ds, const EvalConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  Network net = assemble(g, kb, cfg);
  ScoreReport r = detail::search_stage(net, g, ds, cfg);
  r.wall_time = detail::seconds_since(t0);
  return r;
}

struct FineTuneResult {
  Network network;
  ScoreReport search;  // the head state fine-tuning starts from
  TrainHistory history;
  double val_error = 1.0;
  double test_error = 1.0;
};

/// Fine-tune stage: repeat the search-stage head training, then unfreeze every parameter and
/// train the whole network.
inline FineTuneResult fine_tune(const Genotype& g, const KnowledgeBase& kb, const Dataset& ds, const EvalConfig& cfg) {
  FineTuneResult out;
  out.network = assemble(g, kb, cfg);
  out.search = detail::search_stage(out.network, g, ds, cfg);
  if (!out.search.valid) {
    throw std::runtime_error("fine_tune " + g.str() + ": search-stage loss became non-finite");
  }
  out.network.set_all_frozen(false);
  detail::reset_velocity(out.network);
  TrainOptions opt;
  opt.epochs = cfg.finetune_epochs;
  opt.batch_size = cfg.batch_size;
  opt.sgd = cfg.finetune_sgd;
  opt.cell_mode = cfg.finetune_update_bn_stats ? Mode::train : Mode::train_fixed_stats;
  opt.cutout_length = cfg.cutout_length;
  opt.flip = cfg.flip;
  opt.seed = derive_seed(cfg.seed, "finetune:" + g.str());
  opt.measure_val = false;
  opt.cosine = cfg.finetune_cosine;
  out.history = train_network(out.network, ds, opt);
  if (!out.history.finite) {
    throw std::runtime_error("fine_tune " + g.str() + ": loss became non-finite in epoch " +
                             std::to_string(out.history.epochs.size()) + " (lr " +
                             std::to_string(cfg.finetune_sgd.lr) + ")");
  }
  out.val_error = 1.0 - accuracy(out.network, ds, ds.val);
  out.test_error = 1.0 - accuracy(out.network, ds, ds.test);
  return out;
}

/// Exact-genotype memo of score reports. Safe for concurrent use.
class ScoreCache {
 public:
  explicit ScoreCache(bool enabled = true) : enabled_(enabled) {}

  bool enabled() const { return enabled_; }

  std::optional<ScoreReport> lookup(const Genotype& g) const {
    if (!enabled_) return std::nullopt;
    std::lock_guard lock(mu_);
    auto it = map_.find(g.str());
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  void insert(const ScoreReport& r) {
    if (!enabled_) return;
    std::lock_guard lock(mu_);
    map_.emplace(r.genotype.str(), r);
  }

  size_t size() const {
    std::lock_guard lock(mu_);
    return map_.size();
  }

 private:
  bool enabled_;
  mutable std::mutex mu_;
  std::map<std::string, ScoreReport> map_;
};

/// Runs fn(i) for i in [0, count) on up to `workers` threads.
template <class Fn>
void parallel_for(size_t count, int workers, Fn&& fn) {
  const size_t w = std::min<size_t>(count, static_cast<size_t>(std::max(1, workers)));
  if (w <= 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (size_t t = 0; t < w; ++t) {
    pool.emplace_back([&] {
      for (size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// One scored request, in request order.
struct EvaluationRecord {
  int generation = 0;
  ScoreReport report;
  bool cache_hit = false;
};

/// Batch evaluator with memoization and a worker pool. Results come back in request order,
/// independent of completion order. Within one batch, repeats of a genotype are served from
/// the first request when the cache is enabled.
class Evaluator {
 public:
  Evaluator(const KnowledgeBase& kb, const Dataset& ds, EvalConfig cfg, int workers = 1)
      : kb_(kb), ds_(ds), cfg_(cfg), workers_(workers), cache_(cfg.use_cache) {
    cfg_.validate();
  }

  const EvalConfig& config() const { return cfg_; }
  const ScoreCache& cache() const { return cache_; }
  const std::vector<EvaluationRecord>& log() const { return log_; }
  size_t trained() const { return trained_; }

  std::vector<EvaluationRecord> evaluate_batch(const std::vector<Genotype>& gs, int generation = 0) {
    std::vector<EvaluationRecord> out(gs.size());
    std::vector<size_t> todo;
    std::map<std::string, size_t> first;  // batch-local leader for repeats
    std::vector<std::optional<size_t>> follows(gs.size());
    for (size_t i = 0; i < gs.size(); ++i) {
      out[i].generation = generation;
      if (auto hit = cache_.lookup(gs[i])) {
        out[i].report = *hit;
        out[i].cache_hit = true;
        continue;
      }
      if (cache_.enabled()) {
        auto [it, fresh] = first.emplace(gs[i].str(), i);
        if (!fresh) {
          follows[i] = it->second;
          continue;
        }
      }
      todo.push_back(i);
    }
    parallel_for(todo.size(), workers_, [&](size_t t) {
      const size_t i = todo[t];
      try {
        out[i].report = evaluate(gs[i], kb_, ds_, cfg_);
      } catch (const std::exception&) {
        out[i].report = detail::invalid_report(gs[i], cfg_, {});
      }
      cache_.insert(out[i].report);
    });
    trained_ += todo.size();
    for (size_t i = 0; i < gs.size(); ++i) {
      if (follows[i]) {
        out[i].report = out[*follows[i]].report;
        out[i].cache_hit = true;
      }
    }
    log_.insert(log_.end(), out.begin(), out.end());
    return out;
  }

 private:
  const KnowledgeBase& kb_;
  const Dataset& ds_;
  EvalConfig cfg_;
  int workers_;
  ScoreCache cache_;
  std::vector<EvaluationRecord> log_;
  size_t trained_ = 0;
};

}  // namespace modulenet
