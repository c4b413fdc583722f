#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modulenet/config.hpp"
#include "modulenet/dataset.hpp"
#include "modulenet/evaluator.hpp"
#include "modulenet/knowledge_base.hpp"
#include "modulenet/model_zoo.hpp"
#include "modulenet/nsga2.hpp"

namespace modulenet {

/// Raised when a command's inputs have not been produced yet.
class MissingPrerequisite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string hex64(uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Minimal CSV table: header plus string cells. Values never contain commas.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void write(const std::filesystem::path& p) const {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::trunc | std::ios::binary);
    auto line = [&](const std::vector<std::string>& cells) {
      for (size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
      out << "\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    if (!out) throw std::runtime_error("cannot write " + p.string());
  }

  static CsvTable read(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    CsvTable t;
    std::string line;
    auto split = [](const std::string& s) {
      std::vector<std::string> cells;
      std::stringstream ss(s);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (!s.empty() && s.back() == ',') cells.emplace_back();
      return cells;
    };
    if (!std::getline(in, line)) throw std::runtime_error(p.string() + ": empty CSV");
    t.header = split(line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      t.rows.push_back(split(line));
      if (t.rows.back().size() != t.header.size()) {
        throw std::runtime_error(p.string() + ": row " + std::to_string(t.rows.size()) + " has wrong column count");
      }
    }
    return t;
  }

  size_t column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw std::runtime_error("CSV has no column " + name);
  }
};

/// Ranks with ties sharing the average rank (1-based).
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation: Pearson correlation of average ranks. NaN when undefined.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  if (a.size() < 2) return std::nan("");
  auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nan("");
  return sab / std::sqrt(saa * sbb);
}

/// Fraction of consecutive pairs (in the given order) whose difference has the same sign
/// under both score lists. Returns {agreeing pairs, total pairs}.
inline std::pair<int, int> adjacent_sign_agreement(const std::vector<double>& before, const std::vector<double>& after) {
  if (before.size() != after.size()) throw std::invalid_argument("adjacent_sign_agreement: length mismatch");
  auto sign = [](double d) { return (d > 0) - (d < 0); };
  int agree = 0, total = 0;
  for (size_t i = 0; i + 1 < before.size(); ++i) {
    ++total;
    if (sign(before[i + 1] - before[i]) == sign(after[i + 1] - after[i])) ++agree;
  }
  return {agree, total};
}

struct SeedSummary {
  int arch_id = 0;
  std::string name;
  double val_error = 1.0;
  double test_error = 1.0;
};

struct FineTuneRow {
  Genotype genotype;
  std::string origin;  // "final" or "pool"
  ScoreReport search;
  double val_error = 1.0;
  double test_error = 1.0;
};

/// The six commands over one output directory. Each command reads its inputs from disk, so
/// commands may run in separate processes.
class Pipeline {
 public:
  Pipeline(RunConfig cfg, std::filesystem::path out, int workers = 1, std::ostream* log = &std::cerr)
      : cfg_(std::move(cfg)), out_(std::move(out)), workers_(std::max(1, workers)), log_(log) {
    cfg_.validate();
  }

  const RunConfig& config() const { return cfg_; }
  const std::filesystem::path& out() const { return out_; }

  static std::vector<std::string> commands() {
    return {"train-seeds", "build-kb", "search", "finetune", "report", "ablate-adapters"};
  }

  void run(const std::string& command) {
    if (command == "train-seeds") train_seeds();
    else if (command == "build-kb") build_kb();
    else if (command == "search") search();
    else if (command == "finetune") finetune();
    else if (command == "report") report();
    else if (command == "ablate-adapters") ablate_adapters();
    else if (command == "all") {
      for (const auto& c : commands()) run(c);
    } else {
      throw std::invalid_argument("unknown command '" + command + "'");
    }
  }

  const Dataset& dataset() {
    if (!ds_) {
      const std::string kind = cfg_.str("dataset");
      if (kind == "synthetic") {
        SynthOptions o;
        o.resolution = cfg_.integer("resolution");
        o.noise = static_cast<float>(cfg_.real("synth.noise"));
        o.phase_jitter = static_cast<float>(cfg_.real("synth.phase_jitter"));
        o.amplitude_jitter = static_cast<float>(cfg_.real("synth.amplitude_jitter"));
        ds_ = synth_dataset(derive_seed(cfg_.seed(), "synthetic"), cfg_.integer("synth.classes"),
                            cfg_.integer("synth.samples_per_class"), o);
      } else {
        if (cfg_.integer("resolution") != 32) throw std::invalid_argument("config: CIFAR requires resolution = 32");
        CifarOptions o;
        o.cifar100 = kind == "cifar100";
        o.split_seed = derive_seed(cfg_.seed(), "split");
        o.train_limit = cfg_.integer("cifar.train_limit");
        o.val_limit = cfg_.integer("cifar.val_limit");
        o.test_limit = cfg_.integer("cifar.test_limit");
        ds_ = load_cifar10(cfg_.str("data_dir"), o);
      }
    }
    return *ds_;
  }

  std::vector<ArchSpec> archs() { return cfg_.archs(dataset().num_classes); }

  // -------------------------------------------------------------------------
  void train_seeds() {
    const auto specs = archs();
    const Dataset& ds = dataset();
    std::vector<SeedSummary> summary(specs.size());
    std::vector<std::string> losses(specs.size());
    std::filesystem::create_directories(out_ / "seeds");
    parallel_for(specs.size(), workers_, [&](size_t i) {
      const auto& spec = specs[i];
      Network net = build_seed(spec, derive_seed(cfg_.seed(), "init:" + spec.name));
      TrainOptions opt;
      opt.batch_size = cfg_.integer("batch_size");
      opt.sgd = {static_cast<float>(cfg_.real("seed_lr")), static_cast<float>(cfg_.real("momentum")),
                 static_cast<float>(cfg_.real("weight_decay"))};
      opt.cutout_length = cfg_.flag("cutout") ? cfg_.integer("cutout_length") : 0;
      opt.flip = cfg_.flag("flip");
      opt.seed = derive_seed(cfg_.seed(), "order:" + spec.name);
      opt.measure_val = false;
      auto res = train_seed(std::move(net), ds, cfg_.integer("seed_epochs"), opt);
      if (!res.history.finite) throw std::runtime_error("seed " + spec.name + ": training loss became non-finite");
      save_tensors((out_ / "seeds" / seed_file(static_cast<int>(i) + 1)).string(), res.network.export_params());
      summary[i] = {static_cast<int>(i) + 1, spec.name, 1.0 - accuracy(res.network, ds, ds.val),
                    1.0 - accuracy(res.network, ds, ds.test)};
      for (double l : res.history.losses()) losses[i] += (losses[i].empty() ? "" : " ") + fmt_real(l);
    });
    CsvTable t{{"arch_id", "name", "val_error", "test_error", "loss_history"}, {}};
    for (size_t i = 0; i < summary.size(); ++i) {
      const auto& s = summary[i];
      t.rows.push_back({std::to_string(s.arch_id), s.name, fmt_real(s.val_error), fmt_real(s.test_error), losses[i]});
      say("seed " + s.name + ": val error " + fmt_real(s.val_error) + ", test error " + fmt_real(s.test_error));
    }
    t.write(out_ / "seeds" / "seeds.csv");
    write_manifest("train-seeds");
  }

  std::vector<SeedSummary> read_seed_summary() {
    require(out_ / "seeds" / "seeds.csv", "train-seeds");
    auto t = CsvTable::read(out_ / "seeds" / "seeds.csv");
    std::vector<SeedSummary> out;
    for (const auto& r : t.rows) {
      out.push_back({std::stoi(r[t.column("arch_id")]), r[t.column("name")], std::stod(r[t.column("val_error")]),
                     std::stod(r[t.column("test_error")])});
    }
    return out;
  }

  /// Trained seed network i (1-based) as saved by train-seeds.
  Network load_seed(int i) {
    const auto specs = archs();
    const auto path = out_ / "seeds" / seed_file(i);
    require(path, "train-seeds");
    Network net = build_seed(specs.at(static_cast<size_t>(i - 1)), 0);
    net.import_params(load_tensors(path.string()), path.string());
    return net;
  }

  // -------------------------------------------------------------------------
  void build_kb() {
    const auto specs = archs();
    std::vector<Network> seeds;
    std::vector<std::string> names;
    for (int i = 1; i <= static_cast<int>(specs.size()); ++i) {
      seeds.push_back(load_seed(i));
      names.push_back(specs[static_cast<size_t>(i - 1)].name);
    }
    auto kb = build_knowledge_base(seeds, names, cfg_.c(), cfg_.head(dataset().num_classes));
    save_knowledge_base(kb, (out_ / "kb").string());
    say("knowledge base: " + std::to_string(kb.n) + " architectures x " + std::to_string(kb.c) + " positions");
    write_manifest("build-kb");
  }

  KnowledgeBase load_kb() {
    require(out_ / "kb" / "manifest.txt", "build-kb");
    auto kb = load_knowledge_base((out_ / "kb").string());
    if (kb.n != cfg_.n() || kb.c != cfg_.c()) {
      throw std::runtime_error("knowledge base in " + (out_ / "kb").string() + " has (n, c) = (" + std::to_string(kb.n) +
                               ", " + std::to_string(kb.c) + "), config says (" + std::to_string(cfg_.n()) + ", " +
                               std::to_string(cfg_.c()) + "); rerun build-kb");
    }
    return kb;
  }

  // -------------------------------------------------------------------------
  void search() {
    const KnowledgeBase kb = load_kb();
    const Dataset& ds = dataset();
    Evaluator ev(kb, ds, cfg_.eval(), workers_);
    auto result = run_search(
        cfg_.search(),
        [&](const std::vector<Genotype>& gs, int generation) {
          auto recs = ev.evaluate_batch(gs, generation);
          std::vector<Evaluation> out;
          for (const auto& r : recs) out.push_back({{r.report.score}, r.cache_hit});
          return out;
        },
        ev.config().worst_score());
    const bool wall = cfg_.flag("record_wall_time");

    CsvTable gens{{"generation", "best_score", "mean_score", "new_survival", "evaluations_performed", "cache_hits"}, {}};
    for (const auto& s : result.stats) {
      gens.rows.push_back({std::to_string(s.generation), fmt_real(s.best_score), fmt_real(s.mean_score),
                           std::to_string(s.new_survival), std::to_string(s.evaluations), std::to_string(s.cache_hits)});
      say("generation " + std::to_string(s.generation) + ": best " + fmt_real(s.best_score) + ", mean " +
          fmt_real(s.mean_score) + ", new survival " + std::to_string(s.new_survival));
    }
    gens.write(out_ / "search" / "generations.csv");

    CsvTable evals{{"generation", "genotype", "err_val", "l_rate", "sim", "score", "wall_time", "valid", "cache_hit",
                    "loss_history"},
                   {}};
    for (const auto& r : ev.log()) {
      std::string hist;
      for (double l : r.report.loss_history) hist += (hist.empty() ? "" : " ") + fmt_real(l);
      evals.rows.push_back({std::to_string(r.generation), r.report.genotype.str(), fmt_real(r.report.err_val),
                            fmt_real(r.report.l_rate), fmt_real(r.report.sim), fmt_real(r.report.score),
                            fmt_real(wall && !r.cache_hit ? r.report.wall_time : 0.0), r.report.valid ? "1" : "0",
                            r.cache_hit ? "1" : "0", hist});
    }
    evals.write(out_ / "search" / "evaluations.csv");

    CsvTable pops{{"generation", "slot", "genotype", "score", "rank", "crowding"}, {}};
    for (size_t g = 0; g < result.history.size(); ++g) {
      for (size_t k = 0; k < result.history[g].size(); ++k) {
        const auto& ind = result.history[g][k];
        pops.rows.push_back({std::to_string(g + 1), std::to_string(k), ind.genotype.str(), fmt_real(ind.objectives[0]),
                             std::to_string(ind.rank), fmt_real(ind.crowding)});
      }
    }
    pops.write(out_ / "search" / "populations.csv");
    write_manifest("search");
  }

  /// Distinct final-population genotypes first (survival order), then evenly spaced picks
  /// over the score ranking of every other genotype evaluated in the run, up to
  /// finetune_count in total.
  std::vector<std::pair<Genotype, std::string>> finetune_pool() {
    require(out_ / "search" / "populations.csv", "search");
    require(out_ / "search" / "evaluations.csv", "search");
    auto pops = CsvTable::read(out_ / "search" / "populations.csv");
    auto evals = CsvTable::read(out_ / "search" / "evaluations.csv");
    int last_gen = 0;
    for (const auto& r : pops.rows) last_gen = std::max(last_gen, std::stoi(r[0]));
    std::vector<std::pair<Genotype, std::string>> pool;
    std::set<std::string> taken;
    for (const auto& r : pops.rows) {
      if (std::stoi(r[0]) != last_gen) continue;
      const auto& g = r[pops.column("genotype")];
      if (taken.insert(g).second) pool.emplace_back(Genotype::parse(g), "final");
    }
    const size_t want = static_cast<size_t>(cfg_.integer("finetune_count"));
    std::map<std::string, double> others;
    for (const auto& r : evals.rows) {
      const auto& g = r[evals.column("genotype")];
      if (!taken.count(g)) others.emplace(g, std::stod(r[evals.column("score")]));
    }
    if (pool.size() < want && !others.empty()) {
      std::vector<std::pair<double, std::string>> ranked;
      for (const auto& [g, s] : others) ranked.emplace_back(s, g);
      std::sort(ranked.begin(), ranked.end());
      const size_t need = std::min(want - pool.size(), ranked.size());
      for (size_t t = 0; t < need; ++t) {
        const size_t at = need == 1 ? 0 : static_cast<size_t>(std::llround(static_cast<double>(t) * (ranked.size() - 1) / (need - 1)));
        if (taken.insert(ranked[at].second).second) pool.emplace_back(Genotype::parse(ranked[at].second), "pool");
      }
    }
    return pool;
  }

  // -------------------------------------------------------------------------
  void finetune() {
    const KnowledgeBase kb = load_kb();
    const Dataset& ds = dataset();
    auto pool = finetune_pool();
    const EvalConfig ecfg = cfg_.eval();
    std::vector<FineTuneRow> rows(pool.size());
    parallel_for(pool.size(), workers_, [&](size_t i) {
      auto res = fine_tune(pool[i].first, kb, ds, ecfg);
      rows[i] = {pool[i].first, pool[i].second, res.search, res.val_error, res.test_error};
    });
    std::stable_sort(rows.begin(), rows.end(), [](const FineTuneRow& a, const FineTuneRow& b) {
      if (a.search.score != b.search.score) return a.search.score < b.search.score;
      return a.genotype.str() < b.genotype.str();
    });
    CsvTable t{{"genotype", "origin", "score", "err_val", "l_rate", "sim", "val_error", "test_error"}, {}};
    for (const auto& r : rows) {
      t.rows.push_back({r.genotype.str(), r.origin, fmt_real(r.search.score), fmt_real(r.search.err_val),
                        fmt_real(r.search.l_rate), fmt_real(r.search.sim), fmt_real(r.val_error),
                        fmt_real(r.test_error)});
      say("fine-tuned " + r.genotype.str() + " (" + r.origin + "): score " + fmt_real(r.search.score) +
          ", val error " + fmt_real(r.val_error) + ", test error " + fmt_real(r.test_error));
    }
    t.write(out_ / "finetune" / "results.csv");
    write_manifest("finetune");
  }

  std::vector<FineTuneRow> read_finetune() {
    require(out_ / "finetune" / "results.csv", "finetune");
    auto t = CsvTable::read(out_ / "finetune" / "results.csv");
    std::vector<FineTuneRow> rows;
    for (const auto& r : t.rows) {
      FineTuneRow f;
      f.genotype = Genotype::parse(r[t.column("genotype")]);
      f.origin = r[t.column("origin")];
      f.search.genotype = f.genotype;
      f.search.score = std::stod(r[t.column("score")]);
      f.search.err_val = std::stod(r[t.column("err_val")]);
      f.search.l_rate = std::stod(r[t.column("l_rate")]);
      f.search.sim = std::stod(r[t.column("sim")]);
      f.val_error = std::stod(r[t.column("val_error")]);
      f.test_error = std::stod(r[t.column("test_error")]);
      rows.push_back(std::move(f));
    }
    return rows;
  }

  // -------------------------------------------------------------------------
  void report() {
    auto rows = read_finetune();
    auto seeds = read_seed_summary();
    std::stable_sort(rows.begin(), rows.end(), [](const FineTuneRow& a, const FineTuneRow& b) {
      if (a.search.score != b.search.score) return a.search.score > b.search.score;
      return a.genotype.str() < b.genotype.str();
    });
    CsvTable ranking{{"genotype", "score", "test_error", "val_error", "origin"}, {}};
    std::vector<double> scores, tests;
    for (const auto& r : rows) {
      ranking.rows.push_back(
          {r.genotype.str(), fmt_real(r.search.score), fmt_real(r.test_error), fmt_real(r.val_error), r.origin});
      scores.push_back(r.search.score);
      tests.push_back(r.test_error);
    }
    ranking.write(out_ / "report" / "ranking.csv");

    const double rho = spearman(scores, tests);
    CsvTable corr{{"metric", "value"}, {}};
    corr.rows.push_back({"genotypes", std::to_string(rows.size())});
    corr.rows.push_back({"spearman_score_vs_test_error", fmt_real(rho)});
    corr.write(out_ / "report" / "correlation.csv");

    double best_seed = 1.0, best_searched = 1.0;
    std::string best_seed_name, best_searched_g;
    for (const auto& s : seeds) {
      if (s.val_error < best_seed) best_seed = s.val_error, best_seed_name = s.name;
    }
    for (const auto& r : rows) {
      if (r.origin == "final" && r.val_error < best_searched) best_searched = r.val_error, best_searched_g = r.genotype.str();
    }
    CsvTable summary{{"item", "name", "val_error"}, {}};
    for (const auto& s : seeds) summary.rows.push_back({"seed", s.name, fmt_real(s.val_error)});
    summary.rows.push_back({"best_seed", best_seed_name, fmt_real(best_seed)});
    summary.rows.push_back({"best_searched", best_searched_g, fmt_real(best_searched)});
    summary.write(out_ / "report" / "summary.csv");
    say("best seed " + best_seed_name + " val error " + fmt_real(best_seed) + "; best searched " + best_searched_g +
        " val error " + fmt_real(best_searched) + "; spearman(score, test error) = " + fmt_real(rho) + " over " +
        std::to_string(rows.size()) + " genotypes");
    write_manifest("report");
  }

  // -------------------------------------------------------------------------
  /// Re-scores the fine-tuned population with conv1x1 adapters everywhere and measures
  /// how many adjacent pairs (in parameter-free score order) keep their order.
  void ablate_adapters() {
    auto rows = read_finetune();
    const KnowledgeBase kb = load_kb();
    const Dataset& ds = dataset();
    EvalConfig base = cfg_.eval();
    base.baseline_adapters = true;
    base.use_cache = false;
    std::vector<Genotype> gs;
    for (const auto& r : rows) gs.push_back(r.genotype);
    Evaluator ev(kb, ds, base, workers_);
    auto recs = ev.evaluate_batch(gs);
    std::vector<double> before, after;
    CsvTable t{{"genotype", "score", "baseline_score", "baseline_err_val", "baseline_l_rate"}, {}};
    for (size_t i = 0; i < rows.size(); ++i) {
      before.push_back(rows[i].search.score);
      after.push_back(recs[i].report.score);
      t.rows.push_back({rows[i].genotype.str(), fmt_real(rows[i].search.score), fmt_real(recs[i].report.score),
                        fmt_real(recs[i].report.err_val), fmt_real(recs[i].report.l_rate)});
    }
    t.write(out_ / "ablate" / "results.csv");
    auto [agree, total] = adjacent_sign_agreement(before, after);
    CsvTable s{{"metric", "value"}, {}};
    s.rows.push_back({"adjacent_pairs", std::to_string(total)});
    s.rows.push_back({"order_preserved", std::to_string(agree)});
    s.rows.push_back({"fraction_preserved", fmt_real(total ? static_cast<double>(agree) / total : 1.0)});
    s.write(out_ / "ablate" / "summary.csv");
    say("adapter ablation: " + std::to_string(agree) + "/" + std::to_string(total) + " adjacent pairs keep their order");
    write_manifest("ablate-adapters");
  }

 private:
  static std::string seed_file(int i) { return "seed_" + std::to_string(i) + ".mntw"; }

  void require(const std::filesystem::path& p, const std::string& command) const {
    if (!std::filesystem::exists(p)) {
      throw MissingPrerequisite("missing " + p.string() + "; run '" + command + "' first with the same --out");
    }
  }

  void say(const std::string& s) const {
    if (log_) *log_ << s << "\n";
  }

  void write_manifest(const std::string& command) {
    std::filesystem::create_directories(out_ / "manifests");
    std::ofstream cfg_out(out_ / "config.txt", std::ios::trunc);
    cfg_out << cfg_.canonical();
    std::ofstream m(out_ / "manifests" / (command + ".txt"), std::ios::trunc);
    m << "command = " << command << "\n";
    m << "config_hash = " << hex64(cfg_.hash()) << "\n";
    m << "seed = " << cfg_.seed() << "\n";
    m << "dataset = " << cfg_.str("dataset") << "\n";
    const Dataset& ds = dataset();
    auto join = [](const std::vector<float>& v) {
      std::string s;
      for (size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt_real(v[i]);
      return s;
    };
    m << "normalization_mean = " << join(ds.channel_mean) << "\n";
    m << "normalization_std = " << join(ds.channel_std) << "\n";
    m << "splits = " << ds.train.size() << " " << ds.val.size() << " " << ds.test.size() << "\n";
    if (!m) throw std::runtime_error("cannot write manifest for " + command);
  }

  RunConfig cfg_;
  std::filesystem::path out_;
  int workers_;
  std::ostream* log_;
  std::optional<Dataset> ds_;
};

}  // namespace modulenet
