#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modulenet/model_zoo.hpp"
#include "modulenet/network.hpp"

namespace modulenet {

/// One decomposed cell with its trained weights, all frozen.
struct ModuleRecord {
  int arch_id = 0;   // 1-based
  int position = 0;  // 1-based
  std::vector<Layer> layers;
  int in_channels = 0;
  int out_channels = 0;
  int in_resolution = 0;
  int out_resolution = 0;

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers) out.push_back(l.spec);
    return out;
  }

  int reduction_factor() const {
    int r = 1;
    for (const auto& l : layers) r *= l.spec.reduction();
    return r;
  }

  std::vector<NamedTensor> export_params() const {
    std::vector<NamedTensor> out;
    for (size_t i = 0; i < layers.size(); ++i) {
      const_cast<Layer&>(layers[i]).for_each_param(std::to_string(i) + ".", [&](const std::string& name, Param& p) {
        out.push_back({name, p.value});
      });
    }
    return out;
  }
};

struct ScheduleEntry {
  int in_resolution = 0;
  int reduction_factor = 2;
  bool operator==(const ScheduleEntry&) const = default;
};

/// c x n grid of frozen modules indexed by (position, arch_id), both 1-based. Read-only once built.
struct KnowledgeBase {
  int n = 0;
  int c = 0;
  int input_channels = 3;
  int input_resolution = 32;
  HeadSpec head;
  std::vector<std::string> arch_names;
  std::vector<ScheduleEntry> schedule;
  std::vector<std::optional<ModuleRecord>> grid;  // [(position-1) * n + (arch_id-1)]

  const ModuleRecord& at(int position, int arch_id) const {
    if (position < 1 || position > c || arch_id < 1 || arch_id > n) {
      throw std::out_of_range("knowledge base: no cell (" + std::to_string(position) + ", " + std::to_string(arch_id) + ")");
    }
    const auto& r = grid[static_cast<size_t>((position - 1) * n + (arch_id - 1))];
    if (!r) throw std::out_of_range("knowledge base: cell (" + std::to_string(position) + ", " + std::to_string(arch_id) + ") missing");
    return *r;
  }

  std::optional<ModuleRecord>& slot(int position, int arch_id) {
    return grid[static_cast<size_t>((position - 1) * n + (arch_id - 1))];
  }
};

/// Splits a network into its c cells with copied, frozen weights. Position j sees spatial
/// extent R / 2^(j-1).
inline std::vector<ModuleRecord> decompose(const Network& net, int arch_id, int c) {
  if (static_cast<int>(net.cells.size()) != c) {
    throw std::invalid_argument("decompose: network has " + std::to_string(net.cells.size()) + " cells, expected " +
                                std::to_string(c));
  }
  std::vector<ModuleRecord> out;
  int ch = net.input_channels;
  int res = net.input_resolution;
  for (int j = 0; j < c; ++j) {
    ModuleRecord r;
    r.arch_id = arch_id;
    r.position = j + 1;
    r.layers = net.cells[static_cast<size_t>(j)];
    for (auto& l : r.layers) {
      l.clear_saved();
      l.set_frozen(true);
    }
    r.in_channels = ch;
    for (const auto& l : r.layers) ch = layer_out_channels(l.spec, ch);
    r.out_channels = ch;
    r.in_resolution = res;
    r.out_resolution = res / r.reduction_factor();
    res = r.out_resolution;
    out.push_back(std::move(r));
  }
  return out;
}

/// Findings; empty means the base is total and every record matches the schedule.
inline std::vector<std::string> validate(const KnowledgeBase& kb) {
  std::vector<std::string> diag;
  auto where = [](int j, int i) { return "(" + std::to_string(j) + ", " + std::to_string(i) + ")"; };
  if (static_cast<int>(kb.grid.size()) != kb.n * kb.c) {
    diag.push_back("grid holds " + std::to_string(kb.grid.size()) + " slots, expected n*c = " + std::to_string(kb.n * kb.c));
    return diag;
  }
  if (static_cast<int>(kb.schedule.size()) != kb.c) {
    diag.push_back("schedule has " + std::to_string(kb.schedule.size()) + " entries, expected " + std::to_string(kb.c));
    return diag;
  }
  for (int j = 1; j <= kb.c; ++j) {
    const auto& sched = kb.schedule[static_cast<size_t>(j - 1)];
    for (int i = 1; i <= kb.n; ++i) {
      const auto& slot = kb.grid[static_cast<size_t>((j - 1) * kb.n + (i - 1))];
      if (!slot) {
        diag.push_back("missing module at " + where(j, i) + " (grid is not total)");
        continue;
      }
      const auto& r = *slot;
      if (r.position != j || r.arch_id != i) diag.push_back("module at " + where(j, i) + " is labelled " + where(r.position, r.arch_id));
      if (r.in_resolution != sched.in_resolution) {
        diag.push_back("module " + where(j, i) + " in_resolution " + std::to_string(r.in_resolution) +
                       " differs from schedule " + std::to_string(sched.in_resolution));
      }
      if (r.reduction_factor() != sched.reduction_factor) {
        diag.push_back("module " + where(j, i) + " reduction " + std::to_string(r.reduction_factor()) +
                       " differs from schedule " + std::to_string(sched.reduction_factor));
      }
      if (r.reduction_factor() < 1 || r.out_resolution * r.reduction_factor() != r.in_resolution) {
        diag.push_back("module " + where(j, i) + " out_resolution inconsistent with in_resolution / reduction");
      }
      int ch = r.in_channels;
      bool schema_ok = true, frozen = true;
      for (const auto& l : r.layers) {
        ch = layer_out_channels(l.spec, ch);
        Rng rng(0);
        Layer fresh = make_layer(l.spec, rng);
        std::vector<std::pair<std::string, std::vector<int>>> want, have;
        fresh.for_each_param("", [&](const std::string& n, Param& p) { want.emplace_back(n, p.value.dims()); });
        const_cast<Layer&>(l).for_each_param("", [&](const std::string& n, Param& p) {
          have.emplace_back(n, p.value.dims());
          if (!p.frozen) frozen = false;
        });
        if (want != have) schema_ok = false;
      }
      if (ch != r.out_channels) diag.push_back("module " + where(j, i) + " out_channels disagree with its layers");
      if (!schema_ok) diag.push_back("module " + where(j, i) + " weights do not cover its layer schema");
      if (!frozen) diag.push_back("module " + where(j, i) + " has unfrozen parameters");
    }
  }
  return diag;
}

inline std::string join_lines(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += "\n  " + l;
  return s;
}

/// Decomposes trained seeds into the grid and validates it.
inline KnowledgeBase build_knowledge_base(const std::vector<Network>& seeds, const std::vector<std::string>& names,
                                          int c, const HeadSpec& head) {
  if (seeds.empty()) throw std::invalid_argument("build_knowledge_base: no seed networks");
  KnowledgeBase kb;
  kb.n = static_cast<int>(seeds.size());
  kb.c = c;
  kb.input_channels = seeds.front().input_channels;
  kb.input_resolution = seeds.front().input_resolution;
  kb.head = head;
  kb.arch_names = names;
  kb.arch_names.resize(seeds.size());
  for (int j = 0; j < c; ++j) kb.schedule.push_back({cell_input_resolution(kb.input_resolution, j), 2});
  kb.grid.resize(static_cast<size_t>(kb.n * c));
  for (int i = 1; i <= kb.n; ++i) {
    const auto& net = seeds[static_cast<size_t>(i - 1)];
    if (net.input_resolution != kb.input_resolution || net.input_channels != kb.input_channels) {
      throw std::invalid_argument("build_knowledge_base: seed " + std::to_string(i) + " has a different input shape");
    }
    for (auto& r : decompose(net, i, c)) kb.slot(r.position, i) = std::move(r);
  }
  auto diag = validate(kb);
  if (!diag.empty()) throw std::invalid_argument("knowledge base invalid:" + join_lines(diag));
  return kb;
}

// ---------------------------------------------------------------------------
// Persistence: manifest.txt plus one MNTW weight file per record.

inline constexpr int kKnowledgeBaseVersion = 1;

inline std::string module_file_name(int position, int arch_id) {
  return "module_p" + std::to_string(position) + "_a" + std::to_string(arch_id) + ".mntw";
}

inline std::string join_ints(const std::vector<int>& v, char sep = ',') {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::vector<int> split_ints(const std::string& s, char sep = ',') {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

inline void save_knowledge_base(const KnowledgeBase& kb, const std::string& dir) {
  auto diag = validate(kb);
  if (!diag.empty()) throw std::invalid_argument("refusing to save invalid knowledge base:" + join_lines(diag));
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream m;
  m << "# modulenet knowledge base\n";
  m << "version = " << kKnowledgeBaseVersion << "\n";
  m << "n = " << kb.n << "\n";
  m << "c = " << kb.c << "\n";
  m << "input_channels = " << kb.input_channels << "\n";
  m << "input_resolution = " << kb.input_resolution << "\n";
  m << "head = " << join_ints(kb.head.widths) << "\n";
  for (int i = 1; i <= kb.n; ++i) m << "arch." << i << " = " << kb.arch_names[static_cast<size_t>(i - 1)] << "\n";
  for (int j = 1; j <= kb.c; ++j) {
    const auto& s = kb.schedule[static_cast<size_t>(j - 1)];
    m << "schedule." << j << " = " << s.in_resolution << " " << s.reduction_factor << "\n";
  }
  for (int j = 1; j <= kb.c; ++j) {
    for (int i = 1; i <= kb.n; ++i) {
      const auto& r = kb.at(j, i);
      const std::string key = "record." + std::to_string(j) + "." + std::to_string(i);
      m << key << ".meta = " << r.in_channels << " " << r.out_channels << " " << r.in_resolution << " "
        << r.out_resolution << "\n";
      m << key << ".layers = ";
      for (size_t k = 0; k < r.layers.size(); ++k) m << (k ? "; " : "") << to_string(r.layers[k].spec);
      m << "\n";
      const std::string file = module_file_name(j, i);
      m << key << ".file = " << file << "\n";
      save_tensors((fs::path(dir) / file).string(), r.export_params());
    }
  }
  std::ofstream out(fs::path(dir) / "manifest.txt", std::ios::trunc);
  out << m.str();
  if (!out) throw std::runtime_error("cannot write " + (fs::path(dir) / "manifest.txt").string());
}

/// Reads `key = value` lines; '#' starts a comment. Duplicate keys are rejected.
inline std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const char* ws = " \t\r\n";
    s.erase(0, s.find_first_not_of(ws));
    s.erase(s.find_last_not_of(ws) + 1);
    return s;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": duplicate key " + key);
  }
  return kv;
}

inline KnowledgeBase load_knowledge_base(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest = (fs::path(dir) / "manifest.txt").string();
  auto kv = read_key_values(manifest);
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(manifest + ": missing key " + key);
    return it->second;
  };
  int version = std::stoi(get("version"));
  if (version != kKnowledgeBaseVersion) {
    throw std::runtime_error(manifest + ": unsupported knowledge base version " + std::to_string(version));
  }
  KnowledgeBase kb;
  kb.n = std::stoi(get("n"));
  kb.c = std::stoi(get("c"));
  if (kb.n < 1 || kb.c < 1) throw std::runtime_error(manifest + ": n and c must be >= 1");
  kb.input_channels = std::stoi(get("input_channels"));
  kb.input_resolution = std::stoi(get("input_resolution"));
  kb.head.widths = split_ints(get("head"));
  for (int i = 1; i <= kb.n; ++i) kb.arch_names.push_back(get("arch." + std::to_string(i)));
  for (int j = 1; j <= kb.c; ++j) {
    auto v = split_ints(get("schedule." + std::to_string(j)), ' ');
    if (v.size() != 2) throw std::runtime_error(manifest + ": bad schedule." + std::to_string(j));
    kb.schedule.push_back({v[0], v[1]});
  }
  kb.grid.resize(static_cast<size_t>(kb.n * kb.c));
  for (int j = 1; j <= kb.c; ++j) {
    for (int i = 1; i <= kb.n; ++i) {
      const std::string key = "record." + std::to_string(j) + "." + std::to_string(i);
      auto meta = split_ints(get(key + ".meta"), ' ');
      if (meta.size() != 4) throw std::runtime_error(manifest + ": bad " + key + ".meta");
      ModuleRecord r;
      r.arch_id = i;
      r.position = j;
      r.in_channels = meta[0];
      r.out_channels = meta[1];
      r.in_resolution = meta[2];
      r.out_resolution = meta[3];
      std::stringstream ls(get(key + ".layers"));
      std::string spec_text;
      Rng rng(0);
      while (std::getline(ls, spec_text, ';')) r.layers.push_back(make_layer(parse_layer_spec(spec_text), rng));
      const std::string file = (fs::path(dir) / get(key + ".file")).string();
      auto tensors = load_tensors(file);
      size_t used = 0;
      for (size_t k = 0; k < r.layers.size(); ++k) {
        r.layers[k].for_each_param(std::to_string(k) + ".", [&](const std::string& name, Param& p) {
          for (auto& t : tensors) {
            if (t.name != name) continue;
            if (t.tensor.dims() != p.value.dims()) {
              throw FormatError(file + ": tensor " + name + " has shape " + t.tensor.shape_string() + ", expected " +
                                p.value.shape_string());
            }
            p.value = std::move(t.tensor);
            ++used;
            return;
          }
          throw FormatError(file + ": missing tensor " + name);
        });
        r.layers[k].set_frozen(true);
      }
      if (used != tensors.size()) throw FormatError(file + ": unexpected extra tensors");
      kb.slot(j, i) = std::move(r);
    }
  }
  auto diag = validate(kb);
  if (!diag.empty()) throw std::runtime_error(manifest + ": knowledge base invalid:" + join_lines(diag));
  return kb;
}

}  // namespace modulenet
