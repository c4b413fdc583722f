#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modulenet/network.hpp"
#include "modulenet/training.hpp"

namespace modulenet {

enum class Family { plain, residual };

struct CellSpec {
  std::vector<LayerSpec> layers;
  int in_channels = 0;
  int out_channels = 0;
  int reduction_factor = 2;
};

/// widths are the hidden sizes followed by the class count.
struct HeadSpec {
  std::vector<int> widths{128, 128, 10};
  int num_classes() const { return widths.empty() ? 0 : widths.back(); }
};

struct ArchSpec {
  std::string name;
  Family family = Family::plain;
  std::vector<CellSpec> cells;
  HeadSpec head;
  int input_channels = 3;
  int input_resolution = 32;
};

inline HeadSpec make_head_spec(const std::vector<int>& hidden, int num_classes) {
  HeadSpec h;
  h.widths = hidden;
  h.widths.push_back(num_classes);
  return h;
}

/// Plain VGG-style stack: per cell `depth` x (conv3x3-bn-relu), then 2x2 max-pool.
inline ArchSpec make_plain_arch(std::string name, const std::vector<int>& widths, int depth, const HeadSpec& head,
                                int input_channels = 3, int input_resolution = 32) {
  ArchSpec a{std::move(name), Family::plain, {}, head, input_channels, input_resolution};
  int in = input_channels;
  for (int w : widths) {
    CellSpec c;
    c.in_channels = in;
    c.out_channels = w;
    for (int d = 0; d < depth; ++d) {
      c.layers.push_back(LayerSpec::conv2d(d == 0 ? in : w, w, 3, 1, 1));
      c.layers.push_back(LayerSpec::batchnorm(w));
      c.layers.push_back(LayerSpec::relu());
    }
    c.layers.push_back(LayerSpec::maxpool2d(2, 2));
    a.cells.push_back(std::move(c));
    in = w;
  }
  return a;
}

/// Residual stack: per cell (depth - 1) stride-1 blocks, then one stride-2 block that
/// performs the reduction.
inline ArchSpec make_residual_arch(std::string name, const std::vector<int>& widths, int depth, const HeadSpec& head,
                                   int input_channels = 3, int input_resolution = 32) {
  ArchSpec a{std::move(name), Family::residual, {}, head, input_channels, input_resolution};
  int in = input_channels;
  for (int w : widths) {
    CellSpec c;
    c.in_channels = in;
    c.out_channels = w;
    int cur = in;
    for (int d = 0; d + 1 < depth; ++d) {
      c.layers.push_back(LayerSpec::residual_block(cur, w, 1, cur != w));
      cur = w;
    }
    c.layers.push_back(LayerSpec::residual_block(cur, w, 2, true));
    a.cells.push_back(std::move(c));
    in = w;
  }
  return a;
}

/// Channel count flowing out of a layer, or `in` for channel-preserving layers.
inline int layer_out_channels(const LayerSpec& s, int in) {
  switch (s.kind) {
    case LayerKind::conv2d:
    case LayerKind::residual_block: return s.out_channels;
    default: return in;
  }
}

inline void validate_arch(const ArchSpec& a) {
  auto fail = [&](const std::string& why) { throw std::invalid_argument("arch '" + a.name + "': " + why); };
  if (a.cells.empty()) fail("no cells");
  if (a.head.widths.empty() || a.head.num_classes() < 2) fail("head needs a class count >= 2");
  int ch = a.input_channels;
  int res = a.input_resolution;
  for (size_t j = 0; j < a.cells.size(); ++j) {
    const auto& cell = a.cells[j];
    const std::string where = "cell " + std::to_string(j + 1) + ": ";
    if (cell.in_channels != ch) {
      fail(where + "in-channels " + std::to_string(cell.in_channels) + " but previous cell emits " + std::to_string(ch));
    }
    if (cell.layers.empty()) fail(where + "no layers");
    int reductions = 0;
    for (size_t i = 0; i < cell.layers.size(); ++i) {
      const auto& l = cell.layers[i];
      try {
        check_spec(l);
      } catch (const std::invalid_argument& e) {
        fail(where + e.what());
      }
      if ((l.kind == LayerKind::conv2d || l.kind == LayerKind::residual_block || l.kind == LayerKind::batchnorm) &&
          l.in_channels != ch) {
        fail(where + "layer " + std::to_string(i) + " expects " + std::to_string(l.in_channels) + " channels, gets " +
             std::to_string(ch));
      }
      if (l.kind == LayerKind::linear) fail(where + "linear layers belong to the head");
      if (l.reduction() > 1) {
        ++reductions;
        if (l.reduction() != cell.reduction_factor) fail(where + "reduction stride differs from reduction_factor");
        if (i + 1 != cell.layers.size()) fail(where + "reduction layer must end the cell");
      }
      ch = layer_out_channels(l, ch);
    }
    if (reductions != 1) fail(where + "must contain exactly one reduction layer");
    if (cell.reduction_factor != 2) fail(where + "reduction_factor must be 2");
    if (ch != cell.out_channels) fail(where + "declared out-channels differ from layer chain");
    if (res % cell.reduction_factor != 0) fail(where + "resolution not divisible by the reduction");
    res /= cell.reduction_factor;
  }
}

/// Input resolution seen by cell j (0-based) for input extent R: R / 2^j.
inline int cell_input_resolution(int input_resolution, int j) { return input_resolution >> j; }

inline std::vector<Layer> build_head(const HeadSpec& head, int in_features, Rng& rng) {
  std::vector<Layer> layers;
  int in = in_features;
  for (size_t i = 0; i < head.widths.size(); ++i) {
    layers.push_back(make_layer(LayerSpec::linear(in, head.widths[i]), rng));
    if (i + 1 < head.widths.size()) layers.push_back(make_layer(LayerSpec::relu(), rng));
    in = head.widths[i];
  }
  return layers;
}

inline int head_in_features(int last_channels, int input_resolution, int cells) {
  int r = input_resolution >> cells;
  return last_channels * r * r;
}

inline Network build_seed(const ArchSpec& spec, uint64_t seed) {
  validate_arch(spec);
  Rng rng(seed);
  Network net;
  net.input_channels = spec.input_channels;
  net.input_resolution = spec.input_resolution;
  for (const auto& cell : spec.cells) {
    std::vector<Layer> layers;
    for (const auto& l : cell.layers) layers.push_back(make_layer(l, rng));
    net.cells.push_back(std::move(layers));
  }
  for (size_t j = 0; j + 1 < spec.cells.size(); ++j) {
    net.adapters.push_back(Adapter::make(plan_adapter(spec.cells[j].out_channels, spec.cells[j + 1].in_channels), rng));
  }
  const int feats =
      head_in_features(spec.cells.back().out_channels, spec.input_resolution, static_cast<int>(spec.cells.size()));
  net.head = build_head(spec.head, feats, rng);
  return net;
}

struct SeedTrainResult {
  Network network;
  TrainHistory history;
  double val_accuracy = 0.0;
};

inline SeedTrainResult train_seed(Network net, const Dataset& ds, int epochs, TrainOptions opt) {
  opt.epochs = epochs;
  opt.cell_mode = Mode::train;
  SeedTrainResult r;
  r.history = train_network(net, ds, opt);
  r.val_accuracy = r.history.epochs.empty() ? accuracy(net, ds, ds.val) : r.history.epochs.back().val_accuracy;
  r.network = std::move(net);
  return r;
}

/// Default desk-scale zoo: two plain and two residual variants with differing widths/depths.
inline std::vector<ArchSpec> default_zoo(int cells, const HeadSpec& head, int resolution = 32) {
  auto widths = [&](std::vector<int> base) {
    std::vector<int> w;
    for (int j = 0; j < cells; ++j) w.push_back(j < static_cast<int>(base.size()) ? base[static_cast<size_t>(j)] : base.back() * (1 << (j - static_cast<int>(base.size()) + 1)));
    return w;
  };
  return {
      make_plain_arch("vgg-a", widths({8, 16, 32, 64, 128}), 1, head, 3, resolution),
      make_plain_arch("vgg-b", widths({12, 24, 48, 96, 192}), 2, head, 3, resolution),
      make_residual_arch("res-a", widths({8, 16, 32, 64, 128}), 1, head, 3, resolution),
      make_residual_arch("res-b", widths({16, 32, 48, 96, 192}), 1, head, 3, resolution),
  };
}

/// "plain 8,16,32 depth=1" -> ArchSpec. Used by the config file.
inline ArchSpec parse_arch(const std::string& name, const std::string& text, const HeadSpec& head, int resolution = 32) {
  std::istringstream in(text);
  std::string family, widths_text, tok;
  if (!(in >> family >> widths_text)) throw std::invalid_argument("arch '" + name + "': expected '<family> <w1,...,wc> [depth=D]'");
  int depth = 1;
  while (in >> tok) {
    if (tok.rfind("depth=", 0) == 0) depth = std::stoi(tok.substr(6));
    else throw std::invalid_argument("arch '" + name + "': unknown token '" + tok + "'");
  }
  if (depth < 1) throw std::invalid_argument("arch '" + name + "': depth must be >= 1");
  std::vector<int> widths;
  std::stringstream ws(widths_text);
  while (std::getline(ws, tok, ',')) widths.push_back(std::stoi(tok));
  if (family == "plain") return make_plain_arch(name, widths, depth, head, 3, resolution);
  if (family == "residual") return make_residual_arch(name, widths, depth, head, 3, resolution);
  throw std::invalid_argument("arch '" + name + "': family must be plain or residual");
}

}  // namespace modulenet
