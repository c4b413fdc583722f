#pragma once

#include <functional>
#include <string>
#include <vector>

#include "modulenet/adapter.hpp"
#include "modulenet/layers.hpp"
#include "modulenet/optim.hpp"

namespace modulenet {

/// Cells joined by adapters, followed by a fully connected classifier head.
/// adapters[j] connects cells[j] to cells[j + 1].
class Network {
 public:
  std::vector<std::vector<Layer>> cells;
  std::vector<Adapter> adapters;
  std::vector<Layer> head;
  int input_channels = 3;
  int input_resolution = 32;

  int stage_count() const { return static_cast<int>(2 * cells.size()); }

  /// Runs stages [begin, end) on h. Stages are cell0=0, adapter0=1, cell1=2, ..., head=2c.
  Tensor forward_stages(const Tensor& x, int begin, int end, Mode cell_mode) {
    Tensor h = x;
    for (int stage = begin; stage < end; ++stage) {
      const auto j = static_cast<size_t>(stage / 2);
      if (stage % 2 == 0) h = forward_sequence(cells[j], h, cell_mode);
      else if (j < adapters.size()) h = adapters[j].forward(h, cell_mode);
    }
    return h;
  }

  /// Output of the last cell.
  Tensor features(const Tensor& x, Mode cell_mode) { return forward_stages(x, 0, stage_count(), cell_mode); }

  Tensor forward_head(const Tensor& feats) { return forward_sequence(head, feats, Mode::train); }

  Tensor forward(const Tensor& x, Mode cell_mode) { return forward_head(features(x, cell_mode)); }

  /// Backpropagates from the logits. Stops below the earliest trainable part, so frozen
  /// prefixes cost nothing.
  void backward(const Tensor& grad_logits) {
    const int stop = first_trainable_stage();
    Tensor g = grad_logits;
    const int head_stage = static_cast<int>(2 * cells.size());
    g = backward_sequence(head, g, stop < head_stage);
    for (int stage = head_stage - 1; stage >= stop; --stage) {
      const bool need_input = stage > stop;
      if (stage % 2 == 1) {
        if (static_cast<size_t>(stage / 2) >= adapters.size()) continue;
        g = adapters[static_cast<size_t>(stage / 2)].backward(g, need_input);
      } else {
        g = backward_sequence(cells[static_cast<size_t>(stage / 2)], g, need_input);
      }
    }
  }

  void for_each_param(const std::function<void(const std::string&, Param&)>& fn) {
    for (size_t j = 0; j < cells.size(); ++j) {
      for (size_t i = 0; i < cells[j].size(); ++i) {
        cells[j][i].for_each_param("cell" + std::to_string(j + 1) + "." + std::to_string(i) + ".", fn);
      }
    }
    for (size_t j = 0; j < adapters.size(); ++j) {
      if (adapters[j].parametric()) adapters[j].conv.for_each_param("adapter" + std::to_string(j + 1) + ".", fn);
    }
    for (size_t i = 0; i < head.size(); ++i) head[i].for_each_param("head." + std::to_string(i) + ".", fn);
  }

  void zero_grad() {
    for_each_param([](const std::string&, Param& p) {
      if (!p.buffer) p.grad.fill(0.0f);
    });
  }

  void step(const SgdConfig& cfg) {
    for_each_param([&](const std::string&, Param& p) { sgd_step(p, cfg); });
  }

  size_t trainable_parameter_count() {
    size_t n = 0;
    for_each_param([&](const std::string&, Param& p) {
      if (!p.buffer && !p.frozen) n += p.value.size();
    });
    return n;
  }

  void set_cells_frozen(bool frozen) {
    for (auto& cell : cells) {
      for (auto& l : cell) l.set_frozen(frozen);
    }
  }

  void set_all_frozen(bool frozen) {
    set_cells_frozen(frozen);
    for (auto& a : adapters) {
      if (a.parametric()) a.conv.set_frozen(frozen);
    }
    for (auto& l : head) l.set_frozen(frozen);
  }

  void clear_saved() {
    for (auto& cell : cells) {
      for (auto& l : cell) l.clear_saved();
    }
    for (auto& a : adapters) a.conv.clear_saved();
    for (auto& l : head) l.clear_saved();
  }

  std::vector<NamedTensor> export_params() {
    std::vector<NamedTensor> out;
    for_each_param([&](const std::string& name, Param& p) { out.push_back({name, p.value}); });
    return out;
  }

  /// Overwrites parameter values by name; every parameter must be present with a matching shape.
  void import_params(const std::vector<NamedTensor>& tensors, const std::string& origin) {
    size_t matched = 0;
    for_each_param([&](const std::string& name, Param& p) {
      for (const auto& t : tensors) {
        if (t.name != name) continue;
        if (t.tensor.dims() != p.value.dims()) {
          throw std::runtime_error(origin + ": parameter " + name + " has shape " + t.tensor.shape_string() +
                                   ", expected " + p.value.shape_string());
        }
        p.value = t.tensor;
        ++matched;
        return;
      }
      throw std::runtime_error(origin + ": missing parameter " + name);
    });
    if (matched != tensors.size()) throw std::runtime_error(origin + ": unexpected extra parameters");
  }

  // Everything before this stage is frozen.
  int first_trainable_stage() {
    const int c = static_cast<int>(cells.size());
    for (int stage = 0; stage < 2 * c; ++stage) {
      if (stage % 2 == 0) {
        for (auto& l : cells[static_cast<size_t>(stage / 2)]) {
          if (!l.all_frozen()) return stage;
        }
      } else if (stage / 2 < static_cast<int>(adapters.size())) {
        auto& a = adapters[static_cast<size_t>(stage / 2)];
        if (a.parametric() && !a.conv.all_frozen()) return stage;
      }
    }
    return 2 * c;
  }
};

}  // namespace modulenet
