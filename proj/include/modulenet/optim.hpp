#pragma once

#include "modulenet/layers.hpp"

namespace modulenet {

struct SgdConfig {
  float lr = 0.05f;
  float momentum = 0.9f;
  float weight_decay = 0.0f;
};

/// Momentum SGD: v = momentum * v + g (+ wd * p); p -= lr * v. Frozen parameters and
/// running-statistic buffers are never touched.
inline void sgd_step(Param& p, const SgdConfig& cfg) {
  if (p.frozen || p.buffer) return;
  if (p.velocity.empty()) p.velocity = Tensor(p.value.dims(), 0.0f);
  for (size_t i = 0; i < p.value.size(); ++i) {
    float g = p.grad[i] + cfg.weight_decay * p.value[i];
    p.velocity[i] = cfg.momentum * p.velocity[i] + g;
    p.value[i] -= cfg.lr * p.velocity[i];
  }
}

inline void sgd_step(ParamSet& params, float lr, float momentum) {
  SgdConfig cfg{lr, momentum, 0.0f};
  for (auto& [_, p] : params) sgd_step(p, cfg);
}

}  // namespace modulenet
