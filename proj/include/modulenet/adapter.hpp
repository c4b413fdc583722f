#pragma once

#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "modulenet/layers.hpp"
#include "modulenet/tensor.hpp"

namespace modulenet {

enum class AdapterKind { identity, chp, chdp, ext_chp, ext_chdp, conv1x1_baseline };

inline const char* adapter_kind_name(AdapterKind k) {
  switch (k) {
    case AdapterKind::identity: return "identity";
    case AdapterKind::chp: return "chp";
    case AdapterKind::chdp: return "chdp";
    case AdapterKind::ext_chp: return "ext-chp";
    case AdapterKind::ext_chdp: return "ext-chdp";
    case AdapterKind::conv1x1_baseline: return "conv1x1-baseline";
  }
  return "?";
}

inline AdapterKind parse_adapter_kind(const std::string& s) {
  for (auto k : {AdapterKind::identity, AdapterKind::chp, AdapterKind::chdp, AdapterKind::ext_chp,
                 AdapterKind::ext_chdp, AdapterKind::conv1x1_baseline}) {
    if (s == adapter_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown adapter kind '" + s + "'");
}

/// Channel-count connection between two modules. eta and groups are only meaningful for
/// ext-chp (0 otherwise).
struct AdapterPlan {
  AdapterKind kind = AdapterKind::identity;
  int in_channels = 0;
  int out_channels = 0;
  int k = 1;
  int eta = 0;
  int groups = 0;

  bool operator==(const AdapterPlan&) const = default;

  bool parameter_free() const { return kind != AdapterKind::conv1x1_baseline; }
  /// Weight + bias of the 1x1 baseline; zero for every other kind.
  size_t trainable_parameters() const {
    return parameter_free() ? 0 : static_cast<size_t>(out_channels) * in_channels + out_channels;
  }
};

/// Text record "kind in out k eta groups".
inline std::string to_string(const AdapterPlan& p) {
  std::ostringstream o;
  o << adapter_kind_name(p.kind) << ' ' << p.in_channels << ' ' << p.out_channels << ' ' << p.k << ' ' << p.eta << ' '
    << p.groups;
  return o.str();
}

inline AdapterPlan parse_adapter_plan(const std::string& text) {
  std::istringstream in(text);
  std::string kind;
  AdapterPlan p;
  if (!(in >> kind >> p.in_channels >> p.out_channels >> p.k >> p.eta >> p.groups)) {
    throw std::invalid_argument("bad adapter record '" + text + "'");
  }
  p.kind = parse_adapter_kind(kind);
  return p;
}

/// Case order: equal -> out | in (chp) -> in | out (chdp) -> GCD rotation (in > out) or
/// duplicate-and-slice (in < out). The baseline flag overrides everything.
inline AdapterPlan plan_adapter(int in_channels, int out_channels, bool use_baseline = false) {
  if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("plan_adapter: channel counts must be >= 1");
  AdapterPlan p;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  if (use_baseline) {
    p.kind = AdapterKind::conv1x1_baseline;
  } else if (in_channels == out_channels) {
    p.kind = AdapterKind::identity;
  } else if (in_channels % out_channels == 0) {
    p.kind = AdapterKind::chp;
    p.k = in_channels / out_channels;
  } else if (out_channels % in_channels == 0) {
    p.kind = AdapterKind::chdp;
    p.k = out_channels / in_channels;
  } else if (in_channels > out_channels) {
    p.kind = AdapterKind::ext_chp;
    p.eta = std::gcd(in_channels, out_channels);
    p.k = in_channels / p.eta;
    p.groups = out_channels / p.eta;
  } else {
    p.kind = AdapterKind::ext_chdp;
    p.k = (out_channels + in_channels - 1) / in_channels;
  }
  return p;
}

namespace detail {

inline void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) throw std::invalid_argument(std::string(op) + ": expected (N, C, H, W), got " + x.shape_string());
}

/// Copies channel src_channel[l] of x into output channel l.
inline Tensor gather_channels(const Tensor& x, const std::vector<int>& src_channel) {
  const int N = x.n(), C = x.c(), HW = x.h() * x.w();
  const int Co = static_cast<int>(src_channel.size());
  Tensor y({N, Co, x.h(), x.w()});
  for (int n = 0; n < N; ++n) {
    for (int l = 0; l < Co; ++l) {
      const float* src = x.data() + (static_cast<size_t>(n) * C + src_channel[static_cast<size_t>(l)]) * HW;
      std::copy(src, src + HW, y.data() + (static_cast<size_t>(n) * Co + l) * HW);
    }
  }
  return y;
}

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  int total = 0;
  for (const auto& t : parts) total += t.c();
  const auto& f = parts.front();
  Tensor y({f.n(), total, f.h(), f.w()});
  const size_t HW = static_cast<size_t>(f.h()) * f.w();
  for (int n = 0; n < f.n(); ++n) {
    int off = 0;
    for (const auto& t : parts) {
      const float* src = t.data() + static_cast<size_t>(n) * t.c() * HW;
      std::copy(src, src + t.c() * HW, y.data() + (static_cast<size_t>(n) * total + off) * HW);
      off += t.c();
    }
  }
  return y;
}

}  // namespace detail

/// Channel average pooling with kernel and stride k.
inline Tensor chp(const Tensor& x, int k) {
  detail::require_rank4(x, "chp");
  if (k < 1 || x.c() % k != 0) {
    throw std::invalid_argument("chp: " + std::to_string(x.c()) + " channels not divisible by k=" + std::to_string(k));
  }
  const int N = x.n(), C = x.c(), Co = C / k, HW = x.h() * x.w();
  Tensor y({N, Co, x.h(), x.w()});
  const float inv = 1.0f / static_cast<float>(k);
  for (int n = 0; n < N; ++n) {
    for (int l = 0; l < Co; ++l) {
      float* dst = y.data() + (static_cast<size_t>(n) * Co + l) * HW;
      for (int m = 0; m < k; ++m) {
        const float* src = x.data() + (static_cast<size_t>(n) * C + k * l + m) * HW;
        for (int i = 0; i < HW; ++i) dst[i] += src[i];
      }
      for (int i = 0; i < HW; ++i) dst[i] *= inv;
    }
  }
  return y;
}

/// Channel duplication: output channel l is input channel l mod C, for l < C * k.
inline Tensor chdp(const Tensor& x, int k) {
  detail::require_rank4(x, "chdp");
  if (k < 1) throw std::invalid_argument("chdp: k must be >= 1");
  std::vector<int> src(static_cast<size_t>(x.c()) * k);
  for (size_t l = 0; l < src.size(); ++l) src[l] = static_cast<int>(l) % x.c();
  return detail::gather_channels(x, src);
}

/// Shifts the channel axis left by `shift`: result channel m is input channel (m + shift) mod C.
inline Tensor rotate_channels(const Tensor& x, int shift) {
  std::vector<int> src(static_cast<size_t>(x.c()));
  for (int m = 0; m < x.c(); ++m) src[static_cast<size_t>(m)] = (m + shift) % x.c();
  return detail::gather_channels(x, src);
}

inline Tensor ext_chp(const Tensor& x, const AdapterPlan& plan) {
  if (plan.kind != AdapterKind::ext_chp) throw std::invalid_argument("ext_chp: plan is " + to_string(plan));
  detail::require_rank4(x, "ext_chp");
  if (x.c() != plan.in_channels) throw std::invalid_argument("ext_chp: channel mismatch " + x.shape_string());
  std::vector<Tensor> parts;
  parts.reserve(static_cast<size_t>(plan.groups));
  for (int i = 0; i < plan.groups; ++i) parts.push_back(chp(rotate_channels(x, i), plan.k));
  return detail::concat_channels(parts);
}

inline Tensor ext_chdp(const Tensor& x, const AdapterPlan& plan) {
  if (plan.kind != AdapterKind::ext_chdp) throw std::invalid_argument("ext_chdp: plan is " + to_string(plan));
  detail::require_rank4(x, "ext_chdp");
  if (x.c() != plan.in_channels) throw std::invalid_argument("ext_chdp: channel mismatch " + x.shape_string());
  Tensor full = chdp(x, plan.k);
  std::vector<int> first(static_cast<size_t>(plan.out_channels));
  std::iota(first.begin(), first.end(), 0);
  return detail::gather_channels(full, first);
}

/// Runs a parameter-free plan. The baseline needs parameters; use conv1x1_baseline.
inline Tensor apply_adapter(const AdapterPlan& plan, const Tensor& x) {
  switch (plan.kind) {
    case AdapterKind::identity: return x;
    case AdapterKind::chp: return chp(x, plan.k);
    case AdapterKind::chdp: return chdp(x, plan.k);
    case AdapterKind::ext_chp: return ext_chp(x, plan);
    case AdapterKind::ext_chdp: return ext_chdp(x, plan);
    case AdapterKind::conv1x1_baseline: break;
  }
  throw std::invalid_argument("apply_adapter: conv1x1-baseline carries parameters");
}

/// Transpose of the fixed linear map of a parameter-free plan.
inline Tensor adapter_backward(const AdapterPlan& plan, const Tensor& gy) {
  detail::require_rank4(gy, "adapter_backward");
  if (gy.c() != plan.out_channels) throw std::invalid_argument("adapter_backward: gradient channel mismatch");
  const int N = gy.n(), C = plan.in_channels, Co = plan.out_channels, HW = gy.h() * gy.w();
  Tensor gx({N, C, gy.h(), gy.w()}, 0.0f);
  auto add = [&](int n, int src, int dst, float scale) {
    const float* g = gy.data() + (static_cast<size_t>(n) * Co + src) * HW;
    float* out = gx.data() + (static_cast<size_t>(n) * C + dst) * HW;
    for (int i = 0; i < HW; ++i) out[i] += scale * g[i];
  };
  for (int n = 0; n < N; ++n) {
    switch (plan.kind) {
      case AdapterKind::identity:
      case AdapterKind::chdp:
      case AdapterKind::ext_chdp:
        for (int l = 0; l < Co; ++l) add(n, l, l % C, 1.0f);
        break;
      case AdapterKind::chp: {
        const float inv = 1.0f / static_cast<float>(plan.k);
        for (int l = 0; l < Co; ++l) {
          for (int m = 0; m < plan.k; ++m) add(n, l, plan.k * l + m, inv);
        }
        break;
      }
      case AdapterKind::ext_chp: {
        const float inv = 1.0f / static_cast<float>(plan.k);
        for (int g = 0; g < plan.groups; ++g) {
          for (int l = 0; l < plan.eta; ++l) {
            for (int m = 0; m < plan.k; ++m) add(n, g * plan.eta + l, (g + plan.k * l + m) % C, inv);
          }
        }
        break;
      }
      case AdapterKind::conv1x1_baseline:
        throw std::invalid_argument("adapter_backward: conv1x1-baseline carries parameters");
    }
  }
  return gx;
}

/// Trainable 1x1 convolution used only by the adapter ablation.
inline Tensor conv1x1_baseline(const Tensor& x, const ParamSet& params) {
  const auto& w = params.get("weight").value;
  if (w.rank() != 4 || w.dim(2) != 1 || w.dim(3) != 1) throw std::invalid_argument("conv1x1_baseline: kernel must be (C_out, C, 1, 1)");
  detail::require_rank4(x, "conv1x1_baseline");
  if (x.c() != w.dim(1)) {
    throw std::invalid_argument("conv1x1_baseline: input has " + std::to_string(x.c()) + " channels, kernel expects " +
                                std::to_string(w.dim(1)));
  }
  const Tensor* bias = params.contains("bias") ? &params.get("bias").value : nullptr;
  return conv2d_forward(x, w, bias, 1, 0);
}

/// A planned connection as it sits inside an assembled network.
struct Adapter {
  AdapterPlan plan;
  Layer conv;  // populated only for conv1x1-baseline

  static Adapter make(const AdapterPlan& plan, Rng& rng) {
    Adapter a;
    a.plan = plan;
    if (plan.kind == AdapterKind::conv1x1_baseline) {
      a.conv = make_layer(LayerSpec::conv2d(plan.in_channels, plan.out_channels, 1, 1, 0), rng);
    }
    return a;
  }

  bool parametric() const { return plan.kind == AdapterKind::conv1x1_baseline; }

  Tensor forward(const Tensor& x, Mode mode) {
    if (parametric()) return modulenet::forward(conv, x, mode);
    return apply_adapter(plan, x);
  }

  Tensor backward(const Tensor& gy, bool need_input_grad) {
    if (parametric()) return modulenet::backward(conv, gy, need_input_grad);
    return need_input_grad ? adapter_backward(plan, gy) : Tensor{};
  }
};

}  // namespace modulenet
