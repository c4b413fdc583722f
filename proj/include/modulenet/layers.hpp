#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "modulenet/common.hpp"
#include "modulenet/tensor.hpp"

namespace modulenet {

enum class LayerKind { conv2d, batchnorm, relu, maxpool2d, avgpool2d, linear, residual_block };

/// BN behaviour. train_fixed_stats normalizes with batch statistics but leaves the running
/// statistics untouched.
enum class Mode { train, eval, train_fixed_stats };

inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.1f;

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::avgpool2d: return "avgpool2d";
    case LayerKind::linear: return "linear";
    case LayerKind::residual_block: return "residual";
  }
  return "?";
}

/// Hyperparameters of one layer. Fields outside a kind's schema stay zero.
///   conv2d:    in, out, kernel, stride, padding
///   batchnorm: in == out == channels
///   maxpool2d / avgpool2d: kernel, stride
///   linear:    in, out (features)
///   residual:  in, out, stride, projection (1x1 conv + BN shortcut)
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 0;
  int padding = 0;
  bool projection = false;
  bool trainable = true;

  static LayerSpec conv2d(int in, int out, int k, int s = 1, int p = 0) {
    return {LayerKind::conv2d, in, out, k, s, p, false, true};
  }
  static LayerSpec batchnorm(int ch) { return {LayerKind::batchnorm, ch, ch, 0, 0, 0, false, true}; }
  static LayerSpec relu() { return {}; }
  static LayerSpec maxpool2d(int k, int s) { return {LayerKind::maxpool2d, 0, 0, k, s, 0, false, true}; }
  static LayerSpec avgpool2d(int k, int s) { return {LayerKind::avgpool2d, 0, 0, k, s, 0, false, true}; }
  static LayerSpec linear(int in, int out) { return {LayerKind::linear, in, out, 0, 0, 0, false, true}; }
  static LayerSpec residual_block(int in, int out, int stride, bool projection) {
    return {LayerKind::residual_block, in, out, 0, stride, 0, projection, true};
  }

  bool operator==(const LayerSpec&) const = default;

  /// Spatial downscale factor this layer applies (1 for non-reducing layers).
  int reduction() const {
    switch (kind) {
      case LayerKind::conv2d:
      case LayerKind::maxpool2d:
      case LayerKind::avgpool2d:
      case LayerKind::residual_block: return stride;
      default: return 1;
    }
  }
};

inline std::string to_string(const LayerSpec& s) {
  std::ostringstream o;
  o << kind_name(s.kind);
  switch (s.kind) {
    case LayerKind::conv2d:
      o << " in=" << s.in_channels << " out=" << s.out_channels << " k=" << s.kernel << " s=" << s.stride
        << " p=" << s.padding;
      break;
    case LayerKind::batchnorm: o << " c=" << s.in_channels; break;
    case LayerKind::maxpool2d:
    case LayerKind::avgpool2d: o << " k=" << s.kernel << " s=" << s.stride; break;
    case LayerKind::linear: o << " in=" << s.in_channels << " out=" << s.out_channels; break;
    case LayerKind::residual_block:
      o << " in=" << s.in_channels << " out=" << s.out_channels << " s=" << s.stride
        << " proj=" << (s.projection ? 1 : 0);
      break;
    case LayerKind::relu: break;
  }
  return o.str();
}

/// Rejects specs whose hyperparameters do not match the kind's schema.
inline void check_spec(const LayerSpec& s) {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("layer spec '" + to_string(s) + "': " + why);
  };
  auto require_zero = [&](std::initializer_list<int> vals) {
    for (int v : vals) {
      if (v != 0) fail("hyperparameter outside the kind's schema is set");
    }
  };
  switch (s.kind) {
    case LayerKind::conv2d:
      if (s.in_channels < 1 || s.out_channels < 1) fail("channels must be >= 1");
      if (s.kernel < 1 || s.stride < 1 || s.padding < 0) fail("kernel/stride must be >= 1, padding >= 0");
      if (s.projection) fail("projection only applies to residual blocks");
      break;
    case LayerKind::batchnorm:
      if (s.in_channels < 1 || s.in_channels != s.out_channels) fail("batchnorm needs one channel count >= 1");
      require_zero({s.kernel, s.stride, s.padding, s.projection});
      break;
    case LayerKind::relu: require_zero({s.in_channels, s.out_channels, s.kernel, s.stride, s.padding, s.projection}); break;
    case LayerKind::maxpool2d:
    case LayerKind::avgpool2d:
      if (s.kernel < 1 || s.stride < 1) fail("pool kernel and stride must be >= 1");
      require_zero({s.in_channels, s.out_channels, s.padding, s.projection});
      break;
    case LayerKind::linear:
      if (s.in_channels < 1 || s.out_channels < 1) fail("features must be >= 1");
      require_zero({s.kernel, s.stride, s.padding, s.projection});
      break;
    case LayerKind::residual_block:
      if (s.in_channels < 1 || s.out_channels < 1 || s.stride < 1) fail("channels and stride must be >= 1");
      require_zero({s.kernel, s.padding});
      if (!s.projection && (s.in_channels != s.out_channels || s.stride != 1)) {
        fail("identity shortcut needs in == out channels and stride 1");
      }
      break;
  }
}

inline LayerSpec parse_layer_spec(const std::string& text) {
  std::istringstream in(text);
  std::string kind;
  in >> kind;
  LayerSpec s;
  if (kind == "conv2d") s.kind = LayerKind::conv2d;
  else if (kind == "batchnorm") s.kind = LayerKind::batchnorm;
  else if (kind == "relu") s.kind = LayerKind::relu;
  else if (kind == "maxpool2d") s.kind = LayerKind::maxpool2d;
  else if (kind == "avgpool2d") s.kind = LayerKind::avgpool2d;
  else if (kind == "linear") s.kind = LayerKind::linear;
  else if (kind == "residual") s.kind = LayerKind::residual_block;
  else throw std::invalid_argument("unknown layer kind '" + kind + "'");
  std::string tok;
  while (in >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("bad layer field '" + tok + "'");
    std::string key = tok.substr(0, eq);
    int v = std::stoi(tok.substr(eq + 1));
    if (key == "in") s.in_channels = v;
    else if (key == "out") s.out_channels = v;
    else if (key == "c") s.in_channels = s.out_channels = v;
    else if (key == "k") s.kernel = v;
    else if (key == "s") s.stride = v;
    else if (key == "p") s.padding = v;
    else if (key == "proj") s.projection = v != 0;
    else throw std::invalid_argument("unknown layer field '" + key + "'");
  }
  check_spec(s);
  return s;
}

// ---------------------------------------------------------------------------
// Parameters

struct Param {
  Tensor value;
  Tensor grad;      // same shape as value for every optimizable parameter
  Tensor velocity;  // momentum buffer, allocated lazily by the optimizer
  bool frozen = false;
  bool buffer = false;  // running statistics: updated by forward passes, never by the optimizer
};

/// Ordered name -> Param map. Order is insertion order so serialization is stable.
class ParamSet {
 public:
  Param& add(const std::string& name, Tensor value, bool buffer = false) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
    Param p;
    p.buffer = buffer;
    if (!buffer) p.grad = Tensor(value.dims(), 0.0f);
    p.value = std::move(value);
    entries_.emplace_back(name, std::move(p));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  Param& get(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw std::out_of_range("no parameter " + name);
  }
  const Param& get(const std::string& name) const { return const_cast<ParamSet*>(this)->get(name); }

  void set_frozen(bool frozen) {
    for (auto& [_, p] : entries_) p.frozen = frozen;
  }

  /// True when no optimizable parameter is trainable (empty sets count as frozen).
  bool all_frozen() const {
    for (const auto& [_, p] : entries_) {
      if (!p.buffer && !p.frozen) return false;
    }
    return true;
  }

  size_t trainable_count() const {
    size_t n = 0;
    for (const auto& [_, p] : entries_) {
      if (!p.buffer && !p.frozen) n += p.value.size();
    }
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : entries_) {
      if (!p.buffer) p.grad.fill(0.0f);
    }
  }

  size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  Param* find(const std::string& name) {
    for (auto& [n, p] : entries_) {
      if (n == name) return &p;
    }
    return nullptr;
  }
  const Param* find(const std::string& name) const { return const_cast<ParamSet*>(this)->find(name); }

  std::vector<std::pair<std::string, Param>> entries_;
};

// ---------------------------------------------------------------------------
// Raw kernels. All take and return (N, C, H, W) tensors except linear (N, F).

namespace detail {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline int out_extent(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

inline void im2col(const float* img, int C, int H, int W, int k, int s, int p, int Ho, int Wo, float* col) {
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + ((static_cast<size_t>(c) * k + ky) * k + kx) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * s - p + ky;
          if (iy < 0 || iy >= H) {
            std::fill(row + oy * Wo, row + (oy + 1) * Wo, 0.0f);
            continue;
          }
          const float* src = img + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * s - p + kx;
            row[oy * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

inline void col2im(const float* col, int C, int H, int W, int k, int s, int p, int Ho, int Wo, float* img) {
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col + ((static_cast<size_t>(c) * k + ky) * k + kx) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * s - p + ky;
          if (iy < 0 || iy >= H) continue;
          float* dst = img + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * s - p + kx;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(int k, int s, int p) { return k == 1 && s == 1 && p == 0; }

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, int stride, int pad) {
  if (x.rank() != 4 || weight.rank() != 4) throw std::invalid_argument("conv2d: expected rank-4 input and weight");
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int Co = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != C) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(C) + " channels, weight expects " +
                                std::to_string(weight.dim(1)));
  }
  if (H + 2 * pad < k || W + 2 * pad < k) {
    throw std::invalid_argument("conv2d: input " + x.shape_string() + " smaller than kernel " + std::to_string(k));
  }
  const int Ho = detail::out_extent(H, k, stride, pad), Wo = detail::out_extent(W, k, stride, pad);
  const int K = C * k * k, P = Ho * Wo;
  Tensor y({N, Co, Ho, Wo});
  FloatBuffer col;
  const bool pointwise = detail::is_pointwise(k, stride, pad);
  if (!pointwise) col.resize(static_cast<size_t>(K) * P);
  detail::ConstMatMap Wm(weight.data(), Co, K);
  for (int n = 0; n < N; ++n) {
    const float* img = x.data() + static_cast<size_t>(n) * C * H * W;
    const float* colp = img;
    if (!pointwise) {
      detail::im2col(img, C, H, W, k, stride, pad, Ho, Wo, col.data());
      colp = col.data();
    }
    detail::MatMap Y(y.data() + static_cast<size_t>(n) * Co * P, Co, P);
    Y.noalias() = Wm * detail::ConstMatMap(colp, K, P);
    if (bias) {
      for (int o = 0; o < Co; ++o) Y.row(o).array() += (*bias)[static_cast<size_t>(o)];
    }
  }
  return y;
}

/// Accumulates into gx/gw/gb when non-null.
inline void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& gy, int stride, int pad, Tensor* gx,
                            Tensor* gw, Tensor* gb) {
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int Co = weight.dim(0), k = weight.dim(2);
  const int Ho = gy.h(), Wo = gy.w();
  const int K = C * k * k, P = Ho * Wo;
  const bool pointwise = detail::is_pointwise(k, stride, pad);
  FloatBuffer col(pointwise ? 0 : static_cast<size_t>(K) * P);
  FloatBuffer gcol(static_cast<size_t>(K) * P);
  detail::ConstMatMap Wm(weight.data(), Co, K);
  for (int n = 0; n < N; ++n) {
    const float* img = x.data() + static_cast<size_t>(n) * C * H * W;
    detail::ConstMatMap G(gy.data() + static_cast<size_t>(n) * Co * P, Co, P);
    if (gw) {
      const float* colp = img;
      if (!pointwise) {
        detail::im2col(img, C, H, W, k, stride, pad, Ho, Wo, col.data());
        colp = col.data();
      }
      detail::MatMap GW(gw->data(), Co, K);
      GW.noalias() += G * detail::ConstMatMap(colp, K, P).transpose();
    }
    if (gb) {
      for (int o = 0; o < Co; ++o) (*gb)[static_cast<size_t>(o)] += G.row(o).sum();
    }
    if (gx) {
      float* gimg = gx->data() + static_cast<size_t>(n) * C * H * W;
      if (pointwise) {
        detail::MatMap GX(gimg, C, P);
        GX.noalias() += Wm.transpose() * G;
      } else {
        detail::MatMap GC(gcol.data(), K, P);
        GC.noalias() = Wm.transpose() * G;
        detail::col2im(gcol.data(), C, H, W, k, stride, pad, Ho, Wo, gimg);
      }
    }
  }
}

inline Tensor flatten_rows(const Tensor& x) {
  if (x.rank() == 2) return x;
  int feats = static_cast<int>(x.size() / static_cast<size_t>(x.dim(0)));
  return x.reshaped({x.dim(0), feats});
}

inline Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor xf = flatten_rows(x);
  const int N = xf.dim(0), F = xf.dim(1), O = weight.dim(0);
  if (weight.dim(1) != F) {
    throw std::invalid_argument("linear: input has " + std::to_string(F) + " features, weight expects " +
                                std::to_string(weight.dim(1)));
  }
  Tensor y({N, O});
  detail::MatMap Y(y.data(), N, O);
  Y.noalias() = detail::ConstMatMap(xf.data(), N, F) * detail::ConstMatMap(weight.data(), O, F).transpose();
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) Y(n, o) += bias[static_cast<size_t>(o)];
  }
  return y;
}

inline void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& gy, Tensor* gx, Tensor* gw,
                            Tensor* gb) {
  const int N = gy.dim(0), O = gy.dim(1), F = weight.dim(1);
  detail::ConstMatMap G(gy.data(), N, O);
  if (gw) {
    detail::MatMap(gw->data(), O, F).noalias() += G.transpose() * detail::ConstMatMap(x.data(), N, F);
  }
  if (gb) {
    for (int o = 0; o < O; ++o) (*gb)[static_cast<size_t>(o)] += G.col(o).sum();
  }
  if (gx) {
    detail::MatMap(gx->data(), N, F).noalias() += G * detail::ConstMatMap(weight.data(), O, F);
  }
}

inline Tensor pool_forward(const Tensor& x, int k, int s, bool max, std::vector<uint32_t>* argmax) {
  if (x.rank() != 4) throw std::invalid_argument("pool: expected rank-4 input");
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  if (H < k || W < k) throw std::invalid_argument("pool: input " + x.shape_string() + " smaller than kernel");
  const int Ho = (H - k) / s + 1, Wo = (W - k) / s + 1;
  Tensor y({N, C, Ho, Wo});
  if (argmax) argmax->assign(y.size(), 0);
  const float inv = 1.0f / static_cast<float>(k * k);
  size_t o = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox, ++o) {
          if (max) {
            float best = -std::numeric_limits<float>::infinity();
            size_t best_i = x.offset(n, c, oy * s, ox * s);
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                size_t i = x.offset(n, c, oy * s + ky, ox * s + kx);
                if (x[i] > best || std::isnan(x[i])) {  // NaN wins so divergence stays visible
                  best = x[i];
                  best_i = i;
                }
              }
            }
            y[o] = best;
            if (argmax) (*argmax)[o] = static_cast<uint32_t>(best_i);
          } else {
            float sum = 0.0f;
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) sum += x.at(n, c, oy * s + ky, ox * s + kx);
            }
            y[o] = sum * inv;
          }
        }
      }
    }
  }
  return y;
}

inline Tensor maxpool_backward(const std::vector<int>& in_dims, const std::vector<uint32_t>& argmax, const Tensor& gy) {
  Tensor gx(in_dims, 0.0f);
  for (size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
  return gx;
}

inline Tensor avgpool_backward(const std::vector<int>& in_dims, int k, int s, const Tensor& gy) {
  Tensor gx(in_dims, 0.0f);
  const float inv = 1.0f / static_cast<float>(k * k);
  for (int n = 0; n < gy.n(); ++n) {
    for (int c = 0; c < gy.c(); ++c) {
      for (int oy = 0; oy < gy.h(); ++oy) {
        for (int ox = 0; ox < gy.w(); ++ox) {
          float g = gy.at(n, c, oy, ox) * inv;
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) gx.at(n, c, oy * s + ky, ox * s + kx) += g;
          }
        }
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Layers

struct Saved {
  bool valid = false;
  Mode mode = Mode::eval;
  Tensor input;
  std::vector<int> in_dims;
  Tensor aux;  // bn: normalized input; relu/residual: pre-activation
  std::vector<float> inv_std;
  std::vector<uint32_t> argmax;
};

struct Layer {
  LayerSpec spec;
  ParamSet params;
  std::vector<Layer> main;      // residual: conv-bn-relu-conv-bn
  std::vector<Layer> shortcut;  // residual projection: conv1x1-bn (empty means identity)
  Saved saved;

  bool all_frozen() const {
    if (!params.all_frozen()) return false;
    for (const auto& l : main) {
      if (!l.all_frozen()) return false;
    }
    for (const auto& l : shortcut) {
      if (!l.all_frozen()) return false;
    }
    return true;
  }

  void set_frozen(bool frozen) {
    params.set_frozen(frozen);
    for (auto& l : main) l.set_frozen(frozen);
    for (auto& l : shortcut) l.set_frozen(frozen);
  }

  /// Visits every parameter with a dotted path relative to this layer.
  void for_each_param(const std::string& prefix, const std::function<void(const std::string&, Param&)>& fn) {
    for (auto& [name, p] : params) fn(prefix + name, p);
    for (size_t i = 0; i < main.size(); ++i) main[i].for_each_param(prefix + "main" + std::to_string(i) + ".", fn);
    for (size_t i = 0; i < shortcut.size(); ++i) {
      shortcut[i].for_each_param(prefix + "short" + std::to_string(i) + ".", fn);
    }
  }

  void clear_saved() {
    saved = Saved{};
    for (auto& l : main) l.clear_saved();
    for (auto& l : shortcut) l.clear_saved();
  }
};

inline Tensor uniform_fan_in(std::vector<int> dims, int fan_in, Rng& rng) {
  Tensor t(std::move(dims));
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline Layer make_layer(const LayerSpec& spec, Rng& rng) {
  check_spec(spec);
  Layer l;
  l.spec = spec;
  switch (spec.kind) {
    case LayerKind::conv2d: {
      int fan_in = spec.in_channels * spec.kernel * spec.kernel;
      l.params.add("weight", uniform_fan_in({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}, fan_in, rng));
      l.params.add("bias", Tensor({spec.out_channels}, 0.0f));
      break;
    }
    case LayerKind::linear:
      l.params.add("weight", uniform_fan_in({spec.out_channels, spec.in_channels}, spec.in_channels, rng));
      l.params.add("bias", Tensor({spec.out_channels}, 0.0f));
      break;
    case LayerKind::batchnorm:
      l.params.add("bn-gamma", Tensor({spec.in_channels}, 1.0f));
      l.params.add("bn-beta", Tensor({spec.in_channels}, 0.0f));
      l.params.add("bn-running-mean", Tensor({spec.in_channels}, 0.0f), true);
      l.params.add("bn-running-var", Tensor({spec.in_channels}, 1.0f), true);
      break;
    case LayerKind::residual_block: {
      const int in = spec.in_channels, out = spec.out_channels;
      l.main.push_back(make_layer(LayerSpec::conv2d(in, out, 3, spec.stride, 1), rng));
      l.main.push_back(make_layer(LayerSpec::batchnorm(out), rng));
      l.main.push_back(make_layer(LayerSpec::relu(), rng));
      l.main.push_back(make_layer(LayerSpec::conv2d(out, out, 3, 1, 1), rng));
      l.main.push_back(make_layer(LayerSpec::batchnorm(out), rng));
      if (spec.projection) {
        l.shortcut.push_back(make_layer(LayerSpec::conv2d(in, out, 1, spec.stride, 0), rng));
        l.shortcut.push_back(make_layer(LayerSpec::batchnorm(out), rng));
      }
      break;
    }
    case LayerKind::relu:
    case LayerKind::maxpool2d:
    case LayerKind::avgpool2d: break;
  }
  if (!spec.trainable) l.set_frozen(true);
  return l;
}

inline Tensor batchnorm_forward(Layer& l, const Tensor& x, Mode mode) {
  const int N = x.n(), C = x.c(), HW = x.h() * x.w();
  if (C != l.spec.in_channels) throw std::invalid_argument("batchnorm: channel mismatch " + x.shape_string());
  auto& gamma = l.params.get("bn-gamma").value;
  auto& beta = l.params.get("bn-beta").value;
  auto& rmean = l.params.get("bn-running-mean").value;
  auto& rvar = l.params.get("bn-running-var").value;
  Tensor y(x.dims());
  Tensor xhat(x.dims());
  std::vector<float> inv_std(static_cast<size_t>(C));
  const double M = static_cast<double>(N) * HW;
  for (int c = 0; c < C; ++c) {
    float mean, var;
    if (mode == Mode::eval) {
      mean = rmean[c];
      var = rvar[c];
    } else {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = x.data() + x.offset(n, c, 0, 0);
        for (int i = 0; i < HW; ++i) s += p[i];
      }
      double m = s / M;
      double ss = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = x.data() + x.offset(n, c, 0, 0);
        for (int i = 0; i < HW; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      mean = static_cast<float>(m);
      var = static_cast<float>(ss / M);
      if (mode == Mode::train) {
        float unbiased = M > 1 ? static_cast<float>(ss / (M - 1)) : var;
        rmean[c] = (1.0f - kBatchNormMomentum) * rmean[c] + kBatchNormMomentum * mean;
        rvar[c] = (1.0f - kBatchNormMomentum) * rvar[c] + kBatchNormMomentum * unbiased;
      }
    }
    const float is = 1.0f / std::sqrt(var + kBatchNormEps);
    inv_std[static_cast<size_t>(c)] = is;
    for (int n = 0; n < N; ++n) {
      size_t base = x.offset(n, c, 0, 0);
      for (int i = 0; i < HW; ++i) {
        float xh = (x[base + i] - mean) * is;
        xhat[base + i] = xh;
        y[base + i] = gamma[c] * xh + beta[c];
      }
    }
  }
  l.saved.aux = std::move(xhat);
  l.saved.inv_std = std::move(inv_std);
  return y;
}

inline Tensor batchnorm_backward(Layer& l, const Tensor& gy, bool need_gx) {
  const Tensor& xhat = l.saved.aux;
  const int N = gy.n(), C = gy.c(), HW = gy.h() * gy.w();
  const double M = static_cast<double>(N) * HW;
  auto& gamma = l.params.get("bn-gamma");
  auto& beta = l.params.get("bn-beta");
  Tensor gx;
  if (need_gx) gx = Tensor(gy.dims(), 0.0f);
  for (int c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < N; ++n) {
      size_t base = gy.offset(n, c, 0, 0);
      for (int i = 0; i < HW; ++i) {
        sum_g += gy[base + i];
        sum_gx += static_cast<double>(gy[base + i]) * xhat[base + i];
      }
    }
    if (!gamma.frozen) gamma.grad[c] += static_cast<float>(sum_gx);
    if (!beta.frozen) beta.grad[c] += static_cast<float>(sum_g);
    if (!need_gx) continue;
    const float g = gamma.value[c], is = l.saved.inv_std[static_cast<size_t>(c)];
    for (int n = 0; n < N; ++n) {
      size_t base = gy.offset(n, c, 0, 0);
      for (int i = 0; i < HW; ++i) {
        if (l.saved.mode == Mode::eval) {
          gx[base + i] = gy[base + i] * g * is;
        } else {
          double v = M * gy[base + i] - sum_g - xhat[base + i] * sum_gx;
          gx[base + i] = static_cast<float>(g * is * v / M);
        }
      }
    }
  }
  return gx;
}

inline Tensor forward(Layer& l, const Tensor& x, Mode mode);
inline Tensor backward(Layer& l, const Tensor& gy, bool need_input_grad = true);

inline Tensor forward_sequence(std::vector<Layer>& layers, Tensor x, Mode mode) {
  for (auto& l : layers) x = forward(l, x, mode);
  return x;
}

inline Tensor backward_sequence(std::vector<Layer>& layers, Tensor g, bool need_input_grad) {
  for (size_t i = layers.size(); i-- > 0;) g = backward(layers[i], g, need_input_grad || i > 0);
  return g;
}

/// Forward pass that records what the matching backward needs.
inline Tensor forward(Layer& l, const Tensor& x, Mode mode) {
  l.saved.valid = true;
  l.saved.mode = mode;
  const auto& s = l.spec;
  switch (s.kind) {
    case LayerKind::conv2d: {
      if (x.rank() != 4 || x.c() != s.in_channels) {
        throw std::invalid_argument("conv2d: expected " + std::to_string(s.in_channels) + " input channels, got " +
                                    x.shape_string());
      }
      l.saved.input = x;
      return conv2d_forward(x, l.params.get("weight").value, &l.params.get("bias").value, s.stride, s.padding);
    }
    case LayerKind::linear:
      l.saved.input = flatten_rows(x);
      l.saved.in_dims = x.dims();
      return linear_forward(l.saved.input, l.params.get("weight").value, l.params.get("bias").value);
    case LayerKind::batchnorm: return batchnorm_forward(l, x, mode);
    case LayerKind::relu: {
      Tensor y = x;
      for (auto& v : y.values()) v = v < 0.0f ? 0.0f : v;  // NaN passes through
      l.saved.aux = x;
      return y;
    }
    case LayerKind::maxpool2d:
      l.saved.in_dims = x.dims();
      return pool_forward(x, s.kernel, s.stride, true, &l.saved.argmax);
    case LayerKind::avgpool2d:
      l.saved.in_dims = x.dims();
      return pool_forward(x, s.kernel, s.stride, false, nullptr);
    case LayerKind::residual_block: {
      if (x.rank() != 4 || x.c() != s.in_channels) {
        throw std::invalid_argument("residual: expected " + std::to_string(s.in_channels) + " input channels, got " +
                                    x.shape_string());
      }
      Tensor h = forward_sequence(l.main, x, mode);
      Tensor sc = l.shortcut.empty() ? x : forward_sequence(l.shortcut, x, mode);
      for (size_t i = 0; i < h.size(); ++i) h[i] += sc[i];
      l.saved.aux = h;
      for (auto& v : h.values()) v = v < 0.0f ? 0.0f : v;
      return h;
    }
  }
  throw std::logic_error("unreachable");
}

/// Backward pass. Parameter gradients accumulate for non-frozen parameters only.
inline Tensor backward(Layer& l, const Tensor& gy, bool need_input_grad) {
  if (!l.saved.valid) {
    throw std::logic_error(std::string("backward on ") + kind_name(l.spec.kind) + " without saved activations");
  }
  const auto& s = l.spec;
  switch (s.kind) {
    case LayerKind::conv2d: {
      auto& w = l.params.get("weight");
      auto& b = l.params.get("bias");
      Tensor gx;
      if (need_input_grad) gx = Tensor(l.saved.input.dims(), 0.0f);
      conv2d_backward(l.saved.input, w.value, gy, s.stride, s.padding, need_input_grad ? &gx : nullptr,
                      w.frozen ? nullptr : &w.grad, b.frozen ? nullptr : &b.grad);
      return gx;
    }
    case LayerKind::linear: {
      auto& w = l.params.get("weight");
      auto& b = l.params.get("bias");
      Tensor gx;
      if (need_input_grad) gx = Tensor(l.saved.input.dims(), 0.0f);
      linear_backward(l.saved.input, w.value, gy, need_input_grad ? &gx : nullptr, w.frozen ? nullptr : &w.grad,
                      b.frozen ? nullptr : &b.grad);
      if (need_input_grad) gx = gx.reshaped(l.saved.in_dims);
      return gx;
    }
    case LayerKind::batchnorm: return batchnorm_backward(l, gy, need_input_grad);
    case LayerKind::relu: {
      Tensor gx = gy;
      for (size_t i = 0; i < gx.size(); ++i) {
        if (!(l.saved.aux[i] > 0.0f)) gx[i] = 0.0f;
      }
      return gx;
    }
    case LayerKind::maxpool2d: return maxpool_backward(l.saved.in_dims, l.saved.argmax, gy);
    case LayerKind::avgpool2d: return avgpool_backward(l.saved.in_dims, s.kernel, s.stride, gy);
    case LayerKind::residual_block: {
      Tensor g = gy;
      for (size_t i = 0; i < g.size(); ++i) {
        if (!(l.saved.aux[i] > 0.0f)) g[i] = 0.0f;
      }
      Tensor gx = backward_sequence(l.main, g, need_input_grad);
      if (l.shortcut.empty()) {
        if (need_input_grad) {
          for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
        }
      } else {
        Tensor gs = backward_sequence(l.shortcut, g, need_input_grad);
        if (need_input_grad) {
          for (size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
        }
      }
      return gx;
    }
  }
  throw std::logic_error("unreachable");
}

/// Stateless convolution with a layer's parameters.
inline Tensor conv2d(const Tensor& input, const ParamSet& params, const LayerSpec& spec) {
  if (spec.kind != LayerKind::conv2d) throw std::invalid_argument("conv2d: spec is not a convolution");
  if (input.rank() != 4 || input.c() != spec.in_channels) {
    throw std::invalid_argument("conv2d: expected " + std::to_string(spec.in_channels) + " input channels, got " +
                                input.shape_string());
  }
  return conv2d_forward(input, params.get("weight").value, &params.get("bias").value, spec.stride, spec.padding);
}

// ---------------------------------------------------------------------------
// Loss

struct LossResult {
  float loss = 0.0f;
  Tensor grad;  // d loss / d logits, already divided by the batch size
};

inline LossResult cross_entropy_with_grad(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be (N, classes)");
  const int N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != N) throw std::invalid_argument("cross_entropy: label count mismatch");
  LossResult r;
  r.grad = Tensor(logits.dims());
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    int y = labels[static_cast<size_t>(n)];
    if (y < 0 || y >= K) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
    }
    const float* row = logits.data() + static_cast<size_t>(n) * K;
    float mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k] - mx));
    double log_z = std::log(z) + mx;
    total += log_z - row[y];
    for (int k = 0; k < K; ++k) {
      double p = std::exp(static_cast<double>(row[k]) - log_z);
      r.grad[static_cast<size_t>(n) * K + k] = static_cast<float>((p - (k == y ? 1.0 : 0.0)) / N);
    }
  }
  const double mean = total / N;
  r.loss = static_cast<float>(mean < 0.0 ? 0.0 : mean);  // rounding guard; NaN must survive
  return r;
}

inline float cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return cross_entropy_with_grad(logits, labels).loss;
}

}  // namespace modulenet
