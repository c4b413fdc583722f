#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "modulenet/dataset.hpp"
#include "modulenet/network.hpp"

namespace modulenet {

struct TrainOptions {
  int epochs = 10;
  int batch_size = 32;
  SgdConfig sgd;
  Mode cell_mode = Mode::train;
  int cutout_length = 0;
  bool flip = false;
  uint64_t seed = 0;
  bool measure_val = true;
  bool cosine = false;  // per-epoch lr = sgd.lr * (1 + cos(pi * epoch / epochs)) / 2
};

struct EpochMetrics {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochMetrics> epochs;
  bool finite = true;

  std::vector<double> losses() const {
    std::vector<double> out;
    for (const auto& e : epochs) out.push_back(e.train_loss);
    return out;
  }
};

inline int argmax_row(const Tensor& logits, int row) {
  const int K = logits.dim(1);
  const float* p = logits.data() + static_cast<size_t>(row) * K;
  return static_cast<int>(std::max_element(p, p + K) - p);
}

namespace detail {

/// Eval-mode outputs of stages [0, end) for idx, computed in chunks. Row order follows idx.
inline Tensor gather_features(Network& net, const Dataset& ds, std::span<const int> idx, int end, int chunk = 100) {
  Tensor out;
  size_t per = 0;
  for (size_t s = 0; s < idx.size(); s += static_cast<size_t>(chunk)) {
    auto part = idx.subspan(s, std::min<size_t>(static_cast<size_t>(chunk), idx.size() - s));
    Tensor f = net.forward_stages(ds.batch(part), 0, end, Mode::eval);
    if (out.empty()) {
      auto dims = f.dims();
      dims[0] = static_cast<int>(idx.size());
      out = Tensor(dims);
      per = f.size() / static_cast<size_t>(f.dim(0));
    }
    std::copy(f.data(), f.data() + f.size(), out.data() + s * per);
  }
  net.clear_saved();
  return out;
}

inline Tensor rows(const Tensor& t, std::span<const int> r) {
  auto dims = t.dims();
  const size_t per = t.size() / static_cast<size_t>(dims[0]);
  dims[0] = static_cast<int>(r.size());
  Tensor out(dims);
  for (size_t i = 0; i < r.size(); ++i) {
    std::copy(t.data() + static_cast<size_t>(r[i]) * per, t.data() + static_cast<size_t>(r[i] + 1) * per,
              out.data() + i * per);
  }
  return out;
}

}  // namespace detail

/// Eval-mode classification accuracy over the samples in idx.
inline double accuracy(Network& net, const Dataset& ds, std::span<const int> idx, int chunk = 100) {
  if (idx.empty()) return 0.0;
  size_t correct = 0;
  for (size_t s = 0; s < idx.size(); s += static_cast<size_t>(chunk)) {
    auto part = idx.subspan(s, std::min<size_t>(static_cast<size_t>(chunk), idx.size() - s));
    Tensor logits = net.forward(ds.batch(part), Mode::eval);
    for (size_t i = 0; i < part.size(); ++i) {
      if (argmax_row(logits, static_cast<int>(i)) == ds.labels[static_cast<size_t>(part[i])]) ++correct;
    }
  }
  net.clear_saved();
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

/// Mini-batch training on ds.train. When cells run in eval mode without augmentation, the
/// output of the frozen leading stages is computed once and reused every epoch; batch order
/// and updates are the same either way.
inline TrainHistory train_network(Network& net, const Dataset& ds, const TrainOptions& opt) {
  TrainHistory hist;
  if (opt.epochs <= 0) return hist;
  Rng rng(opt.seed);
  std::vector<int> order(ds.train.size());
  std::iota(order.begin(), order.end(), 0);

  const bool augment = opt.cutout_length > 0 || opt.flip;
  const int frozen = net.first_trainable_stage();
  const bool cached = !augment && opt.cell_mode == Mode::eval && frozen > 0;
  Tensor feats;
  if (cached) feats = detail::gather_features(net, ds, ds.train, frozen);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    SgdConfig sgd = opt.sgd;
    if (opt.cosine) sgd.lr = static_cast<float>(opt.sgd.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / opt.epochs)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    size_t seen = 0;
    for (size_t s = 0; s < order.size(); s += static_cast<size_t>(opt.batch_size)) {
      std::span<const int> pos(order.data() + s, std::min<size_t>(static_cast<size_t>(opt.batch_size), order.size() - s));
      std::vector<int> idx(pos.size());
      for (size_t i = 0; i < pos.size(); ++i) idx[i] = ds.train[static_cast<size_t>(pos[i])];
      Tensor logits;
      if (cached) {
        Tensor h = net.forward_stages(detail::rows(feats, pos), frozen, net.stage_count(), opt.cell_mode);
        logits = net.forward_head(h);
      } else {
        Tensor x = ds.batch(idx);
        if (opt.flip) random_flip(x, rng);
        if (opt.cutout_length > 0) x = cutout(x, opt.cutout_length, rng);
        logits = net.forward(x, opt.cell_mode);
      }
      auto labels = ds.batch_labels(idx);
      auto lr = cross_entropy_with_grad(logits, labels);
      if (!std::isfinite(lr.loss)) {
        hist.finite = false;
        net.clear_saved();
        hist.epochs.push_back({std::numeric_limits<double>::quiet_NaN(), 0.0});
        return hist;
      }
      net.zero_grad();
      net.backward(lr.grad);
      net.step(sgd);
      loss_sum += static_cast<double>(lr.loss) * static_cast<double>(pos.size());
      seen += pos.size();
    }
    net.clear_saved();
    EpochMetrics m;
    m.train_loss = loss_sum / static_cast<double>(seen);
    if (!std::isfinite(m.train_loss)) hist.finite = false;
    if (opt.measure_val) m.val_accuracy = accuracy(net, ds, ds.val);
    hist.epochs.push_back(m);
    if (!hist.finite) break;
  }
  return hist;
}

}  // namespace modulenet
