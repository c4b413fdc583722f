#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "modulenet/common.hpp"
#include "modulenet/tensor.hpp"

namespace modulenet {

/// Images (N, C, H, W) plus labels and disjoint train/val/test index sets.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::vector<int> train, val, test;
  int num_classes = 0;
  std::vector<float> channel_mean;  // train-split statistics used for normalization
  std::vector<float> channel_std;

  int size() const { return static_cast<int>(labels.size()); }

  Tensor batch(std::span<const int> idx) const {
    const size_t per = images.size() / static_cast<size_t>(images.n());
    Tensor b({static_cast<int>(idx.size()), images.c(), images.h(), images.w()});
    for (size_t i = 0; i < idx.size(); ++i) {
      const float* src = images.data() + static_cast<size_t>(idx[i]) * per;
      std::copy(src, src + per, b.data() + i * per);
    }
    return b;
  }

  std::vector<int> batch_labels(std::span<const int> idx) const {
    std::vector<int> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = labels[static_cast<size_t>(idx[i])];
    return out;
  }
};

/// Per-channel zero-mean / unit-variance using statistics of the train split only.
inline void normalize_with_train_stats(Dataset& ds) {
  const int C = ds.images.c();
  const size_t HW = static_cast<size_t>(ds.images.h()) * ds.images.w();
  ds.channel_mean.assign(static_cast<size_t>(C), 0.0f);
  ds.channel_std.assign(static_cast<size_t>(C), 1.0f);
  for (int c = 0; c < C; ++c) {
    double s = 0.0, ss = 0.0;
    for (int i : ds.train) {
      const float* p = ds.images.data() + ds.images.offset(i, c, 0, 0);
      for (size_t k = 0; k < HW; ++k) s += p[k];
    }
    const double m = s / (static_cast<double>(ds.train.size()) * HW);
    for (int i : ds.train) {
      const float* p = ds.images.data() + ds.images.offset(i, c, 0, 0);
      for (size_t k = 0; k < HW; ++k) ss += (p[k] - m) * (p[k] - m);
    }
    double sd = std::sqrt(ss / (static_cast<double>(ds.train.size()) * HW));
    if (sd < 1e-12) sd = 1.0;
    ds.channel_mean[static_cast<size_t>(c)] = static_cast<float>(m);
    ds.channel_std[static_cast<size_t>(c)] = static_cast<float>(sd);
    for (int n = 0; n < ds.images.n(); ++n) {
      float* p = ds.images.data() + ds.images.offset(n, c, 0, 0);
      for (size_t k = 0; k < HW; ++k) p[k] = static_cast<float>((p[k] - m) / sd);
    }
  }
}

// ---------------------------------------------------------------------------
// CIFAR binary batches

/// Raw decoded records, pixel values in [0, 255].
struct CifarBatch {
  Tensor images;  // (N, 3, 32, 32)
  std::vector<int> labels;
  std::vector<int> coarse_labels;  // CIFAR-100 only
};

inline constexpr int kCifarPixels = 3072;

/// label_bytes is 1 for CIFAR-10 and 2 for CIFAR-100 (coarse, fine; fine is the label).
inline CifarBatch decode_cifar_batch(std::span<const uint8_t> bytes, const std::string& origin,
                                     int label_bytes = 1) {
  const size_t record = static_cast<size_t>(label_bytes) + kCifarPixels;
  if (bytes.empty()) throw FormatError(origin + ": empty file at offset 0");
  if (bytes.size() % record != 0) {
    size_t bad = bytes.size() - bytes.size() % record;
    throw FormatError(origin + ": truncated record (file size " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(record) + ") at offset " + std::to_string(bad));
  }
  const int N = static_cast<int>(bytes.size() / record);
  CifarBatch b;
  b.images = Tensor({N, 3, 32, 32});
  b.labels.resize(static_cast<size_t>(N));
  if (label_bytes == 2) b.coarse_labels.resize(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    const uint8_t* r = bytes.data() + static_cast<size_t>(n) * record;
    if (label_bytes == 2) b.coarse_labels[static_cast<size_t>(n)] = r[0];
    b.labels[static_cast<size_t>(n)] = r[label_bytes - 1];
    float* dst = b.images.data() + static_cast<size_t>(n) * kCifarPixels;
    for (int i = 0; i < kCifarPixels; ++i) dst[i] = static_cast<float>(r[label_bytes + i]);
  }
  return b;
}

inline std::vector<uint8_t> encode_cifar_batch(const CifarBatch& b, int label_bytes = 1) {
  std::vector<uint8_t> out;
  out.reserve(b.labels.size() * (static_cast<size_t>(label_bytes) + kCifarPixels));
  for (size_t n = 0; n < b.labels.size(); ++n) {
    if (label_bytes == 2) out.push_back(static_cast<uint8_t>(b.coarse_labels.empty() ? 0 : b.coarse_labels[n]));
    out.push_back(static_cast<uint8_t>(b.labels[n]));
    const float* src = b.images.data() + n * kCifarPixels;
    for (int i = 0; i < kCifarPixels; ++i) out.push_back(static_cast<uint8_t>(std::lround(src[i])));
  }
  return out;
}

struct CifarOptions {
  bool cifar100 = false;
  uint64_t split_seed = 0;
  int train_limit = 0;  // 0 keeps all 40000 train records
  int val_limit = 0;
  int test_limit = 0;
  bool strict_counts = true;  // require 10000 records per CIFAR-10 batch file
};

namespace detail {

inline std::vector<uint8_t> read_bytes(const std::filesystem::path& p) {
  std::string s = read_file_bytes(p.string());
  return {s.begin(), s.end()};
}

inline void append_batch(CifarBatch& dst, CifarBatch&& src) {
  if (dst.labels.empty()) {
    dst = std::move(src);
    return;
  }
  const int N = dst.images.n() + src.images.n();
  std::vector<float> data(dst.images.values().begin(), dst.images.values().end());
  data.insert(data.end(), src.images.values().begin(), src.images.values().end());
  dst.images = Tensor({N, 3, 32, 32}, std::move(data));
  dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.end());
  dst.coarse_labels.insert(dst.coarse_labels.end(), src.coarse_labels.begin(), src.coarse_labels.end());
}

}  // namespace detail

/// Loads the standard binary distribution from `dir`. The 50000 training records are split
/// 40000/10000 train/val by a seeded shuffle; the test file is the test split.
inline Dataset load_cifar10(const std::string& dir, const CifarOptions& opt = {}) {
  namespace fs = std::filesystem;
  const int label_bytes = opt.cifar100 ? 2 : 1;
  std::vector<fs::path> train_files;
  fs::path test_file;
  if (opt.cifar100) {
    train_files.push_back(fs::path(dir) / "train.bin");
    test_file = fs::path(dir) / "test.bin";
  } else {
    for (int i = 1; i <= 5; ++i) train_files.push_back(fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin"));
    test_file = fs::path(dir) / "test_batch.bin";
  }
  auto load = [&](const fs::path& p, int expected) {
    if (!fs::exists(p)) throw std::runtime_error("missing CIFAR file " + p.string());
    auto bytes = detail::read_bytes(p);
    auto batch = decode_cifar_batch(bytes, p.string(), label_bytes);
    if (opt.strict_counts && batch.images.n() != expected) {
      throw FormatError(p.string() + ": expected " + std::to_string(expected) + " records, found " +
                        std::to_string(batch.images.n()) + " at offset " + std::to_string(bytes.size()));
    }
    return batch;
  };
  CifarBatch all;
  for (const auto& f : train_files) detail::append_batch(all, load(f, opt.cifar100 ? 50000 : 10000));
  const int n_train_records = all.images.n();
  detail::append_batch(all, load(test_file, 10000));

  Dataset ds;
  ds.images = std::move(all.images);
  ds.labels = std::move(all.labels);
  ds.num_classes = opt.cifar100 ? 100 : 10;
  for (int y : ds.labels) {
    if (y < 0 || y >= ds.num_classes) throw FormatError(dir + ": label " + std::to_string(y) + " out of range");
  }
  std::vector<int> order(static_cast<size_t>(n_train_records));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(opt.split_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const int n_val = n_train_records / 5;
  ds.val.assign(order.begin(), order.begin() + n_val);
  ds.train.assign(order.begin() + n_val, order.end());
  for (int i = n_train_records; i < ds.size(); ++i) ds.test.push_back(i);
  if (opt.train_limit > 0 && opt.train_limit < static_cast<int>(ds.train.size())) ds.train.resize(static_cast<size_t>(opt.train_limit));
  if (opt.val_limit > 0 && opt.val_limit < static_cast<int>(ds.val.size())) ds.val.resize(static_cast<size_t>(opt.val_limit));
  if (opt.test_limit > 0 && opt.test_limit < static_cast<int>(ds.test.size())) ds.test.resize(static_cast<size_t>(opt.test_limit));
  normalize_with_train_stats(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic oriented-grating dataset

struct SynthOptions {
  int resolution = 32;
  float noise = 3.0f;          // per-pixel Gaussian sigma
  float phase_jitter = 1.0f;   // radians, uniform +-
  float amplitude_jitter = 0.3f;
};

/// Class k is a sinusoidal grating with its own orientation, frequency, phase and colour
/// mix, perturbed per sample by amplitude and phase jitter plus Gaussian noise. Splits are
/// stratified: per class 1/6 val, 1/6 test, the rest train.
inline Dataset synth_dataset(uint64_t seed, int num_classes, int samples_per_class, const SynthOptions& opt = {}) {
  if (num_classes < 2) throw std::invalid_argument("synth_dataset: need at least 2 classes");
  if (samples_per_class < 6) throw std::invalid_argument("synth_dataset: need at least 6 samples per class");
  const int R = opt.resolution, N = num_classes * samples_per_class;
  constexpr double pi = std::numbers::pi;
  Dataset ds;
  ds.num_classes = num_classes;
  ds.images = Tensor({N, 3, R, R});
  ds.labels.resize(static_cast<size_t>(N));
  Rng rng(seed);
  std::normal_distribution<float> noise(0.0f, opt.noise);
  std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
  for (int n = 0; n < N; ++n) {
    const int k = n % num_classes;
    ds.labels[static_cast<size_t>(n)] = k;
    const double theta = pi * k / num_classes;
    const double freq = 2.0 + (k % 3);
    const double phase = 2.0 * pi * k / num_classes + opt.phase_jitter * unit(rng);
    const double amp = 1.0 + opt.amplitude_jitter * unit(rng);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int ch = 0; ch < 3; ++ch) {
      const double colour = 0.6 + 0.4 * std::cos(2.0 * pi * (k + ch * num_classes / 3.0) / num_classes);
      for (int y = 0; y < R; ++y) {
        for (int x = 0; x < R; ++x) {
          double v = amp * colour * std::sin(2.0 * pi * freq * (x * ct + y * st) / R + phase);
          ds.images.at(n, ch, y, x) = static_cast<float>(v) + noise(rng);
        }
      }
    }
  }
  for (int k = 0; k < num_classes; ++k) {
    std::vector<int> members;
    for (int n = k; n < N; n += num_classes) members.push_back(n);
    std::shuffle(members.begin(), members.end(), rng);
    const size_t held = static_cast<size_t>(samples_per_class / 6);
    ds.val.insert(ds.val.end(), members.begin(), members.begin() + static_cast<long>(held));
    ds.test.insert(ds.test.end(), members.begin() + static_cast<long>(held), members.begin() + static_cast<long>(2 * held));
    ds.train.insert(ds.train.end(), members.begin() + static_cast<long>(2 * held), members.end());
  }
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.val.begin(), ds.val.end());
  std::sort(ds.test.begin(), ds.test.end());
  normalize_with_train_stats(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentation

/// Zeroes a length x length square centred uniformly at random, clipped at the borders.
/// Works on (C, H, W) images or on each sample of an (N, C, H, W) batch.
inline Tensor cutout(const Tensor& image, int length, Rng& rng) {
  if (length < 0) throw std::invalid_argument("cutout: length must be >= 0");
  Tensor out = image;
  if (length == 0) return out;
  const int rank = image.rank();
  if (rank != 3 && rank != 4) throw std::invalid_argument("cutout: expected (C, H, W) or (N, C, H, W)");
  const int N = rank == 4 ? image.dim(0) : 1;
  const int C = image.dim(rank - 3), H = image.dim(rank - 2), W = image.dim(rank - 1);
  std::uniform_int_distribution<int> ry(0, H - 1), rx(0, W - 1);
  for (int n = 0; n < N; ++n) {
    const int cy = ry(rng), cx = rx(rng);
    const int y0 = std::max(0, cy - length / 2), y1 = std::min(H, cy - length / 2 + length);
    const int x0 = std::max(0, cx - length / 2), x1 = std::min(W, cx - length / 2 + length);
    for (int c = 0; c < C; ++c) {
      float* plane = out.data() + (static_cast<size_t>(n) * C + c) * H * W;
      for (int y = y0; y < y1; ++y) std::fill(plane + y * W + x0, plane + y * W + x1, 0.0f);
    }
  }
  return out;
}

/// Mirrors each sample left-right with probability 1/2.
inline void random_flip(Tensor& batch, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  const int W = batch.w();
  for (int n = 0; n < batch.n(); ++n) {
    if (!coin(rng)) continue;
    for (int c = 0; c < batch.c(); ++c) {
      for (int y = 0; y < batch.h(); ++y) {
        float* row = batch.data() + batch.offset(n, c, y, 0);
        std::reverse(row, row + W);
      }
    }
  }
}

}  // namespace modulenet
