#include "gradattn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "gradattn/errors.hpp"

namespace gradattn {

void Dataset::validate() const {
  if (images.rank() != 4) {
    throw std::invalid_argument("dataset: images must be [N,C,H,W], got " +
                                shape_str(images.shape()));
  }
  if (static_cast<int64_t>(labels.size()) != images.dim(0)) {
    throw std::invalid_argument("dataset: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(images.dim(0)) + " images");
  }
  if (num_classes < 1) throw std::invalid_argument("dataset: num_classes must be >= 1");
  for (int l : labels) {
    if (l < 0 || l >= num_classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(l) + " outside [0," +
                                  std::to_string(num_classes) + ")");
    }
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("dataset: pixel value " + std::to_string(v) +
                                  " outside [0,1]");
    }
  }
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  f.seekg(0, std::ios::end);
  const std::streamoff len = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<unsigned char> buf(static_cast<size_t>(len));
  if (len > 0 && !f.read(reinterpret_cast<char*>(buf.data()), len)) {
    throw IoError("failed to read '" + path + "'");
  }
  return buf;
}

uint32_t read_be32(const std::vector<unsigned char>& b, size_t off, const std::string& path) {
  if (off + 4 > b.size()) throw IoError("'" + path + "' is truncated");
  return (static_cast<uint32_t>(b[off]) << 24) | (static_cast<uint32_t>(b[off + 1]) << 16) |
         (static_cast<uint32_t>(b[off + 2]) << 8) | static_cast<uint32_t>(b[off + 3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto ib = read_file(images_path);
  const auto lb = read_file(labels_path);

  if (read_be32(ib, 0, images_path) != 0x00000803u) {
    throw IoError("'" + images_path + "' is not an IDX image file (bad magic)");
  }
  if (read_be32(lb, 0, labels_path) != 0x00000801u) {
    throw IoError("'" + labels_path + "' is not an IDX label file (bad magic)");
  }
  const uint32_t n_img = read_be32(ib, 4, images_path);
  const uint32_t rows = read_be32(ib, 8, images_path);
  const uint32_t cols = read_be32(ib, 12, images_path);
  const uint32_t n_lab = read_be32(lb, 4, labels_path);
  if (n_img != n_lab) {
    throw IoError("IDX pair mismatch: " + std::to_string(n_img) + " images vs " +
                  std::to_string(n_lab) + " labels");
  }
  const size_t need_img = 16 + static_cast<size_t>(n_img) * rows * cols;
  const size_t need_lab = 8 + static_cast<size_t>(n_lab);
  if (ib.size() < need_img) throw IoError("'" + images_path + "' is truncated");
  if (lb.size() < need_lab) throw IoError("'" + labels_path + "' is truncated");

  std::vector<double> pixels(static_cast<size_t>(n_img) * rows * cols);
  for (size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<double>(ib[16 + i]) / 255.0;
  }
  Dataset ds;
  ds.images = Tensor::from_data(
      {static_cast<int64_t>(n_img), 1, static_cast<int64_t>(rows), static_cast<int64_t>(cols)},
      std::move(pixels));
  ds.labels.resize(n_lab);
  int max_label = 0;
  for (uint32_t i = 0; i < n_lab; ++i) {
    ds.labels[i] = static_cast<int>(lb[8 + i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = std::max(10, max_label + 1);
  ds.name = "idx";
  ds.validate();
  return ds;
}

Dataset load_cifar_bin(const std::vector<std::string>& paths) {
  if (paths.empty()) throw std::invalid_argument("load_cifar_bin: no paths given");
  constexpr size_t kRecord = 3073;  // label + 3*32*32
  std::vector<double> pixels;
  std::vector<int> labels;
  for (const auto& path : paths) {
    const auto buf = read_file(path);
    if (buf.empty() || buf.size() % kRecord != 0) {
      throw IoError("'" + path + "' length " + std::to_string(buf.size()) +
                    " is not a multiple of " + std::to_string(kRecord));
    }
    const size_t n = buf.size() / kRecord;
    pixels.reserve(pixels.size() + n * 3072);
    for (size_t r = 0; r < n; ++r) {
      const unsigned char* rec = buf.data() + r * kRecord;
      labels.push_back(static_cast<int>(rec[0]));
      for (size_t i = 0; i < 3072; ++i) {
        pixels.push_back(static_cast<double>(rec[1 + i]) / 255.0);
      }
    }
  }
  Dataset ds;
  ds.images = Tensor::from_data({static_cast<int64_t>(labels.size()), 3, 32, 32},
                                std::move(pixels));
  ds.labels = std::move(labels);
  ds.num_classes = 10;
  ds.name = "cifar10";
  ds.validate();
  return ds;
}

Dataset synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.classes < 1 || spec.per_class < 1) {
    throw std::invalid_argument("synthetic_dataset: classes and per_class must be >= 1");
  }
  if (spec.height < 4 || spec.width < 4) {
    throw std::invalid_argument("synthetic_dataset: minimum size is 4x4");
  }
  Rng rng(spec.seed);
  const int64_t H = spec.height, W = spec.width;
  const int64_t N = static_cast<int64_t>(spec.classes) * spec.per_class;
  std::vector<double> pixels(static_cast<size_t>(N * H * W));
  std::vector<int> labels(static_cast<size_t>(N));

  const double r0 = 0.28 * static_cast<double>(std::min(H, W));
  const double sigma = static_cast<double>(std::min(H, W)) / 6.0;
  const double two_pi = 6.283185307179586;
  int64_t s = 0;
  for (int k = 0; k < spec.classes; ++k) {
    // Each class owns one blob position on a ring around the image center.
    const double angle = two_pi * static_cast<double>(k) / static_cast<double>(spec.classes);
    const double base_cy = 0.5 * static_cast<double>(H - 1) + r0 * std::sin(angle);
    const double base_cx = 0.5 * static_cast<double>(W - 1) + r0 * std::cos(angle);
    for (int i = 0; i < spec.per_class; ++i, ++s) {
      labels[static_cast<size_t>(s)] = k;
      const double cy = base_cy + rng.normal(0.0, 0.6);
      const double cx = base_cx + rng.normal(0.0, 0.6);
      double* img = pixels.data() + s * H * W;
      for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
          const double dy = static_cast<double>(y) - cy;
          const double dx = static_cast<double>(x) - cx;
          const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma)) +
                           0.05 * rng.uniform();
          img[y * W + x] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  Dataset ds;
  ds.images = Tensor::from_data({N, 1, H, W}, std::move(pixels));
  ds.labels = std::move(labels);
  ds.num_classes = spec.classes;
  ds.name = "synthetic";
  return ds;
}

Dataset take_first(const Dataset& ds, int64_t n) {
  if (n < 1 || n > ds.size()) {
    throw std::invalid_argument("take_first: n=" + std::to_string(n) +
                                " outside [1," + std::to_string(ds.size()) + "]");
  }
  const int64_t C = ds.images.dim(1), H = ds.images.dim(2), W = ds.images.dim(3);
  const int64_t stride = C * H * W;
  std::vector<double> pixels(ds.images.data().begin(),
                             ds.images.data().begin() + n * stride);
  Dataset out;
  out.images = Tensor::from_data({n, C, H, W}, std::move(pixels));
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
  out.num_classes = ds.num_classes;
  out.name = ds.name;
  return out;
}

Split split_dataset(const Dataset& ds, const SplitConfig& cfg) {
  const int64_t N = ds.size();
  if (N < 2) throw std::invalid_argument("split_dataset: need at least 2 samples");
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) {
    throw std::invalid_argument("split_dataset: val_fraction must lie in (0,1)");
  }
  const int64_t val_n = std::llround(cfg.val_fraction * static_cast<double>(N));
  if (val_n < 1 || val_n >= N) {
    throw std::invalid_argument("split_dataset: fraction " + std::to_string(cfg.val_fraction) +
                                " yields an empty split for N=" + std::to_string(N));
  }
  std::vector<int64_t> idx(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng(cfg.seed);
  rng.shuffle(idx);
  Split sp;
  sp.train_indices.assign(idx.begin(), idx.end() - val_n);
  sp.val_indices.assign(idx.end() - val_n, idx.end());
  return sp;
}

std::vector<int64_t> Split::epoch_order(uint64_t seed, int epoch) const {
  std::vector<int64_t> order = train_indices;
  Rng rng(seed + static_cast<uint64_t>(epoch));
  rng.shuffle(order);
  return order;
}

std::vector<std::vector<int64_t>> batch_indices(const std::vector<int64_t>& order,
                                                int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_indices: batch_size must be >= 1");
  std::vector<std::vector<int64_t>> out;
  for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
  }
  return out;
}

Batch gather(const Dataset& ds, const std::vector<int64_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("gather: empty index list");
  const int64_t C = ds.images.dim(1), H = ds.images.dim(2), W = ds.images.dim(3);
  const int64_t stride = C * H * W;
  std::vector<double> pixels;
  pixels.reserve(indices.size() * static_cast<size_t>(stride));
  Batch b;
  b.y.reserve(indices.size());
  for (int64_t i : indices) {
    if (i < 0 || i >= ds.size()) {
      throw std::out_of_range("gather: index " + std::to_string(i) + " outside dataset");
    }
    const double* src = ds.images.data().data() + i * stride;
    pixels.insert(pixels.end(), src, src + stride);
    b.y.push_back(ds.labels[static_cast<size_t>(i)]);
  }
  b.x = Tensor::from_data({static_cast<int64_t>(indices.size()), C, H, W}, std::move(pixels));
  return b;
}

}  // namespace gradattn
