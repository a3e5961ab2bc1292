#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradattn/tensor.hpp"

namespace gradattn {

struct Dataset {
  Tensor images;  // [N,C,H,W], pixels in [0,1]
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;

  int64_t size() const { return images.dim(0); }
  void validate() const;  // label range, pixel range, count agreement
};

// IDX (MNIST-family) pair: image magic 0x00000803, label magic 0x00000801,
// big-endian dims, pixel bytes scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
// (R,G,B planes, row-major 32x32).
Dataset load_cifar_bin(const std::vector<std::string>& paths);

struct SyntheticSpec {
  int classes = 2;
  int per_class = 200;
  int height = 16;
  int width = 16;
  uint64_t seed = 42;
};

// Class-dependent Gaussian blobs, deterministic per seed, learnable by a
// small model.
Dataset synthetic_dataset(const SyntheticSpec& spec);

// First n samples (for subset smoke runs); n <= size.
Dataset take_first(const Dataset& ds, int64_t n);

struct SplitConfig {
  double val_fraction = 0.2;
  uint64_t seed = 42;
  int batch_size = 128;
};

struct Split {
  std::vector<int64_t> train_indices;  // shuffled once with the base seed
  std::vector<int64_t> val_indices;
  // Train order for one epoch: reshuffled with seed + epoch (1-based).
  std::vector<int64_t> epoch_order(uint64_t seed, int epoch) const;
};

// Seeded shuffle, disjoint exhaustive split. Throws if either side is empty.
Split split_dataset(const Dataset& ds, const SplitConfig& cfg);

struct Batch {
  Tensor x;  // [b,C,H,W]
  std::vector<int> y;
};

// Consecutive index groups of size batch_size; the final partial batch is
// kept.
std::vector<std::vector<int64_t>> batch_indices(const std::vector<int64_t>& order,
                                                int batch_size);
Batch gather(const Dataset& ds, const std::vector<int64_t>& indices);

}  // namespace gradattn
