#include "doctest.h"

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "gradattn/data.hpp"
#include "gradattn/errors.hpp"

using namespace gradattn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("gradattn_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, uint32_t x) {
  v.push_back((unsigned char)(x >> 24));
  v.push_back((unsigned char)(x >> 16));
  v.push_back((unsigned char)(x >> 8));
  v.push_back((unsigned char)(x));
}

// Handwritten 3-image 2x2 IDX pair.
void write_idx_fixture(const fs::path& img, const fs::path& lbl) {
  std::vector<unsigned char> ib;
  push_be32(ib, 0x00000803);
  push_be32(ib, 3);  // count
  push_be32(ib, 2);  // rows
  push_be32(ib, 2);  // cols
  for (unsigned char px : {0, 51, 102, 153,  //
                           204, 255, 0, 255,  //
                           1, 2, 3, 4})
    ib.push_back(px);
  write_bytes(img, ib);

  std::vector<unsigned char> lb;
  push_be32(lb, 0x00000801);
  push_be32(lb, 3);
  for (unsigned char y : {1, 0, 1}) lb.push_back(y);
  write_bytes(lbl, lb);
}

}  // namespace

TEST_CASE("idx loader decodes a handwritten byte fixture") {
  TempDir tmp;
  fs::path img = tmp.path / "imgs", lbl = tmp.path / "lbls";
  write_idx_fixture(img, lbl);

  Dataset ds = load_idx(img.string(), lbl.string());
  ds.validate();
  CHECK(ds.size() == 3);
  CHECK(ds.images.shape() == Shape{3, 1, 2, 2});
  CHECK(ds.labels == std::vector<int>{1, 0, 1});
  CHECK(ds.num_classes == 10);  // MNIST-family floor even when a subset misses classes
  CHECK(ds.images.at({0, 0, 0, 0}) == 0.0);
  // default mode stores f32, so byte/255 lands exactly on the float grid
  CHECK(ds.images.at({0, 0, 0, 1}) == double(float(51.0 / 255)));
  CHECK(ds.images.at({1, 0, 0, 1}) == 1.0);
  CHECK(ds.images.at({2, 0, 1, 1}) == double(float(4.0 / 255)));
}

TEST_CASE("idx loader rejects corrupt headers and mismatched pairs") {
  TempDir tmp;
  fs::path img = tmp.path / "imgs", lbl = tmp.path / "lbls";
  write_idx_fixture(img, lbl);

  CHECK_THROWS_AS(load_idx((tmp.path / "missing").string(), lbl.string()), IoError);

  std::vector<unsigned char> bad_magic;
  push_be32(bad_magic, 0x00000801);  // label magic in the image slot
  push_be32(bad_magic, 1);
  push_be32(bad_magic, 2);
  push_be32(bad_magic, 2);
  for (int i = 0; i < 4; ++i) bad_magic.push_back(0);
  write_bytes(tmp.path / "badmagic", bad_magic);
  CHECK_THROWS_AS(load_idx((tmp.path / "badmagic").string(), lbl.string()), IoError);

  std::vector<unsigned char> short_lbl;
  push_be32(short_lbl, 0x00000801);
  push_be32(short_lbl, 2);  // claims 2 labels for 3 images
  short_lbl.push_back(0);
  short_lbl.push_back(1);
  write_bytes(tmp.path / "short", short_lbl);
  CHECK_THROWS_AS(load_idx(img.string(), (tmp.path / "short").string()), IoError);

  std::vector<unsigned char> truncated;
  push_be32(truncated, 0x00000803);
  push_be32(truncated, 3);
  push_be32(truncated, 2);
  push_be32(truncated, 2);
  truncated.push_back(9);  // 1 of 12 pixel bytes
  write_bytes(tmp.path / "trunc", truncated);
  CHECK_THROWS_AS(load_idx((tmp.path / "trunc").string(), lbl.string()), IoError);
}

TEST_CASE("cifar loader decodes label+rgb records across files") {
  TempDir tmp;
  // Two records in file A, one in file B; pixel p = plane base + offset.
  auto record = [](unsigned char label, unsigned char base) {
    std::vector<unsigned char> r{label};
    for (int p = 0; p < 3072; ++p) r.push_back((unsigned char)((base + p) % 256));
    return r;
  };
  std::vector<unsigned char> fa = record(3, 0);
  std::vector<unsigned char> rb = record(7, 10);
  fa.insert(fa.end(), rb.begin(), rb.end());
  write_bytes(tmp.path / "a.bin", fa);
  write_bytes(tmp.path / "b.bin", record(0, 100));

  Dataset ds = load_cifar_bin({(tmp.path / "a.bin").string(), (tmp.path / "b.bin").string()});
  ds.validate();
  CHECK(ds.size() == 3);
  CHECK(ds.images.shape() == Shape{3, 3, 32, 32});
  CHECK(ds.labels == std::vector<int>{3, 7, 0});
  CHECK(ds.num_classes == 10);  // cifar-10 is fixed-width
  // Record 0: R plane starts at byte 0, G at 1024, B at 2048 (f32 pixel grid).
  CHECK(ds.images.at({0, 0, 0, 5}) == double(float(5.0 / 255)));
  CHECK(ds.images.at({0, 1, 0, 0}) == double(float((1024 % 256) / 255.0)));
  CHECK(ds.images.at({2, 0, 0, 0}) == double(float(100.0 / 255)));

  // A file that is not a whole number of records is corrupt.
  std::vector<unsigned char> ragged = record(1, 0);
  ragged.pop_back();
  write_bytes(tmp.path / "ragged.bin", ragged);
  CHECK_THROWS_AS(load_cifar_bin({(tmp.path / "ragged.bin").string()}), IoError);
  CHECK_THROWS_AS(load_cifar_bin({}), std::invalid_argument);
}

TEST_CASE("synthetic dataset is deterministic, labeled, and in range") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.per_class = 10;
  spec.height = 8;
  spec.width = 8;
  spec.seed = 42;

  Dataset a = synthetic_dataset(spec);
  Dataset b = synthetic_dataset(spec);
  a.validate();
  CHECK(a.size() == 30);
  CHECK(a.images.shape() == Shape{30, 1, 8, 8});
  CHECK(a.num_classes == 3);
  CHECK(a.images.data() == b.images.data());  // bitwise
  CHECK(a.labels == b.labels);

  SyntheticSpec other = spec;
  other.seed = 43;
  CHECK(synthetic_dataset(other).images.data() != a.images.data());

  std::set<int> seen(a.labels.begin(), a.labels.end());
  CHECK(seen == std::set<int>{0, 1, 2});
  for (double px : a.images.data()) {
    CHECK(px >= 0.0);
    CHECK(px <= 1.0);
  }
}

TEST_CASE("take_first keeps a prefix and its labels") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.per_class = 6;
  Dataset ds = synthetic_dataset(spec);
  Dataset sub = take_first(ds, 5);
  CHECK(sub.size() == 5);
  CHECK(sub.num_classes == 2);
  for (int64_t i = 0; i < 5; ++i) CHECK(sub.labels[size_t(i)] == ds.labels[size_t(i)]);
  CHECK(std::equal(sub.images.data().begin(), sub.images.data().end(), ds.images.data().begin()));
  CHECK_THROWS_AS(take_first(ds, 13), std::invalid_argument);
  CHECK_THROWS_AS(take_first(ds, 0), std::invalid_argument);
}

TEST_CASE("split is exhaustive, disjoint, and seed-deterministic") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.per_class = 50;
  Dataset ds = synthetic_dataset(spec);

  SplitConfig cfg;
  cfg.val_fraction = 0.2;
  cfg.seed = 42;
  Split s1 = split_dataset(ds, cfg);
  Split s2 = split_dataset(ds, cfg);

  CHECK(s1.train_indices.size() == 80);
  CHECK(s1.val_indices.size() == 20);
  CHECK(s1.train_indices == s2.train_indices);
  CHECK(s1.val_indices == s2.val_indices);

  std::set<int64_t> all(s1.train_indices.begin(), s1.train_indices.end());
  all.insert(s1.val_indices.begin(), s1.val_indices.end());
  CHECK(all.size() == 100);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 99);

  SplitConfig reseeded = cfg;
  reseeded.seed = 7;
  CHECK(split_dataset(ds, reseeded).train_indices != s1.train_indices);

  // The split must be a shuffle, not a prefix cut.
  std::vector<int64_t> sorted_train = s1.train_indices;
  std::sort(sorted_train.begin(), sorted_train.end());
  CHECK(s1.train_indices != sorted_train);

  SplitConfig degenerate = cfg;
  degenerate.val_fraction = 0.0;
  CHECK_THROWS_AS(split_dataset(ds, degenerate), std::invalid_argument);
}

TEST_CASE("epoch order is a deterministic per-epoch permutation of train indices") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.per_class = 30;
  Dataset ds = synthetic_dataset(spec);
  Split s = split_dataset(ds, {});

  auto e1 = s.epoch_order(42, 1);
  auto e1_again = s.epoch_order(42, 1);
  auto e2 = s.epoch_order(42, 2);
  CHECK(e1 == e1_again);
  CHECK(e1 != e2);

  std::vector<int64_t> sorted_e1 = e1, sorted_train = s.train_indices;
  std::sort(sorted_e1.begin(), sorted_e1.end());
  std::sort(sorted_train.begin(), sorted_train.end());
  CHECK(sorted_e1 == sorted_train);
}

TEST_CASE("batch_indices groups consecutively and keeps the tail") {
  std::vector<int64_t> order{5, 3, 9, 1, 7, 2, 8};
  auto batches = batch_indices(order, 3);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0] == std::vector<int64_t>{5, 3, 9});
  CHECK(batches[1] == std::vector<int64_t>{1, 7, 2});
  CHECK(batches[2] == std::vector<int64_t>{8});
  CHECK_THROWS_AS(batch_indices(order, 0), std::invalid_argument);
}

TEST_CASE("gather materializes the right rows") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.per_class = 5;
  spec.height = 4;
  spec.width = 4;
  Dataset ds = synthetic_dataset(spec);
  Batch b = gather(ds, {7, 0, 3});
  CHECK(b.x.shape() == Shape{3, 1, 4, 4});
  CHECK(b.y == std::vector<int>{ds.labels[7], ds.labels[0], ds.labels[3]});
  for (int64_t c = 0; c < 4; ++c)
    CHECK(b.x.at({1, 0, 0, c}) == ds.images.at({0, 0, 0, c}));
  CHECK_THROWS_AS(gather(ds, {10}), std::out_of_range);
}

TEST_CASE("dataset validate catches inconsistencies") {
  SyntheticSpec spec;
  Dataset ds = synthetic_dataset(spec);
  ds.labels[0] = 99;
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds.labels[0] = 0;
  ds.images.data()[0] = 2.0;
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
}
