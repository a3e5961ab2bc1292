#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gradattn/attention.hpp"
#include "gradattn/models.hpp"

namespace gradattn {

// Resolved run configuration. Defaults encode the training protocol
// (Adam lr 1e-3, wd 1e-4, batch 128, plateau patience 3 factor 0.2,
// early-stop patience 7, seed 42).
struct RunConfig {
  std::string model = "gradattn";  // resnet18 | gradattn
  std::string pe = "learnable";    // nope | learnable | rope

  // Dataset selection.
  std::string dataset = "synthetic";  // synthetic | idx | cifar
  std::string images_path;            // idx
  std::string labels_path;            // idx
  std::vector<std::string> cifar_paths;
  int64_t limit = 0;  // 0 = use the whole dataset, else first N samples
  int synthetic_classes = 2;
  int synthetic_per_class = 200;
  int synthetic_size = 16;

  // Architecture.
  double width_scale = 0.25;
  std::string stem = "auto";  // auto | full | compact
  int num_classes = 0;        // 0 = inferred from the dataset
  int enc_depth = 3;
  int enc_heads = 8;
  int enc_dim = 256;
  int enc_ffn = 512;

  // Optimization protocol.
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 128;
  int plateau_patience = 3;
  double plateau_factor = 0.2;
  double improve_threshold = 1e-4;
  int early_patience = 7;
  double val_fraction = 0.2;
  uint64_t seed = 42;
  int max_epochs = 50;

  std::string out_dir = "runs/out";
  std::string mode = "f32";  // f32 | f64
  int diag_steps = 10;

  void validate() const;
  NumericMode numeric_mode() const;
  EncoderConfig encoder_config() const;
  // Width config for a dataset with the given geometry; num_classes falls
  // back to the dataset's class count when unset.
  WidthConfig width_config(int channels, int size, int dataset_classes) const;

  static RunConfig from_kv(const std::map<std::string, std::string>& kv);
  std::map<std::string, std::string> to_kv() const;  // full resolved echo
};

// "key = value" lines; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::map<std::string, std::string> parse_kv_file(const std::string& path);
std::string kv_to_text(const std::map<std::string, std::string>& kv);
void write_kv_file(const std::string& path, const std::map<std::string, std::string>& kv);

}  // namespace gradattn
