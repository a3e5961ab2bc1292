#include "gradattn/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gradattn/errors.hpp"

namespace gradattn {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for '" + key + "': " + v);
  }
  if (pos != v.size()) throw std::invalid_argument("config: bad number for '" + key + "': " + v);
  return d;
}

int64_t parse_int(const std::string& key, const std::string& v) {
  size_t pos = 0;
  int64_t n = 0;
  try {
    n = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
  }
  if (pos != v.size()) throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
  return n;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ';')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ";";
    out += v[i];
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'key = value': " + line);
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config: empty key at line " + std::to_string(lineno));
    kv[key] = val;
  }
  return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_kv_text(ss.str());
}

std::string kv_to_text(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

void write_kv_file(const std::string& path, const std::map<std::string, std::string>& kv) {
  std::ofstream out(path);
  if (!out) throw IoError("config: cannot write " + path);
  out << kv_to_text(kv);
  if (!out) throw IoError("config: write failed for " + path);
}

RunConfig RunConfig::from_kv(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  for (const auto& [key, v] : kv) {
    if (key == "model") c.model = v;
    else if (key == "pe") c.pe = v;
    else if (key == "dataset") c.dataset = v;
    else if (key == "images_path") c.images_path = v;
    else if (key == "labels_path") c.labels_path = v;
    else if (key == "cifar_paths") c.cifar_paths = split_list(v);
    else if (key == "limit") c.limit = parse_int(key, v);
    else if (key == "synthetic_classes") c.synthetic_classes = int(parse_int(key, v));
    else if (key == "synthetic_per_class") c.synthetic_per_class = int(parse_int(key, v));
    else if (key == "synthetic_size") c.synthetic_size = int(parse_int(key, v));
    else if (key == "width_scale") c.width_scale = parse_double(key, v);
    else if (key == "stem") c.stem = v;
    else if (key == "num_classes") c.num_classes = int(parse_int(key, v));
    else if (key == "enc_depth") c.enc_depth = int(parse_int(key, v));
    else if (key == "enc_heads") c.enc_heads = int(parse_int(key, v));
    else if (key == "enc_dim") c.enc_dim = int(parse_int(key, v));
    else if (key == "enc_ffn") c.enc_ffn = int(parse_int(key, v));
    else if (key == "lr") c.lr = parse_double(key, v);
    else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
    else if (key == "batch_size") c.batch_size = int(parse_int(key, v));
    else if (key == "plateau_patience") c.plateau_patience = int(parse_int(key, v));
    else if (key == "plateau_factor") c.plateau_factor = parse_double(key, v);
    else if (key == "improve_threshold") c.improve_threshold = parse_double(key, v);
    else if (key == "early_patience") c.early_patience = int(parse_int(key, v));
    else if (key == "val_fraction") c.val_fraction = parse_double(key, v);
    else if (key == "seed") c.seed = uint64_t(parse_int(key, v));
    else if (key == "max_epochs") c.max_epochs = int(parse_int(key, v));
    else if (key == "out_dir") c.out_dir = v;
    else if (key == "mode") c.mode = v;
    else if (key == "diag_steps") c.diag_steps = int(parse_int(key, v));
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  return c;
}

std::map<std::string, std::string> RunConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["model"] = model;
  kv["pe"] = pe;
  kv["dataset"] = dataset;
  kv["images_path"] = images_path;
  kv["labels_path"] = labels_path;
  kv["cifar_paths"] = join_list(cifar_paths);
  kv["limit"] = std::to_string(limit);
  kv["synthetic_classes"] = std::to_string(synthetic_classes);
  kv["synthetic_per_class"] = std::to_string(synthetic_per_class);
  kv["synthetic_size"] = std::to_string(synthetic_size);
  kv["width_scale"] = fmt_double(width_scale);
  kv["stem"] = stem;
  kv["num_classes"] = std::to_string(num_classes);
  kv["enc_depth"] = std::to_string(enc_depth);
  kv["enc_heads"] = std::to_string(enc_heads);
  kv["enc_dim"] = std::to_string(enc_dim);
  kv["enc_ffn"] = std::to_string(enc_ffn);
  kv["lr"] = fmt_double(lr);
  kv["weight_decay"] = fmt_double(weight_decay);
  kv["batch_size"] = std::to_string(batch_size);
  kv["plateau_patience"] = std::to_string(plateau_patience);
  kv["plateau_factor"] = fmt_double(plateau_factor);
  kv["improve_threshold"] = fmt_double(improve_threshold);
  kv["early_patience"] = std::to_string(early_patience);
  kv["val_fraction"] = fmt_double(val_fraction);
  kv["seed"] = std::to_string(seed);
  kv["max_epochs"] = std::to_string(max_epochs);
  kv["out_dir"] = out_dir;
  kv["mode"] = mode;
  kv["diag_steps"] = std::to_string(diag_steps);
  return kv;
}

void RunConfig::validate() const {
  if (model != "resnet18" && model != "gradattn")
    throw std::invalid_argument("config: model must be resnet18|gradattn, got '" + model + "'");
  pe_from_name(pe);  // throws on unknown variant
  if (dataset != "synthetic" && dataset != "idx" && dataset != "cifar")
    throw std::invalid_argument("config: dataset must be synthetic|idx|cifar, got '" + dataset + "'");
  if (dataset == "idx" && (images_path.empty() || labels_path.empty()))
    throw std::invalid_argument("config: dataset=idx requires images_path and labels_path");
  if (dataset == "cifar" && cifar_paths.empty())
    throw std::invalid_argument("config: dataset=cifar requires cifar_paths");
  if (limit < 0) throw std::invalid_argument("config: limit must be >= 0");
  if (synthetic_classes < 2) throw std::invalid_argument("config: synthetic_classes must be >= 2");
  if (synthetic_per_class < 1)
    throw std::invalid_argument("config: synthetic_per_class must be >= 1");
  if (synthetic_size < 8) throw std::invalid_argument("config: synthetic_size must be >= 8");
  if (width_scale <= 0) throw std::invalid_argument("config: width_scale must be > 0");
  if (stem != "auto" && stem != "full" && stem != "compact")
    throw std::invalid_argument("config: stem must be auto|full|compact, got '" + stem + "'");
  if (num_classes < 0) throw std::invalid_argument("config: num_classes must be >= 0");
  if (enc_depth < 1) throw std::invalid_argument("config: enc_depth must be >= 1");
  if (enc_heads < 1) throw std::invalid_argument("config: enc_heads must be >= 1");
  if (enc_dim < 1) throw std::invalid_argument("config: enc_dim must be >= 1");
  if (enc_dim % enc_heads != 0)
    throw std::invalid_argument("config: enc_dim must be divisible by enc_heads");
  if (enc_ffn < 1) throw std::invalid_argument("config: enc_ffn must be >= 1");
  if (lr <= 0) throw std::invalid_argument("config: lr must be > 0");
  if (weight_decay < 0) throw std::invalid_argument("config: weight_decay must be >= 0");
  if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
  if (plateau_patience < 0) throw std::invalid_argument("config: plateau_patience must be >= 0");
  if (plateau_factor <= 0 || plateau_factor >= 1)
    throw std::invalid_argument("config: plateau_factor must be in (0, 1)");
  if (improve_threshold < 0) throw std::invalid_argument("config: improve_threshold must be >= 0");
  if (early_patience < 0) throw std::invalid_argument("config: early_patience must be >= 0");
  if (val_fraction <= 0 || val_fraction >= 1)
    throw std::invalid_argument("config: val_fraction must be in (0, 1)");
  if (max_epochs < 1) throw std::invalid_argument("config: max_epochs must be >= 1");
  if (out_dir.empty()) throw std::invalid_argument("config: out_dir must be set");
  if (mode != "f32" && mode != "f64")
    throw std::invalid_argument("config: mode must be f32|f64, got '" + mode + "'");
  if (diag_steps < 1) throw std::invalid_argument("config: diag_steps must be >= 1");
}

NumericMode RunConfig::numeric_mode() const {
  if (mode == "f32") return NumericMode::Float32;
  if (mode == "f64") return NumericMode::Float64;
  throw std::invalid_argument("config: mode must be f32|f64, got '" + mode + "'");
}

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig ec;
  ec.depth = enc_depth;
  ec.heads = enc_heads;
  ec.embed_dim = enc_dim;
  ec.ffn_dim = enc_ffn;
  ec.pe = pe_from_name(pe);
  ec.validate();
  return ec;
}

WidthConfig RunConfig::width_config(int channels, int size, int dataset_classes) const {
  WidthConfig wc;
  wc.input_channels = channels;
  wc.input_size = size;
  wc.num_classes = num_classes > 0 ? num_classes : dataset_classes;
  wc.width_scale = width_scale;
  if (stem == "full") wc.stem = WidthConfig::Stem::Full;
  else if (stem == "compact") wc.stem = WidthConfig::Stem::Compact;
  else wc.stem = WidthConfig::Stem::Auto;
  wc.validate();
  return wc;
}

}  // namespace gradattn
