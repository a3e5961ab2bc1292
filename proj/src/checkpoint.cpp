#include "gradattn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "gradattn/errors.hpp"

namespace gradattn {

namespace {

constexpr char kMagic[8] = {'G', 'R', 'A', 'D', 'A', 'T', 'T', 'N'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

uint32_t get_u32(const std::string& b, size_t off) {
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[off + static_cast<size_t>(i)]);
  return v;
}

uint64_t get_u64(const std::string& b, size_t off) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[off + static_cast<size_t>(i)]);
  return v;
}

double get_f32(const std::string& b, size_t off) {
  const uint32_t bits = get_u32(b, off);
  float f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

}  // namespace

const Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const std::map<std::string, std::string>& config,
                     const nlohmann::json& state,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  nlohmann::json manifest = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    manifest.push_back({{"name", name},
                        {"shape", t.shape()},
                        {"offset", offset},
                        {"count", t.numel()}});
    offset += static_cast<uint64_t>(t.numel()) * 4;
  }
  const nlohmann::json header{{"format", "gradattn-checkpoint"},
                              {"version", kVersion},
                              {"config", config},
                              {"state", state},
                              {"tensors", manifest}};
  const std::string header_str = header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u64(out, header_str.size());
  out += header_str;
  for (const auto& [name, t] : tensors) {
    for (double v : t.data()) put_f32(out, v);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint '" + path + "'");
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < sizeof(kMagic) + 12 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("'" + path + "' is not a checkpoint (bad magic)");
  }
  const uint32_t version = get_u32(buf, 8);
  if (version != kVersion) {
    throw IoError("checkpoint '" + path + "' has unsupported version " +
                  std::to_string(version));
  }
  const uint64_t hlen = get_u64(buf, 12);
  const size_t payload_off = 20 + hlen;
  if (buf.size() < payload_off) throw IoError("checkpoint '" + path + "' is truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(20, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path + "' has a corrupt header: " + e.what());
  }

  CheckpointData ck;
  try {
    if (header.contains("config")) {
      ck.config = header.at("config").get<std::map<std::string, std::string>>();
    }
    ck.state = header.value("state", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      const uint64_t offset = entry.at("offset").get<uint64_t>();
      const int64_t count = entry.at("count").get<int64_t>();
      if (count != shape_numel(shape)) {
        throw IoError("checkpoint '" + path + "': tensor '" + name + "' count mismatch");
      }
      const size_t start = payload_off + offset;
      if (buf.size() < start + static_cast<size_t>(count) * 4) {
        throw IoError("checkpoint '" + path + "': payload truncated at '" + name + "'");
      }
      std::vector<double> data(static_cast<size_t>(count));
      for (int64_t i = 0; i < count; ++i) {
        data[static_cast<size_t>(i)] = get_f32(buf, start + static_cast<size_t>(i) * 4);
      }
      ck.tensors.emplace_back(name, Tensor::from_data(shape, std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path + "' has a corrupt manifest: " + e.what());
  }
  return ck;
}

void apply_checkpoint(const CheckpointData& ck, ParamStore& params) {
  auto apply = [&](const std::vector<std::pair<std::string, Tensor>>& dst) {
    for (const auto& [name, t] : dst) {
      const Tensor* src = ck.find(name);
      if (src == nullptr) {
        throw IoError("checkpoint is missing tensor '" + name + "'");
      }
      if (src->shape() != t.shape()) {
        throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(src->shape()) +
                      ", model expects " + shape_str(t.shape()));
      }
      Tensor target = t;  // shared handle
      target.data() = src->data();
    }
  };
  apply(params.items());
  apply(params.buffers());
}

std::vector<std::pair<std::string, Tensor>> checkpoint_tensors(const ParamStore& params) {
  std::vector<std::pair<std::string, Tensor>> out = params.items();
  const auto& bufs = params.buffers();
  out.insert(out.end(), bufs.begin(), bufs.end());
  return out;
}

}  // namespace gradattn
