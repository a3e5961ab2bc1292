#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gradattn/params.hpp"
#include "gradattn/tensor.hpp"

namespace gradattn {

// Checkpoint file layout: 8-byte magic, u32 format version (LE), u64 JSON
// header length (LE), header bytes, then all tensor payloads as little-endian
// float32 in header order. Values are on the float32 grid in Float32 numeric
// mode, so save -> load round-trips bit-exactly.
struct CheckpointData {
  std::map<std::string, std::string> config;  // resolved run config (key=value)
  nlohmann::json state;                       // optimizer/epoch scalars
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const std::map<std::string, std::string>& config,
                     const nlohmann::json& state,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

CheckpointData load_checkpoint(const std::string& path);

// Copies every param and buffer of `params` from the checkpoint by name,
// shape-checked; throws if one is missing.
void apply_checkpoint(const CheckpointData& ck, ParamStore& params);

// All params followed by all buffers (the tensor list a model checkpoint
// stores).
std::vector<std::pair<std::string, Tensor>> checkpoint_tensors(const ParamStore& params);

}  // namespace gradattn
