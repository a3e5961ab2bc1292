#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gradattn/tensor.hpp"

namespace gradattn {

// Named registry of trainable parameters plus non-trainable buffers (e.g.
// batchnorm running stats). Insertion order is preserved everywhere: grad
// reports, optimizer sweeps and checkpoints all iterate in this order, which
// keeps runs bit-reproducible.
class ParamStore {
 public:
  // Registers a trainable parameter (sets requires_grad). Names must be
  // unique across params and buffers.
  Tensor& add(const std::string& name, Tensor t);
  // Registers a non-trainable state buffer (saved in checkpoints, excluded
  // from parameter counts and gradient diagnostics).
  Tensor& add_buffer(const std::string& name, Tensor t);

  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
  const Tensor& at(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& items() const { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& buffers() const { return buffers_; }

  int64_t total_params() const;
  void zero_grads();
  void clear_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
};

// Layer name of a parameter: everything before the final dot ("s1.b0.conv1"
// for "s1.b0.conv1.weight"); the full name when there is no dot.
std::string layer_of(const std::string& param_name);

}  // namespace gradattn
