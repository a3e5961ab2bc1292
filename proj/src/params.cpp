#include "gradattn/params.hpp"

#include <stdexcept>

namespace gradattn {

namespace {
Tensor* find_in(std::vector<std::pair<std::string, Tensor>>& v, const std::string& name) {
  for (auto& [n, t] : v) {
    if (n == name) return &t;
  }
  return nullptr;
}
}  // namespace

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (find(name) != nullptr) {
    throw std::invalid_argument("ParamStore: duplicate name '" + name + "'");
  }
  t.set_requires_grad(true);
  params_.emplace_back(name, std::move(t));
  return params_.back().second;
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor t) {
  if (find(name) != nullptr) {
    throw std::invalid_argument("ParamStore: duplicate name '" + name + "'");
  }
  buffers_.emplace_back(name, std::move(t));
  return buffers_.back().second;
}

Tensor* ParamStore::find(const std::string& name) {
  if (Tensor* t = find_in(params_, name)) return t;
  return find_in(buffers_, name);
}

const Tensor* ParamStore::find(const std::string& name) const {
  return const_cast<ParamStore*>(this)->find(name);
}

const Tensor& ParamStore::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (t == nullptr) throw std::invalid_argument("ParamStore: unknown name '" + name + "'");
  return *t;
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void ParamStore::clear_grads() {
  for (auto& [name, t] : params_) t.clear_grad();
}

std::string layer_of(const std::string& param_name) {
  const size_t pos = param_name.rfind('.');
  return pos == std::string::npos ? param_name : param_name.substr(0, pos);
}

}  // namespace gradattn
