#include "gradattn/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "gradattn/errors.hpp"

namespace gradattn {

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("adam: lr must be > 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw std::invalid_argument("adam: betas must lie in [0,1)");
  }
  if (!(cfg.eps > 0.0)) throw std::invalid_argument("adam: eps must be > 0");
  if (cfg.weight_decay < 0.0) throw std::invalid_argument("adam: weight_decay must be >= 0");
}

Adam::ParamState& Adam::state_for(const std::string& name, size_t numel) {
  for (auto& s : state_) {
    if (s.name == name) {
      if (s.m.size() != numel) {
        throw std::invalid_argument("adam: state for '" + name + "' has " +
                                    std::to_string(s.m.size()) + " entries but param has " +
                                    std::to_string(numel));
      }
      return s;
    }
  }
  state_.push_back(ParamState{name, std::vector<double>(numel, 0.0),
                              std::vector<double>(numel, 0.0)});
  return state_.back();
}

void Adam::step(ParamStore& params) {
  // Validate the whole step before touching any parameter.
  for (const auto& [name, t] : params.items()) {
    if (!t.has_grad()) {
      throw std::invalid_argument("adam: parameter '" + name +
                                  "' has no gradient; run backward first");
    }
    for (double g : t.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam: non-finite gradient in '" + name + "'; step refused");
      }
    }
  }

  ++t_;
  const NumericMode mode = numeric_mode();
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  for (const auto& [name, param] : params.items()) {
    Tensor tensor = param;  // shares storage; Tensor is a handle
    ParamState& st = state_for(name, tensor.data().size());
    auto& w = tensor.data();
    const auto& grad = tensor.grad();
    for (size_t i = 0; i < w.size(); ++i) {
      const double g = grad[i] + cfg_.weight_decay * w[i];
      st.m[i] = snap(cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g, mode);
      st.v[i] = snap(cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g, mode);
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      w[i] = snap(w[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps), mode);
    }
  }
}

void Adam::restore(int64_t t, std::vector<ParamState> state) {
  if (t < 0) throw std::invalid_argument("adam: step count must be >= 0");
  t_ = t;
  state_ = std::move(state);
}

namespace {
void check_acc(double val_acc) {
  if (!(val_acc >= 0.0 && val_acc <= 1.0)) {
    throw std::invalid_argument("val_acc must lie in [0,1], got " + std::to_string(val_acc));
  }
}
}  // namespace

bool PlateauScheduler::update(double val_acc, double& lr) {
  check_acc(val_acc);
  if (val_acc > best + threshold) {
    best = val_acc;
    epochs_since_improve = 0;
    return false;
  }
  ++epochs_since_improve;
  if (epochs_since_improve > patience) {
    lr *= factor;
    epochs_since_improve = 0;
    return true;
  }
  return false;
}

bool EarlyStopping::update(double val_acc) {
  check_acc(val_acc);
  if (val_acc > best + threshold) {
    best = val_acc;
    epochs_since_improve = 0;
  } else {
    ++epochs_since_improve;
    if (epochs_since_improve > patience) stopped = true;
  }
  return stopped;
}

}  // namespace gradattn
