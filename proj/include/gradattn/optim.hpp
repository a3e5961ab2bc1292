#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gradattn/params.hpp"

namespace gradattn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // coupled L2: applied to the grad before the moments
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {});

  // One update over every parameter in the store. Requires every param to
  // carry a populated, finite gradient; refuses the whole step otherwise.
  void step(ParamStore& params);

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }
  int64_t step_count() const { return t_; }

  // Flat state access for checkpointing (moment buffers are created lazily,
  // keyed by parameter name, in first-seen order).
  struct ParamState {
    std::string name;
    std::vector<double> m, v;
  };
  const std::vector<ParamState>& state() const { return state_; }
  void restore(int64_t t, std::vector<ParamState> state);

 private:
  ParamState& state_for(const std::string& name, size_t numel);
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<ParamState> state_;
};

// ReduceLROnPlateau on val accuracy (mode max): after `patience` consecutive
// non-improving epochs the lr is multiplied by `factor` and the counter
// resets. Improvement means val_acc > best + threshold.
struct PlateauScheduler {
  double factor = 0.2;
  int patience = 3;
  double threshold = 1e-4;

  double best = -std::numeric_limits<double>::infinity();
  int epochs_since_improve = 0;

  // Returns true when it reduced lr this epoch.
  bool update(double val_acc, double& lr);
};

// Stops after `patience` consecutive epochs without improvement over best.
struct EarlyStopping {
  int patience = 7;
  double threshold = 1e-4;

  double best = -std::numeric_limits<double>::infinity();
  int epochs_since_improve = 0;
  bool stopped = false;

  // Returns the stop flag after folding in this epoch.
  bool update(double val_acc);
};

}  // namespace gradattn
