#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "gradattn/checkpoint.hpp"
#include "gradattn/config.hpp"
#include "gradattn/data.hpp"
#include "gradattn/graddiag.hpp"
#include "gradattn/metrics.hpp"
#include "gradattn/models.hpp"

namespace gradattn {

struct EpochRow {
  int epoch = 0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;  // lr in effect during the epoch's updates
};

// Header "epoch,train_acc,val_acc,train_loss,val_loss,lr"; doubles printed so
// they re-parse bit-exactly.
std::string metrics_csv(const std::vector<EpochRow>& rows);

struct TrainResult {
  std::vector<EpochRow> rows;
  MetricBundle final_bundle;  // val split, best checkpoint, gap attached
  GradFlowHistory gradflow;
  int best_epoch = 0;
  double best_val_acc = 0.0;
  bool early_stopped = false;
  std::string checkpoint_path;  // out_dir/best.ckpt
};

Dataset load_configured_dataset(const RunConfig& cfg);

// Full training run: writes config.kv, metrics.csv, gradflow.csv, best.ckpt
// and metrics.json under cfg.out_dir, logging one line per epoch. Nothing is
// written before the dataset loads successfully.
TrainResult train_run(const RunConfig& cfg, std::ostream* log = nullptr);

struct EvalResult {
  MetricBundle bundle;
  int64_t examples = 0;
};

RunConfig config_from_checkpoint(const CheckpointData& ck);

// Rebuilds the model from cfg, loads the checkpoint weights, and evaluates
// the validation split of the configured dataset (the split is re-derived
// from seed/val_fraction, so it matches the training split).
EvalResult eval_run(const RunConfig& cfg, const std::string& checkpoint_path,
                    std::ostream* log = nullptr);

struct DiagnoseResult {
  GradReport report;          // per-layer mean norms over the probed steps
  GradFlowHistory history;    // raw per-step records
};

// Runs cfg.diag_steps forward/backward probes (no optimizer updates) on
// training batches; checkpoint_path may be empty to probe a fresh init.
DiagnoseResult diagnose_run(const RunConfig& cfg, const std::string& checkpoint_path,
                            std::ostream* log = nullptr);

}  // namespace gradattn
