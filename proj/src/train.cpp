#include "gradattn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gradattn/errors.hpp"
#include "gradattn/layers.hpp"
#include "gradattn/ops.hpp"
#include "gradattn/optim.hpp"

namespace gradattn {
namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

int argmax_row(const double* row, int64_t k) {
  int best = 0;
  for (int64_t c = 1; c < k; ++c)
    if (row[c] > row[best]) best = int(c);
  return best;
}

struct EvalPass {
  double loss = 0.0;
  double acc = 0.0;
  Tensor probs;  // [n,K]
  std::vector<int> labels;
};

EvalPass eval_pass(ClassifierModel& model, const Dataset& ds,
                   const std::vector<int64_t>& indices, int batch_size) {
  const int64_t n = int64_t(indices.size());
  const int64_t k = model.width_config().num_classes;
  std::vector<double> probs(size_t(n * k), 0.0);
  std::vector<int> labels;
  labels.reserve(size_t(n));
  double loss_sum = 0.0;
  int64_t correct = 0, row = 0;
  for (const auto& batch : batch_indices(indices, batch_size)) {
    Batch b = gather(ds, batch);
    ForwardResult fr = model.forward(b.x, Mode::Eval);
    Tensor loss = cross_entropy(fr.logits, b.y);
    loss_sum += loss.value() * double(b.y.size());
    Tensor p = softmax(fr.logits, -1);
    const auto& pd = p.data();
    for (size_t i = 0; i < b.y.size(); ++i, ++row) {
      std::copy_n(pd.data() + int64_t(i) * k, k, probs.data() + row * k);
      labels.push_back(b.y[i]);
      if (argmax_row(pd.data() + int64_t(i) * k, k) == b.y[i]) ++correct;
    }
  }
  EvalPass out;
  out.loss = loss_sum / double(n);
  out.acc = double(correct) / double(n);
  out.probs = Tensor::from_data({n, k}, std::move(probs));
  out.labels = std::move(labels);
  return out;
}

std::vector<std::pair<std::string, Tensor>> model_and_optim_tensors(const ParamStore& params,
                                                                    const Adam& adam) {
  auto tensors = checkpoint_tensors(params);
  for (const auto& st : adam.state()) {
    Shape shape = params.at(st.name).shape();
    tensors.emplace_back("opt.m." + st.name, Tensor::from_data(shape, st.m));
    tensors.emplace_back("opt.v." + st.name, Tensor::from_data(shape, st.v));
  }
  return tensors;
}

void write_diagnostic(const std::string& out_dir, int epoch, int64_t step,
                      const std::string& what, const ParamStore& params) {
  nlohmann::json j;
  j["error"] = what;
  j["epoch"] = epoch;
  j["step"] = step;
  try {
    auto records = collect_layer_grad_norms(params, step);
    j["grad_report"] = grad_report_json(gradient_health_score(records));
  } catch (const std::exception& e) {
    j["grad_report_error"] = e.what();
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ofstream out(out_dir + "/diagnostic.json");
  if (out) out << j.dump(2) << "\n";
}

struct BuiltRun {
  Dataset dataset;
  Split split;
  std::unique_ptr<ClassifierModel> model;
};

BuiltRun build_run(const RunConfig& cfg) {
  BuiltRun r;
  r.dataset = load_configured_dataset(cfg);
  if (r.dataset.images.dim(2) != r.dataset.images.dim(3))
    throw std::invalid_argument("train: models require square inputs, got " +
                                std::to_string(r.dataset.images.dim(2)) + "x" +
                                std::to_string(r.dataset.images.dim(3)));
  SplitConfig sc;
  sc.val_fraction = cfg.val_fraction;
  sc.seed = cfg.seed;
  sc.batch_size = cfg.batch_size;
  r.split = split_dataset(r.dataset, sc);
  WidthConfig wc = cfg.width_config(int(r.dataset.images.dim(1)), int(r.dataset.images.dim(2)),
                                    r.dataset.num_classes);
  r.model = build_model(cfg.model, wc, cfg.encoder_config(), cfg.seed);
  return r;
}

}  // namespace

std::string metrics_csv(const std::vector<EpochRow>& rows) {
  std::string out = "epoch,train_acc,val_acc,train_loss,val_loss,lr\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + fmt17(r.train_acc) + "," + fmt17(r.val_acc) + "," +
           fmt17(r.train_loss) + "," + fmt17(r.val_loss) + "," + fmt17(r.lr) + "\n";
  }
  return out;
}

Dataset load_configured_dataset(const RunConfig& cfg) {
  Dataset ds;
  if (cfg.dataset == "synthetic") {
    SyntheticSpec spec;
    spec.classes = cfg.synthetic_classes;
    spec.per_class = cfg.synthetic_per_class;
    spec.height = cfg.synthetic_size;
    spec.width = cfg.synthetic_size;
    spec.seed = cfg.seed;
    ds = synthetic_dataset(spec);
  } else if (cfg.dataset == "idx") {
    ds = load_idx(cfg.images_path, cfg.labels_path);
  } else if (cfg.dataset == "cifar") {
    ds = load_cifar_bin(cfg.cifar_paths);
  } else {
    throw std::invalid_argument("config: dataset must be synthetic|idx|cifar, got '" +
                                cfg.dataset + "'");
  }
  if (cfg.limit > 0 && cfg.limit < ds.size()) ds = take_first(ds, cfg.limit);
  return ds;
}

TrainResult train_run(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  NumericModeGuard guard(cfg.numeric_mode());
  BuiltRun run = build_run(cfg);  // throws before any artifact is written
  ClassifierModel& model = *run.model;

  std::filesystem::create_directories(cfg.out_dir);
  write_kv_file(cfg.out_dir + "/config.kv", cfg.to_kv());

  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = cfg.weight_decay;
  Adam adam(ac);
  PlateauScheduler plateau;
  plateau.factor = cfg.plateau_factor;
  plateau.patience = cfg.plateau_patience;
  plateau.threshold = cfg.improve_threshold;
  EarlyStopping early;
  early.patience = cfg.early_patience;
  early.threshold = cfg.improve_threshold;

  TrainResult result;
  result.checkpoint_path = cfg.out_dir + "/best.ckpt";
  const int64_t n_train = int64_t(run.split.train_indices.size());
  int64_t step = 0;
  int epoch = 0;
  double best = -1.0;

  try {
    for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
      const double lr_epoch = adam.lr();
      double loss_sum = 0.0;
      int64_t correct = 0;
      for (const auto& bidx : batch_indices(run.split.epoch_order(cfg.seed, epoch),
                                            cfg.batch_size)) {
        if (bidx.size() < 2) continue;  // batchnorm needs batch stats
        Batch b = gather(run.dataset, bidx);
        Tape tape;
        TapeScope scope(tape);
        ForwardResult fr = model.forward(b.x, Mode::Train);
        Tensor loss = cross_entropy(fr.logits, b.y);
        loss_sum += loss.value() * double(b.y.size());
        const auto& ld = fr.logits.data();
        const int64_t k = fr.logits.dim(1);
        for (size_t i = 0; i < b.y.size(); ++i)
          if (argmax_row(ld.data() + int64_t(i) * k, k) == b.y[i]) ++correct;
        model.params().clear_grads();
        tape.backward(loss);
        ++step;
        result.gradflow.add(collect_layer_grad_norms(model.params(), step));
        adam.step(model.params());
      }

      EvalPass val = eval_pass(model, run.dataset, run.split.val_indices, cfg.batch_size);
      EpochRow row;
      row.epoch = epoch;
      row.train_acc = double(correct) / double(n_train);
      row.val_acc = val.acc;
      row.train_loss = loss_sum / double(n_train);
      row.val_loss = val.loss;
      row.lr = lr_epoch;
      result.rows.push_back(row);

      if (val.acc > best) {
        best = val.acc;
        result.best_epoch = epoch;
        result.best_val_acc = val.acc;
        nlohmann::json state;
        state["epoch"] = epoch;
        state["step"] = step;
        state["train_acc"] = row.train_acc;
        state["val_acc"] = row.val_acc;
        state["lr"] = adam.lr();
        state["adam_t"] = adam.step_count();
        state["plateau_best"] = plateau.best;
        state["plateau_bad"] = plateau.epochs_since_improve;
        state["early_best"] = early.best;
        state["early_bad"] = early.epochs_since_improve;
        save_checkpoint(result.checkpoint_path, cfg.to_kv(), state,
                        model_and_optim_tensors(model.params(), adam));
      }

      double lr = adam.lr();
      bool reduced = plateau.update(val.acc, lr);
      if (reduced) adam.set_lr(lr);
      bool stop = early.update(val.acc);
      if (log) {
        char line[256];
        std::snprintf(line, sizeof(line),
                      "epoch %d/%d train_acc %.4f val_acc %.4f train_loss %.4f val_loss %.4f "
                      "lr %g%s%s",
                      epoch, cfg.max_epochs, row.train_acc, row.val_acc, row.train_loss,
                      row.val_loss, lr_epoch, reduced ? " [lr reduced]" : "",
                      stop ? " [early stop]" : "");
        *log << line << "\n";
      }
      if (stop) {
        result.early_stopped = true;
        break;
      }
    }
  } catch (const NumericError& e) {
    write_diagnostic(cfg.out_dir, epoch, step, e.what(), model.params());
    throw;
  }

  // Final bundle: best weights, same val split; gap taken at the best epoch.
  CheckpointData ck = load_checkpoint(result.checkpoint_path);
  apply_checkpoint(ck, model.params());
  EvalPass val = eval_pass(model, run.dataset, run.split.val_indices, cfg.batch_size);
  PredictionSet preds = PredictionSet::make(val.probs, val.labels);
  result.final_bundle = compute_metric_bundle(preds);
  const EpochRow& brow = result.rows.at(size_t(result.best_epoch - 1));
  result.final_bundle.generalization_gap = generalization_gap(brow.train_acc, brow.val_acc);

  write_text_file(cfg.out_dir + "/metrics.csv", metrics_csv(result.rows));
  write_text_file(cfg.out_dir + "/gradflow.csv", grad_flow_csv(result.gradflow));
  write_text_file(cfg.out_dir + "/metrics.json",
                  metric_bundle_json(result.final_bundle).dump(2) + "\n");
  if (log)
    *log << "best epoch " << result.best_epoch << " val_acc " << result.best_val_acc
         << "; artifacts in " << cfg.out_dir << "\n";
  return result;
}

RunConfig config_from_checkpoint(const CheckpointData& ck) {
  return RunConfig::from_kv(ck.config);
}

EvalResult eval_run(const RunConfig& cfg, const std::string& checkpoint_path, std::ostream* log) {
  cfg.validate();
  NumericModeGuard guard(cfg.numeric_mode());
  CheckpointData ck = load_checkpoint(checkpoint_path);
  BuiltRun run = build_run(cfg);
  apply_checkpoint(ck, run.model->params());
  EvalPass val = eval_pass(*run.model, run.dataset, run.split.val_indices, cfg.batch_size);
  PredictionSet preds = PredictionSet::make(val.probs, val.labels);
  EvalResult out;
  out.bundle = compute_metric_bundle(preds);
  if (ck.state.contains("train_acc") && ck.state.contains("val_acc"))
    out.bundle.generalization_gap = generalization_gap(ck.state["train_acc"].get<double>(),
                                                       ck.state["val_acc"].get<double>());
  out.examples = int64_t(run.split.val_indices.size());
  if (log)
    *log << "evaluated " << out.examples << " examples from the validation split\n";
  return out;
}

DiagnoseResult diagnose_run(const RunConfig& cfg, const std::string& checkpoint_path,
                            std::ostream* log) {
  cfg.validate();
  NumericModeGuard guard(cfg.numeric_mode());
  BuiltRun run = build_run(cfg);
  if (!checkpoint_path.empty()) {
    CheckpointData ck = load_checkpoint(checkpoint_path);
    apply_checkpoint(ck, run.model->params());
  }
  ClassifierModel& model = *run.model;

  auto batches = batch_indices(run.split.epoch_order(cfg.seed, 1), cfg.batch_size);
  batches.erase(std::remove_if(batches.begin(), batches.end(),
                               [](const auto& b) { return b.size() < 2; }),
                batches.end());
  if (batches.empty()) throw std::invalid_argument("diagnose: no usable batches");

  DiagnoseResult out;
  for (int s = 1; s <= cfg.diag_steps; ++s) {
    const auto& bidx = batches[size_t((s - 1) % int(batches.size()))];
    Batch b = gather(run.dataset, bidx);
    Tape tape;
    TapeScope scope(tape);
    ForwardResult fr = model.forward(b.x, Mode::Train);
    Tensor loss = cross_entropy(fr.logits, b.y);
    model.params().clear_grads();
    tape.backward(loss);
    out.history.add(collect_layer_grad_norms(model.params(), s));
  }
  out.report = aggregate_history(out.history);
  if (log) {
    char line[160];
    std::snprintf(line, sizeof(line), "probed %d steps; GHS %.3f (%lld/%zu layers healthy)",
                  cfg.diag_steps, out.report.ghs, (long long)out.report.healthy,
                  out.report.records.size());
    *log << line << "\n";
  }
  return out;
}

}  // namespace gradattn
