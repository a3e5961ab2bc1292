#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gradattn/errors.hpp"
#include "gradattn/gradcheck.hpp"
#include "gradattn/train.hpp"

namespace {

using gradattn::RunConfig;

struct CmdOpts {
  std::string config_path;
  std::string checkpoint;
  std::vector<std::string> sets;           // raw key=value overrides
  std::map<std::string, std::string> flags;  // collected convenience flags
  std::vector<std::string> cifar;
};

void add_config_opts(CLI::App* cmd, CmdOpts& o) {
  cmd->add_option("--config", o.config_path, "config file of 'key = value' lines");
  cmd->add_option("--set", o.sets, "override a config key (key=value), repeatable");
  static const std::vector<std::pair<const char*, const char*>> kFlagKeys = {
      {"--model", "model"},           {"--pe", "pe"},
      {"--dataset", "dataset"},       {"--images", "images_path"},
      {"--labels", "labels_path"},    {"--limit", "limit"},
      {"--out", "out_dir"},           {"--epochs", "max_epochs"},
      {"--batch-size", "batch_size"}, {"--lr", "lr"},
      {"--seed", "seed"},             {"--mode", "mode"},
      {"--width-scale", "width_scale"}, {"--stem", "stem"},
      {"--classes", "num_classes"},   {"--val-fraction", "val_fraction"},
      {"--steps", "diag_steps"},      {"--enc-depth", "enc_depth"},
      {"--enc-heads", "enc_heads"},   {"--enc-dim", "enc_dim"},
      {"--enc-ffn", "enc_ffn"}};
  for (const auto& [flag, key] : kFlagKeys) {
    std::string k = key;
    cmd->add_option_function<std::string>(
        flag, [&o, k](const std::string& v) { o.flags[k] = v; }, std::string("sets ") + k);
  }
  cmd->add_option("--cifar", o.cifar, "CIFAR-10 batch file, repeatable");
}

// Precedence: base (checkpoint config, if any) < --config file < flags < --set.
RunConfig merge_config(const CmdOpts& o, std::map<std::string, std::string> kv) {
  if (!o.config_path.empty())
    for (const auto& [k, v] : gradattn::parse_kv_file(o.config_path)) kv[k] = v;
  for (const auto& [k, v] : o.flags) kv[k] = v;
  if (!o.cifar.empty()) {
    std::string joined;
    for (size_t i = 0; i < o.cifar.size(); ++i) joined += (i ? ";" : "") + o.cifar[i];
    kv["cifar_paths"] = joined;
  }
  for (const auto& item : o.sets) {
    size_t eq = item.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + item + "'");
    std::string key = item.substr(0, eq);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    std::string val = item.substr(eq + 1);
    while (!val.empty() && val.front() == ' ') val.erase(val.begin());
    kv[key] = val;
  }
  return RunConfig::from_kv(kv);
}

void write_json_file(const std::string& dir, const std::string& name,
                     const nlohmann::json& j) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir + "/" + name);
  if (!out) throw gradattn::IoError("cannot write " + dir + "/" + name);
  out << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradattn: gradient-flow lab for skipless CNNs with attention read-out"};
  app.require_subcommand(1);

  CmdOpts train_o, eval_o, diag_o;
  CLI::App* cmd_train = app.add_subcommand("train", "train a model and write run artifacts");
  add_config_opts(cmd_train, train_o);
  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint, print a metric bundle");
  add_config_opts(cmd_eval, eval_o);
  cmd_eval->add_option("--checkpoint", eval_o.checkpoint, "checkpoint file")->required();
  CLI::App* cmd_gradcheck =
      app.add_subcommand("gradcheck", "finite-difference check of every registered op");
  CLI::App* cmd_diag =
      app.add_subcommand("diagnose", "probe gradient flow for N steps, report GHS");
  add_config_opts(cmd_diag, diag_o);
  cmd_diag->add_option("--checkpoint", diag_o.checkpoint, "optional checkpoint to load");

  try {
    app.parse(argc, argv);

    if (cmd_train->parsed()) {
      RunConfig cfg = merge_config(train_o, {});
      gradattn::TrainResult res = gradattn::train_run(cfg, &std::cout);
      std::cout << gradattn::metric_bundle_json(res.final_bundle).dump(2) << "\n";
    } else if (cmd_eval->parsed()) {
      gradattn::CheckpointData ck = gradattn::load_checkpoint(eval_o.checkpoint);
      RunConfig cfg = merge_config(eval_o, ck.config);
      gradattn::EvalResult res = gradattn::eval_run(cfg, eval_o.checkpoint, &std::cout);
      nlohmann::json j = gradattn::metric_bundle_json(res.bundle);
      std::cout << j.dump(2) << "\n";
      write_json_file(cfg.out_dir, "eval_metrics.json", j);
    } else if (cmd_gradcheck->parsed()) {
      gradattn::GradcheckSummary summary = gradattn::run_gradcheck_suite();
      std::cout << gradattn::gradcheck_table(summary);
      bool teeth = gradattn::gradcheck_flags_corrupted_conv();
      std::cout << "corruption probe: " << (teeth ? "DETECTED" : "MISSED") << "\n";
      if (!summary.all_pass() || !teeth) {
        std::cerr << "gradcheck failed\n";
        return gradattn::kExitNumeric;
      }
    } else if (cmd_diag->parsed()) {
      std::map<std::string, std::string> base;
      if (!diag_o.checkpoint.empty())
        base = gradattn::load_checkpoint(diag_o.checkpoint).config;
      RunConfig cfg = merge_config(diag_o, base);
      gradattn::DiagnoseResult res = gradattn::diagnose_run(cfg, diag_o.checkpoint, &std::cout);
      nlohmann::json j = gradattn::grad_report_json(res.report);
      std::cout << j.dump(2) << "\n";
      std::filesystem::create_directories(cfg.out_dir);
      std::ofstream csv(cfg.out_dir + "/gradflow.csv");
      if (!csv) throw gradattn::IoError("cannot write " + cfg.out_dir + "/gradflow.csv");
      csv << gradattn::grad_flow_csv(res.history);
      write_json_file(cfg.out_dir, "grad_report.json", j);
    }
    return gradattn::kExitOk;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : gradattn::kExitConfig;
  } catch (const gradattn::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return gradattn::kExitIo;
  } catch (const gradattn::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return gradattn::kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return gradattn::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
