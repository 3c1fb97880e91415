#include <CLI11.hpp>

#include "evmatch/cli.hpp"

// evmatch: event feature matching at desk scale.
//   synth  - generate a synthetic wide-baseline event dataset
//   train  - train the matcher on a generated dataset
//   match  - match two inputs (EVT1 events or PGM image) with a checkpoint
//   eval   - relative-pose benchmark over a dataset
//   flops  - spatial-attention FLOPs report for one pair
// Exit codes: 0 success, 1 usage error, 2 runtime error.

int main(int argc, char** argv) {
  CLI::App app{"evmatch: motion-robust event feature matching (desk scale)"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--set may follow the subcommand

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "config file (key = value lines)");
  app.add_option("--set", overrides, "override config entries, key=value");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string out_dir;
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "train the matcher");
  std::string data_dir, out_ckpt, resume_ckpt;
  train->add_option("--data", data_dir, "dataset directory (with manifest.jsonl)")->required();
  train->add_option("--out", out_ckpt, "output checkpoint path")->required();
  train->add_option("--resume", resume_ckpt, "resume from checkpoint");

  auto* match = app.add_subcommand("match", "match two inputs");
  std::string ckpt, input_a, input_b, match_out = "matches.txt", overlay_path, interval_arg;
  match->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  match->add_option("inputA", input_a, "view A (EVT1)")->required();
  match->add_option("inputB", input_b, "view B (EVT1 or PGM)")->required();
  match->add_option("--out", match_out, "match file output");
  match->add_option("--overlay", overlay_path, "write a side-by-side PPM visualization");
  match->add_option("--interval", interval_arg, "event window in ms, e.g. 64 or 64ms");

  auto* eval = app.add_subcommand("eval", "pose benchmark over a dataset");
  std::string eval_ckpt, eval_data, report_path, sweep;
  bool oracle_gt = false;
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint");
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--out", report_path, "JSON report path");
  eval->add_option("--sweep-intervals", sweep, "comma list of interval scales, e.g. 0.5,1,2,4");
  eval->add_flag("--oracle-gt", oracle_gt, "use GT-warp oracle matches instead of the model");

  auto* flops = app.add_subcommand("flops", "spatial-attention FLOPs report");
  std::string flops_ckpt, flops_data, flops_report;
  int64_t pair_index = 0;
  flops->add_option("--checkpoint", flops_ckpt, "model checkpoint")->required();
  flops->add_option("--data", flops_data, "dataset directory")->required();
  flops->add_option("--pair", pair_index, "pair index to sample");
  flops->add_option("--out", flops_report, "JSON report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    evmatch::RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const std::string& kv : overrides) cfg.set_from_arg(kv);
    if (synth->parsed()) return evmatch::cli::cmd_synth(cfg, out_dir, std::cout);
    if (train->parsed())
      return evmatch::cli::cmd_train(cfg, data_dir, out_ckpt, resume_ckpt, std::cout);
    if (match->parsed()) {
      double interval_ms = 0;
      if (!interval_arg.empty()) {
        std::string num = interval_arg;
        if (num.size() > 2 && num.substr(num.size() - 2) == "ms") num.resize(num.size() - 2);
        interval_ms = std::stod(num);
      }
      return evmatch::cli::cmd_match(ckpt, input_a, input_b, match_out, overlay_path, interval_ms,
                                     std::cout);
    }
    if (eval->parsed())
      return evmatch::cli::cmd_eval(cfg, eval_ckpt, eval_data, report_path, oracle_gt, sweep,
                                    std::cout);
    if (flops->parsed())
      return evmatch::cli::cmd_flops(flops_ckpt, flops_data, pair_index, flops_report, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
