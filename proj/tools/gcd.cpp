#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ctxgcd/commands.hpp"
#include "ctxgcd/log.hpp"

namespace {

using namespace ctxgcd;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;  // key=json
  bool print_config = false;
};

ExperimentConfig resolve(const GlobalOptions& g) {
  ExperimentConfig c = g.config_path.empty() ? ExperimentConfig{} : load_experiment(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorCode::ConfigError, "--set expects key=value (got '" + kv + "')");
    c = with_param(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) {
    c.seed = *g.seed;
    c.train.seed = *g.seed;
  }
  if (!g.out_dir.empty()) c.out_dir = g.out_dir;
  return c;
}

std::optional<EmbeddingFormat> optional_format(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_format(s);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  if (s.empty()) return out;
  std::size_t line = 0;
  for (auto tok : detail::split_csv(s)) out.push_back(detail::parse_number<int>(tok, line));
  return out;
}

void print_metrics(const GcdMetrics& m) { std::cout << m.to_json().dump() << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  init_logging_from_env();

  CLI::App app{"Generalized category discovery with neighbor and prototype context"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the experiment seed");
  app.add_option("--out", g.out_dir, "Output directory");
  app.add_option("--set", g.overrides, "Override one config value, key=json (repeatable)");
  app.add_flag("--print-config", g.print_config, "Print the resolved config and exit");

  const std::vector<std::string> formats = {"csv", "jsonl", "bin"};
  const std::vector<std::string> ablations = {"baseline", "no-ln", "no-lc", "full"};

  auto* gen = app.add_subcommand("gen", "Generate a synthetic Gaussian GCD dataset");
  std::string gen_format = "csv";
  gen->add_option("--format", gen_format, "Output format")->check(CLI::IsMember(formats));

  auto* train = app.add_subcommand("train", "Train a model and evaluate it on the unlabeled rows");
  std::string train_data, train_format, train_ablate = "full";
  train->add_option("--data", train_data, "Ingest this embedding file instead of generating data")->check(CLI::ExistingFile);
  train->add_option("--format", train_format, "Format of --data (default: from extension)")->check(CLI::IsMember(formats));
  train->add_option("--ablate", train_ablate, "Which context terms to keep")->check(CLI::IsMember(ablations));

  auto* eval = app.add_subcommand("eval", "Compute All/Old/New accuracy");
  std::string eval_predictions, eval_old, eval_data, eval_checkpoint, eval_format;
  eval->add_option("--predictions", eval_predictions, "CSV with header pred,label");
  eval->add_option("--old", eval_old, "Comma-separated old class ids (with --predictions)");
  eval->add_option("--data", eval_data, "Embedding file to evaluate a checkpoint on");
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint JSON (with --data)");
  eval->add_option("--format", eval_format, "Format of --data")->check(CLI::IsMember(formats));

  auto* mine = app.add_subcommand("mine", "Write the k-reciprocal graph and pseudo-labels as JSONL");
  std::string mine_data, mine_checkpoint, mine_format;
  std::optional<std::size_t> mine_k;
  mine->add_option("--data", mine_data, "Embedding file")->required();
  mine->add_option("--checkpoint", mine_checkpoint, "Checkpoint JSON (default: freshly initialized model)");
  mine->add_option("--format", mine_format, "Format of --data")->check(CLI::IsMember(formats));
  mine->add_option("--k-nn", mine_k, "Neighbors per row (default: train.k_nn)");

  auto* sweep = app.add_subcommand("sweep", "Train over a parameter grid and tabulate metrics");
  std::vector<std::string> sweep_grid;
  std::string sweep_ablate = "full";
  sweep->add_option("--grid", sweep_grid, "Axis as key=v1,v2,... (repeatable)")->required();
  sweep->add_option("--ablate", sweep_ablate, "Which context terms to keep")->check(CLI::IsMember(ablations));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const ExperimentConfig c = resolve(g);
    if (g.print_config) {
      std::cout << to_json(c).dump(2) << '\n';
      return 0;
    }
    const fs::path out = c.out_dir;

    if (*gen) {
      std::cout << cmd_gen(c, out, parse_format(gen_format)).string() << '\n';
    } else if (*train) {
      TrainRequest req;
      if (!train_data.empty()) req.data = train_data;
      req.format = optional_format(train_format);
      req.ablation = parse_ablation(train_ablate);
      print_metrics(cmd_train(c, out, req).metrics);
    } else if (*eval) {
      GcdMetrics m;
      if (!eval_predictions.empty()) {
        m = cmd_eval_predictions(eval_predictions, parse_int_list(eval_old));
      } else if (!eval_data.empty() && !eval_checkpoint.empty()) {
        m = cmd_eval_model(eval_data, optional_format(eval_format), eval_checkpoint, c.train.loss.tau_s);
      } else {
        fail(ErrorCode::ConfigError, "eval needs --predictions, or --data together with --checkpoint");
      }
      if (!g.out_dir.empty()) {
        ensure_dir(out);
        write_metrics(m, out);
        write_experiment(c, out / "config.json");
      }
      print_metrics(m);
    } else if (*mine) {
      MineRequest req;
      req.data = mine_data;
      req.format = optional_format(mine_format);
      if (!mine_checkpoint.empty()) req.checkpoint = mine_checkpoint;
      req.k_nn = mine_k.value_or(c.train.k_nn);
      std::cout << cmd_mine(c, out, req).string() << '\n';
    } else if (*sweep) {
      ParamGrid grid;
      for (const auto& axis : sweep_grid) grid.push_back(parse_grid_axis(axis));
      std::cout << cmd_sweep(c, grid, out, parse_ablation(sweep_ablate)).string() << '\n';
    }
  } catch (const GcdError& e) {
    std::cerr << nlohmann::json{{"error", to_string(e.code())}, {"message", e.what()}}.dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "Internal"}, {"message", e.what()}}.dump() << '\n';
    return 3;
  }
  return 0;
}
