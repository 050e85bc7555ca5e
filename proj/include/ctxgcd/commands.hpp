#pragma once

// The operations behind the `gcd` CLI. Each writes its outputs plus the
// fully resolved config into an output directory.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ctxgcd/checkpoint.hpp"
#include "ctxgcd/config.hpp"
#include "ctxgcd/dataset.hpp"
#include "ctxgcd/eval.hpp"
#include "ctxgcd/mining.hpp"
#include "ctxgcd/trainer.hpp"

namespace ctxgcd {

namespace fs = std::filesystem;

enum class Ablation { Full, Baseline, NoLn, NoLc };

inline Ablation parse_ablation(std::string_view s) {
  if (s == "full") return Ablation::Full;
  if (s == "baseline") return Ablation::Baseline;
  if (s == "no-ln") return Ablation::NoLn;
  if (s == "no-lc") return Ablation::NoLc;
  fail(ErrorCode::ConfigError, "unknown ablation '" + std::string(s) + "' (baseline, no-ln, no-lc, full)");
}

inline ExperimentConfig apply_ablation(ExperimentConfig c, Ablation a) {
  if (a == Ablation::Baseline || a == Ablation::NoLn) c.train.loss.lambda_n = 0.0;
  if (a == Ablation::Baseline || a == Ablation::NoLc) c.train.loss.lambda_c = 0.0;
  return c;
}

inline EmbeddingFormat format_from_path(const fs::path& p) {
  std::string ext = p.extension().string();
  if (!ext.empty()) ext.erase(0, 1);
  return parse_format(ext);
}

inline GcdDataset generate_dataset(const ExperimentConfig& c) {
  Rng rng = Rng(c.seed).split(0xda7a);
  return gen_gaussian_gcd(c.dataset, rng);
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot write " + path.string());
  os << text;
}

inline void write_metrics(const GcdMetrics& m, const fs::path& dir) {
  write_text(dir / "metrics.json", m.to_json().dump(2) + "\n");
  write_text(dir / "metrics.csv", GcdMetrics::csv_header() + "\n" + m.csv_row() + "\n");
}

inline fs::path cmd_gen(const ExperimentConfig& c, const fs::path& out_dir, EmbeddingFormat fmt) {
  const GcdDataset ds = generate_dataset(c);
  ensure_dir(out_dir);
  const fs::path path = out_dir / ("dataset." + std::string(format_extension(fmt)));
  save_embeddings(ds, path, fmt);
  write_experiment(c, out_dir / "config.json");
  return path;
}

struct TrainRequest {
  std::optional<fs::path> data;  // ingest instead of generating
  std::optional<EmbeddingFormat> format;
  Ablation ablation = Ablation::Full;
};

struct TrainOutcome {
  GcdMetrics metrics;
  fs::path checkpoint;
  fs::path log;
};

inline TrainOutcome cmd_train(const ExperimentConfig& base, const fs::path& out_dir, const TrainRequest& req = {}) {
  const ExperimentConfig c = apply_ablation(base, req.ablation);
  const GcdDataset ds = req.data ? load_embeddings(*req.data, req.format.value_or(format_from_path(*req.data)))
                                 : generate_dataset(c);
  ensure_dir(out_dir);
  write_experiment(c, out_dir / "config.json");

  TrainOutcome out;
  out.log = out_dir / "train_log.jsonl";
  out.checkpoint = out_dir / "checkpoint.json";
  std::ofstream log(out.log);
  if (!log) fail(ErrorCode::IoError, "cannot write " + out.log.string());
  const std::size_t steps = steps_per_epoch(ds, c.train);
  const TrainResult res = train(ds, c.train, [&](const TrainLogRecord& r, const ModelParams& p) {
    log << r.to_json().dump() << '\n';
    const bool epoch_end = (static_cast<std::size_t>(r.step) + 1) % steps == 0;
    if (c.checkpoint_every > 0 && epoch_end && (r.epoch + 1) % c.checkpoint_every == 0 && r.epoch + 1 < c.train.epochs) {
      save_checkpoint(p, out_dir / ("checkpoint_epoch_" + std::to_string(r.epoch + 1) + ".json"));
    }
  });
  save_checkpoint(res.params, out.checkpoint);
  out.metrics = evaluate(res.params, ds, c.train.loss.tau_s);
  write_metrics(out.metrics, out_dir);
  return out;
}

/// Predictions file: CSV with header `pred,label`, one row per instance.
inline GcdMetrics cmd_eval_predictions(const fs::path& path, const std::vector<int>& old_classes) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line)) fail(ErrorCode::ParseError, "line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "pred,label") fail(ErrorCode::ParseError, "line 1: header must be 'pred,label'");
  std::vector<int> pred, truth;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto toks = detail::split_csv(line);
    if (toks.size() != 2) fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected 2 fields");
    pred.push_back(detail::parse_number<int>(toks[0], line_no));
    truth.push_back(detail::parse_number<int>(toks[1], line_no));
  }
  return gcd_accuracy(pred, truth, old_classes);
}

inline GcdMetrics cmd_eval_model(const fs::path& data, std::optional<EmbeddingFormat> fmt, const fs::path& checkpoint,
                                 double tau_s) {
  const GcdDataset ds = load_embeddings(data, fmt.value_or(format_from_path(data)));
  const ModelParams p = load_checkpoint(checkpoint);
  if (p.input_dim() != ds.dim()) fail(ErrorCode::ShapeMismatch, "checkpoint input width differs from the dataset");
  return evaluate(p, ds, tau_s);
}

struct MineRequest {
  fs::path data;
  std::optional<EmbeddingFormat> format;
  std::optional<fs::path> checkpoint;  // fresh model from the config seed otherwise
  std::size_t k_nn = 10;
};

/// Reciprocal graph of the whole dataset in the model's projected space,
/// one JSON object per row: {"i", "reciprocal", "pseudo_label"}.
inline fs::path cmd_mine(const ExperimentConfig& c, const fs::path& out_dir, const MineRequest& req) {
  const GcdDataset ds = load_embeddings(req.data, req.format.value_or(format_from_path(req.data)));
  ModelParams p;
  if (req.checkpoint) {
    p = load_checkpoint(*req.checkpoint);
  } else {
    Rng rng = init_rng(c.seed);
    p = init_model(ds.dim(), static_cast<std::size_t>(ds.num_classes), c.train.model, rng);
  }
  if (p.input_dim() != ds.dim()) fail(ErrorCode::ShapeMismatch, "checkpoint input width differs from the dataset");
  const auto [h, z] = embed(p, ds.points);
  const Mat probs = classify(p, h, c.train.loss.tau_s);
  const NeighborContext ctx = mine_context(z, probs, probs, req.k_nn);

  ensure_dir(out_dir);
  const fs::path path = out_dir / "reciprocal.jsonl";
  std::ofstream os(path);
  if (!os) fail(ErrorCode::IoError, "cannot write " + path.string());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << nlohmann::json{{"i", i}, {"reciprocal", ctx.reciprocal[i]}, {"pseudo_label", ctx.pseudo_labels[i]}}.dump() << '\n';
  }
  write_experiment(c, out_dir / "config.json");
  return path;
}

using ParamGrid = std::vector<std::pair<std::string, std::vector<std::string>>>;

/// "key=v1,v2,v3" -> (key, [v1, v2, v3]).
inline std::pair<std::string, std::vector<std::string>> parse_grid_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    fail(ErrorCode::ConfigError, "grid axis must look like key=v1,v2 (got '" + spec + "')");
  }
  std::vector<std::string> values;
  for (auto v : detail::split_csv(std::string_view(spec).substr(eq + 1))) values.emplace_back(v);
  return {spec.substr(0, eq), values};
}

/// Trains every point of the Cartesian grid (first axis slowest) and writes
/// one CSV row of metrics per point.
inline fs::path cmd_sweep(const ExperimentConfig& c, const ParamGrid& grid, const fs::path& out_dir,
                          Ablation ablation = Ablation::Full) {
  if (grid.empty()) fail(ErrorCode::ConfigError, "sweep needs at least one grid axis");
  for (const auto& [key, values] : grid) {
    if (values.empty()) fail(ErrorCode::ConfigError, "grid axis '" + key + "' has no values");
    with_param(c, key, values.front());  // validates the key up front
  }
  ensure_dir(out_dir);
  write_experiment(c, out_dir / "config.json");

  std::string csv;
  for (const auto& [key, values] : grid) csv += key + ",";
  csv += GcdMetrics::csv_header() + "\n";

  std::size_t total = 1;
  for (const auto& axis : grid) total *= axis.second.size();
  for (std::size_t point = 0; point < total; ++point) {
    // mixed-radix decode, last axis fastest
    std::vector<std::size_t> pos(grid.size());
    for (std::size_t a = grid.size(), rest = point; a-- > 0;) {
      pos[a] = rest % grid[a].second.size();
      rest /= grid[a].second.size();
    }
    ExperimentConfig pc = c;
    std::string prefix;
    for (std::size_t a = 0; a < grid.size(); ++a) {
      pc = with_param(pc, grid[a].first, grid[a].second[pos[a]]);
      prefix += grid[a].second[pos[a]] + ",";
    }
    spdlog::info("sweep point {}: {}", point, prefix);
    TrainRequest req;
    req.ablation = ablation;
    const TrainOutcome o = cmd_train(pc, out_dir / ("point_" + std::to_string(point)), req);
    csv += prefix + o.metrics.csv_row() + "\n";
  }
  const fs::path path = out_dir / "sweep.csv";
  write_text(path, csv);
  return path;
}

}  // namespace ctxgcd
