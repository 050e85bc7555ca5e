#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ctxgcd/batching.hpp"
#include "ctxgcd/dataset.hpp"
#include "ctxgcd/error.hpp"
#include "ctxgcd/eval.hpp"
#include "ctxgcd/losses.hpp"
#include "ctxgcd/mining.hpp"
#include "ctxgcd/model.hpp"

namespace ctxgcd {

struct TeacherSchedule {
  double start = 0.07;
  double end = 0.04;
  int warm_epochs = 30;
};

enum class MiningSpace { ViewA, Clean };

struct TrainConfig {
  int epochs = 200;
  int warmup_epochs = 50;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool freeze_lr = false;      // keep lr0 for every epoch
  int steps_per_epoch = 0;     // 0: ceil(N / batch size)
  std::size_t k_nn = 10;
  MiningSpace mining_space = MiningSpace::ViewA;
  TeacherSchedule teacher;
  BatchConfig batch;
  LossConfig loss;
  ModelConfig model;
  AugmentConfig augment{0.5, 0.05};
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) fail(ErrorCode::ConfigError, "epochs must be positive");
    if (warmup_epochs < 0 || warmup_epochs > epochs) fail(ErrorCode::ConfigError, "need 0 <= warmup_epochs <= epochs");
    if (teacher.warm_epochs < 0 || teacher.warm_epochs > epochs) {
      fail(ErrorCode::ConfigError, "teacher warm_epochs must lie in [0, epochs]");
    }
    if (!(lr0 > 0.0)) fail(ErrorCode::ConfigError, "lr0 must be positive");
    if (momentum < 0.0 || momentum >= 1.0) fail(ErrorCode::ConfigError, "momentum must be in [0,1)");
    if (weight_decay < 0.0) fail(ErrorCode::ConfigError, "weight_decay must be nonnegative");
    if (steps_per_epoch < 0) fail(ErrorCode::ConfigError, "steps_per_epoch must be nonnegative");
    if (k_nn < 1) fail(ErrorCode::ConfigError, "k_nn must be positive");
    loss.validate();
  }
};

inline double cosine_lr(int epoch, int epochs, double lr0) {
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
}

/// Cosine interpolation from start to end over [0, warm_epochs), then flat.
inline double teacher_temp(int epoch, const TeacherSchedule& s = {}) {
  if (epoch >= s.warm_epochs) return s.end;
  const double t = static_cast<double>(epoch) / static_cast<double>(s.warm_epochs);
  return s.end + (s.start - s.end) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct TrainLogRecord {
  int epoch = 0;
  int step = 0;  // global step counter
  LossBreakdown losses;
  double lr = 0.0;
  double tau_t = 0.0;
  double wall_time = 0.0;

  nlohmann::json to_json() const {
    const auto& l = losses;
    return {{"epoch", epoch},
            {"step", step},
            {"lr", lr},
            {"tau_t", tau_t},
            {"wall_time", wall_time},
            {"losses",
             {{"rep_u", l.rep_u},
              {"rep_s", l.rep_s},
              {"cls_l", l.cls_l},
              {"cls_u", l.cls_u},
              {"entropy_term", l.entropy_term},
              {"l_n", l.l_n},
              {"l_c", l.l_c},
              {"baseline", l.baseline},
              {"total", l.total},
              {"applied", l.applied}}}};
  }
};

// Stream derivation; exposed so a single step can be replayed outside train().
inline Rng init_rng(std::uint64_t seed) { return Rng(seed).split(1); }
inline Rng step_rng(std::uint64_t seed, int epoch, int step) {
  return Rng(seed).split(2).split(static_cast<std::uint64_t>(epoch)).split(static_cast<std::uint64_t>(step));
}

inline BatchTargets targets_for(const GcdDataset& ds, std::span<const std::size_t> idx) {
  BatchTargets t;
  for (std::size_t i : idx) {
    t.labels.push_back(ds.true_labels[i]);
    t.labeled.push_back(ds.labeled_mask[i]);
  }
  return t;
}

inline std::size_t steps_per_epoch(const GcdDataset& ds, const TrainConfig& cfg) {
  if (cfg.steps_per_epoch > 0) return static_cast<std::size_t>(cfg.steps_per_epoch);
  const std::size_t b = cfg.batch.batch_size();
  return (ds.size() + b - 1) / b;
}

/// The batch a given (epoch, step) draws, with its two augmented views.
struct PreparedStep {
  BatchPlan plan;
  std::vector<std::size_t> order;
  ViewPair views;
  BatchTargets targets;
};

inline PreparedStep prepare_step(const GcdDataset& ds, const IndexLists& neighbor_index, const TrainConfig& cfg,
                                 int epoch, int step) {
  Rng rng = step_rng(cfg.seed, epoch, step);
  Rng plan_rng = rng.split(0);
  Rng aug_rng = rng.split(1);
  PreparedStep ps;
  ps.plan = build_batch(neighbor_index, cfg.batch, plan_rng);
  ps.order = ps.plan.order();
  ps.views = augment_pair(ds, ps.order, cfg.augment, aug_rng);
  ps.targets = targets_for(ds, ps.order);
  return ps;
}

/// Full-dataset neighbor index from un-augmented embeddings.
inline IndexLists refresh_neighbor_index(const ModelParams& params, const GcdDataset& ds, const BatchConfig& batch) {
  const auto [h, z] = embed(params, ds.points);
  return knn(z, neighbor_index_depth(ds.size(), batch));
}

inline ObjectiveOptions step_options(const TrainConfig& cfg, int epoch) {
  ObjectiveOptions o;
  o.context_active = epoch >= cfg.warmup_epochs;
  o.k_nn = cfg.k_nn;
  return o;
}

inline LossConfig epoch_loss_config(const TrainConfig& cfg, int epoch) {
  LossConfig l = cfg.loss;
  l.tau_t = teacher_temp(epoch, cfg.teacher);
  return l;
}

/// Momentum update in place: v = mu v + (g + wd p); p -= lr v.
inline void sgd_momentum_step(Vec& params, Vec& velocity, const Vec& grad, double lr, double momentum, double wd) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + wd * params[i];
    params[i] -= lr * velocity[i];
  }
}

struct TrainResult {
  ModelParams params;
  std::vector<TrainLogRecord> log;
};

using StepCallback = std::function<void(const TrainLogRecord&, const ModelParams&)>;

inline TrainResult train(const GcdDataset& ds, const TrainConfig& cfg, const StepCallback& on_step = {}) {
  validate(ds);
  cfg.validate();
  Rng rng = init_rng(cfg.seed);
  TrainResult res;
  res.params = init_model(ds.dim(), static_cast<std::size_t>(ds.num_classes), cfg.model, rng);
  Vec flat = res.params.flatten();
  Vec velocity(flat.size(), 0.0);
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t steps = steps_per_epoch(ds, cfg);
  int global_step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.freeze_lr ? cfg.lr0 : cosine_lr(epoch, cfg.epochs, cfg.lr0);
    const LossConfig loss_cfg = epoch_loss_config(cfg, epoch);
    const IndexLists index = refresh_neighbor_index(res.params, ds, cfg.batch);
    ObjectiveOptions opts = step_options(cfg, epoch);

    for (std::size_t s = 0; s < steps; ++s) {
      const PreparedStep ps = prepare_step(ds, index, cfg, epoch, static_cast<int>(s));
      Mat clean_z;
      if (cfg.mining_space == MiningSpace::Clean) {
        clean_z = embed(res.params, gather_rows(ds.points, ps.order)).second;
        opts.mining_embeddings = &clean_z;
      }
      const std::string where = "epoch " + std::to_string(epoch) + " step " + std::to_string(s);
      ObjectiveResult obj;
      try {
        obj = compute_objective(res.params, ps.views, ps.targets, loss_cfg, opts);
      } catch (const GcdError& e) {
        // overflowed activations surface as degenerate norms or probabilities
        if (e.code() != ErrorCode::ZeroVector && e.code() != ErrorCode::NotAProbabilityVector) throw;
        fail(ErrorCode::DivergenceDetected, "numeric breakdown at " + where + ": " + e.what());
      }
      const Vec grad = obj.grad.flatten();
      if (!std::isfinite(obj.breakdown.applied) || !all_finite(grad)) {
        fail(ErrorCode::DivergenceDetected,
             "non-finite loss or gradient at " + where + " (loss " + std::to_string(obj.breakdown.applied) + ")");
      }
      sgd_momentum_step(flat, velocity, grad, lr, cfg.momentum, cfg.weight_decay);
      if (!all_finite(flat)) fail(ErrorCode::DivergenceDetected, "parameters overflowed after the update at " + where);
      res.params.unflatten(flat);

      TrainLogRecord rec{epoch, global_step++, obj.breakdown, lr, loss_cfg.tau_t,
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
      if (on_step) on_step(rec, res.params);
      res.log.push_back(rec);
    }
    spdlog::info("epoch {:3d} lr {:.5f} tau_t {:.4f} loss {:.5f}", epoch, lr, loss_cfg.tau_t, res.log.back().losses.applied);
  }
  return res;
}

/// Predicted cluster per unlabeled row (clean inputs) and the resulting metrics.
inline GcdMetrics evaluate(const ModelParams& params, const GcdDataset& ds, double tau_s = 0.1) {
  const std::vector<std::size_t> idx = ds.unlabeled_indices();
  if (idx.empty()) fail(ErrorCode::InvariantViolation, "no unlabeled rows to evaluate");
  const std::vector<int> pred = predict(params, gather_rows(ds.points, idx), tau_s);
  std::vector<int> truth;
  for (std::size_t i : idx) truth.push_back(ds.true_labels[i]);
  return gcd_accuracy(pred, truth, ds.old_classes);
}

}  // namespace ctxgcd
