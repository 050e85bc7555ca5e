#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include <json.hpp>

#include "ctxgcd/dataset.hpp"
#include "ctxgcd/error.hpp"
#include "ctxgcd/trainer.hpp"

namespace ctxgcd {

/// Everything needed to reproduce a run. Serializes to a single JSON object;
/// missing keys take defaults, unknown keys are rejected.
struct ExperimentConfig {
  GenConfig dataset;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int checkpoint_every = 0;  // epochs between intermediate checkpoints; 0 = final only
};

namespace detail {

class StrictReader {
 public:
  StrictReader(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(ErrorCode::ConfigError, "'" + path_ + "' must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ConfigError, "'" + path_ + key + "': " + e.what());
    }
  }

  template <class F>
  void section(const std::string& key, F&& fn) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    StrictReader sub(obj_.at(key), path_ + key + ".");
    fn(sub);
    sub.finish();
  }

  void finish() const {
    for (const auto& item : obj_.items()) {
      if (!seen_.contains(item.key())) fail(ErrorCode::ConfigError, "unknown config key '" + path_ + item.key() + "'");
    }
  }

 private:
  const nlohmann::json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::string mining_space_name(MiningSpace m) { return m == MiningSpace::Clean ? "clean" : "view_a"; }

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  const auto& l = t.loss;
  return {
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"checkpoint_every", c.checkpoint_every},
      {"dataset",
       {{"num_classes", c.dataset.num_classes},
        {"num_old", c.dataset.num_old},
        {"dim", c.dataset.dim},
        {"n_per_class", c.dataset.n_per_class},
        {"class_sep", c.dataset.class_sep},
        {"sigma", c.dataset.sigma},
        {"labeled_ratio", c.dataset.labeled_ratio}}},
      {"augment", {{"noise_sigma", t.augment.noise_sigma}, {"dropout_prob", t.augment.dropout_prob}}},
      {"model",
       {{"hidden_dim", t.model.hidden_dim},
        {"proj_dim", t.model.proj_dim},
        {"encoder_depth", t.model.encoder_depth},
        {"proj_depth", t.model.proj_depth}}},
      {"loss",
       {{"tau_u", l.tau_u},
        {"tau_sup", l.tau_sup},
        {"tau_s", l.tau_s},
        {"tau_proto", l.tau_proto},
        {"lambda", l.lambda},
        {"epsilon", l.epsilon},
        {"delta", l.delta},
        {"lambda_n", l.lambda_n},
        {"lambda_c", l.lambda_c},
        {"hinge_clamp", l.hinge_clamp},
        {"detach_teacher", l.detach_teacher}}},
      {"batch", {{"q", t.batch.q}, {"k_batch", t.batch.k_batch}, {"M", t.batch.M}}},
      {"train",
       {{"epochs", t.epochs},
        {"warmup_epochs", t.warmup_epochs},
        {"lr0", t.lr0},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"freeze_lr", t.freeze_lr},
        {"steps_per_epoch", t.steps_per_epoch},
        {"k_nn", t.k_nn},
        {"mining_space", detail::mining_space_name(t.mining_space)},
        {"teacher_temp",
         {{"start", t.teacher.start}, {"end", t.teacher.end}, {"warm_epochs", t.teacher.warm_epochs}}}}},
  };
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  auto& t = c.train;
  auto& l = t.loss;
  detail::StrictReader r(j, "");
  r.get("seed", c.seed);
  r.get("out_dir", c.out_dir);
  r.get("checkpoint_every", c.checkpoint_every);
  r.section("dataset", [&](detail::StrictReader& s) {
    s.get("num_classes", c.dataset.num_classes);
    s.get("num_old", c.dataset.num_old);
    s.get("dim", c.dataset.dim);
    s.get("n_per_class", c.dataset.n_per_class);
    s.get("class_sep", c.dataset.class_sep);
    s.get("sigma", c.dataset.sigma);
    s.get("labeled_ratio", c.dataset.labeled_ratio);
  });
  r.section("augment", [&](detail::StrictReader& s) {
    s.get("noise_sigma", t.augment.noise_sigma);
    s.get("dropout_prob", t.augment.dropout_prob);
  });
  r.section("model", [&](detail::StrictReader& s) {
    s.get("hidden_dim", t.model.hidden_dim);
    s.get("proj_dim", t.model.proj_dim);
    s.get("encoder_depth", t.model.encoder_depth);
    s.get("proj_depth", t.model.proj_depth);
  });
  r.section("loss", [&](detail::StrictReader& s) {
    s.get("tau_u", l.tau_u);
    s.get("tau_sup", l.tau_sup);
    s.get("tau_s", l.tau_s);
    s.get("tau_proto", l.tau_proto);
    s.get("lambda", l.lambda);
    s.get("epsilon", l.epsilon);
    s.get("delta", l.delta);
    s.get("lambda_n", l.lambda_n);
    s.get("lambda_c", l.lambda_c);
    s.get("hinge_clamp", l.hinge_clamp);
    s.get("detach_teacher", l.detach_teacher);
  });
  r.section("batch", [&](detail::StrictReader& s) {
    s.get("q", t.batch.q);
    s.get("k_batch", t.batch.k_batch);
    s.get("M", t.batch.M);
  });
  r.section("train", [&](detail::StrictReader& s) {
    s.get("epochs", t.epochs);
    s.get("warmup_epochs", t.warmup_epochs);
    s.get("lr0", t.lr0);
    s.get("momentum", t.momentum);
    s.get("weight_decay", t.weight_decay);
    s.get("freeze_lr", t.freeze_lr);
    s.get("steps_per_epoch", t.steps_per_epoch);
    s.get("k_nn", t.k_nn);
    std::string space = detail::mining_space_name(t.mining_space);
    s.get("mining_space", space);
    if (space == "clean") t.mining_space = MiningSpace::Clean;
    else if (space == "view_a") t.mining_space = MiningSpace::ViewA;
    else fail(ErrorCode::ConfigError, "train.mining_space must be 'view_a' or 'clean'");
    s.section("teacher_temp", [&](detail::StrictReader& tt) {
      tt.get("start", t.teacher.start);
      tt.get("end", t.teacher.end);
      tt.get("warm_epochs", t.teacher.warm_epochs);
    });
  });
  r.finish();
  t.seed = c.seed;
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::IoError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

inline void write_experiment(const ExperimentConfig& c, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::IoError, "cannot write " + path.string());
  os << to_json(c).dump(2) << '\n';
}

/// Short names accepted by sweeps in addition to dotted paths ("loss.lambda_n").
inline const std::map<std::string, std::string>& param_aliases() {
  static const std::map<std::string, std::string> m = {
      {"lambda", "/loss/lambda"},          {"lambda_n", "/loss/lambda_n"},   {"lambda_c", "/loss/lambda_c"},
      {"epsilon", "/loss/epsilon"},        {"delta", "/loss/delta"},         {"tau_u", "/loss/tau_u"},
      {"tau_sup", "/loss/tau_sup"},        {"tau_s", "/loss/tau_s"},         {"tau_proto", "/loss/tau_proto"},
      {"k_nn", "/train/k_nn"},             {"k", "/train/k_nn"},             {"epochs", "/train/epochs"},
      {"warmup_epochs", "/train/warmup_epochs"}, {"lr0", "/train/lr0"},    {"momentum", "/train/momentum"},
      {"q", "/batch/q"},                   {"k_batch", "/batch/k_batch"},    {"M", "/batch/M"},
      {"noise_sigma", "/augment/noise_sigma"}, {"dropout_prob", "/augment/dropout_prob"},
      {"class_sep", "/dataset/class_sep"}, {"sigma", "/dataset/sigma"},     {"labeled_ratio", "/dataset/labeled_ratio"},
      {"hidden_dim", "/model/hidden_dim"}, {"proj_dim", "/model/proj_dim"}, {"seed", "/seed"},
  };
  return m;
}

/// Returns a copy of `c` with one parameter replaced; `value` is JSON text.
inline ExperimentConfig with_param(const ExperimentConfig& c, const std::string& key, const std::string& value) {
  std::string pointer;
  if (auto it = param_aliases().find(key); it != param_aliases().end()) {
    pointer = it->second;
  } else {
    pointer = "/" + key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
  }
  nlohmann::json j = to_json(c);
  const nlohmann::json::json_pointer ptr(pointer);
  if (!j.contains(ptr)) fail(ErrorCode::ConfigError, "unknown parameter '" + key + "'");
  try {
    j[ptr] = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    fail(ErrorCode::ConfigError, "value '" + value + "' for '" + key + "' is not valid JSON");
  }
  return experiment_from_json(j);
}

}  // namespace ctxgcd
