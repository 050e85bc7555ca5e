#pragma once

// Checkpoint = JSON shape metadata plus an adjacent blob of little-endian
// float64 parameters in ModelParams::flatten() order.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "ctxgcd/dataset.hpp"
#include "ctxgcd/error.hpp"
#include "ctxgcd/model.hpp"

namespace ctxgcd {

inline std::filesystem::path blob_path_for(const std::filesystem::path& json_path) {
  std::filesystem::path p = json_path;
  p.replace_extension(".bin");
  return p;
}

inline void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  auto layers = [](const std::vector<DenseLayer>& stack) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : stack) arr.push_back({{"in", l.in_dim()}, {"out", l.out_dim()}, {"activation", to_string(l.act)}});
    return arr;
  };
  const std::filesystem::path blob = blob_path_for(path);
  const Vec flat = params.flatten();
  nlohmann::json meta = {{"format", "ctxgcd-checkpoint"},
                         {"version", 1},
                         {"input_dim", params.input_dim()},
                         {"hidden_dim", params.hidden_dim()},
                         {"proj_dim", params.proj_dim()},
                         {"num_classes", params.num_classes()},
                         {"encoder", layers(params.encoder)},
                         {"projection", layers(params.projection)},
                         {"parameter_count", flat.size()},
                         {"blob", blob.filename().string()}};
  {
    std::ofstream os(path);
    if (!os) fail(ErrorCode::IoError, "cannot write " + path.string());
    os << meta.dump(2) << '\n';
  }
  std::ofstream bs(blob, std::ios::binary);
  if (!bs) fail(ErrorCode::IoError, "cannot write " + blob.string());
  for (double v : flat) detail::put_le(bs, std::bit_cast<std::uint64_t>(v), 8);
  if (!bs) fail(ErrorCode::IoError, "write failed for " + blob.string());
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::IoError, "cannot open checkpoint " + path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  ModelParams p;
  try {
    if (meta.at("format") != "ctxgcd-checkpoint" || meta.at("version") != 1) {
      fail(ErrorCode::ParseError, "not a version-1 ctxgcd checkpoint");
    }
    auto build = [](const nlohmann::json& arr) {
      std::vector<DenseLayer> stack;
      for (const auto& l : arr) {
        const auto in = l.at("in").get<std::size_t>();
        const auto out = l.at("out").get<std::size_t>();
        stack.push_back({Mat(out, in), Vec(out, 0.0), parse_activation(l.at("activation").get<std::string>())});
      }
      return stack;
    };
    p.encoder = build(meta.at("encoder"));
    p.projection = build(meta.at("projection"));
    p.prototypes = Mat(meta.at("num_classes").get<std::size_t>(), meta.at("hidden_dim").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  check_shapes(p);
  if (meta.at("parameter_count").get<std::size_t>() != p.parameter_count()) {
    fail(ErrorCode::ParseError, "parameter_count does not match the layer shapes");
  }

  const std::filesystem::path blob = path.parent_path() / meta.at("blob").get<std::string>();
  std::ifstream bs(blob, std::ios::binary);
  if (!bs) fail(ErrorCode::IoError, "cannot open checkpoint blob " + blob.string());
  Vec flat(p.parameter_count());
  for (double& v : flat) v = std::bit_cast<double>(detail::get_le(bs, 8, "parameter"));
  if (bs.peek() != std::char_traits<char>::eof()) fail(ErrorCode::ParseError, "trailing bytes in " + blob.string());
  if (!all_finite(flat)) fail(ErrorCode::InvariantViolation, "checkpoint holds non-finite parameters");
  p.unflatten(flat);
  return p;
}

}  // namespace ctxgcd
