#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctxgcd/error.hpp"
#include "ctxgcd/numeric.hpp"

namespace ctxgcd {

/// A GCD problem: all points, their ground truth (-1 when unknown), which
/// rows are labeled, and which classes count as "old" (seen in D^l).
struct GcdDataset {
  Mat points;
  std::vector<int> true_labels;
  std::vector<std::uint8_t> labeled_mask;
  std::vector<int> old_classes;  // sorted, unique
  int num_classes = 0;

  std::size_t size() const { return points.rows; }
  std::size_t dim() const { return points.cols; }

  bool is_old(int c) const { return std::binary_search(old_classes.begin(), old_classes.end(), c); }
  bool is_labeled(std::size_t i) const { return labeled_mask[i] != 0; }

  std::vector<std::size_t> labeled_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (is_labeled(i)) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> unlabeled_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (!is_labeled(i)) out.push_back(i);
    return out;
  }

  friend bool operator==(const GcdDataset&, const GcdDataset&) = default;
};

struct ValidateOptions {
  bool require_unlabeled = true;
  std::optional<double> labeled_ratio;  // per-class check, generated data only
};

inline void validate(const GcdDataset& ds, const ValidateOptions& opts = {}) {
  auto violation = [](const std::string& m) { fail(ErrorCode::InvariantViolation, m); };
  const std::size_t n = ds.size();
  if (n == 0 || ds.dim() == 0) violation("dataset is empty");
  if (ds.points.data.size() != n * ds.dim()) violation("point storage does not match shape");
  if (ds.true_labels.size() != n || ds.labeled_mask.size() != n) violation("label arrays do not match row count");
  if (!all_finite(ds.points.data)) violation("non-finite feature value");
  if (ds.old_classes.empty()) violation("no old classes");
  if (!std::is_sorted(ds.old_classes.begin(), ds.old_classes.end()) ||
      std::adjacent_find(ds.old_classes.begin(), ds.old_classes.end()) != ds.old_classes.end()) {
    violation("old class set must be sorted and unique");
  }
  if (static_cast<int>(ds.old_classes.size()) > ds.num_classes) violation("more old classes than K_u");
  for (int c : ds.old_classes)
    if (c < 0 || c >= ds.num_classes) violation("old class id out of range: " + std::to_string(c));
  std::size_t unlabeled = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = ds.true_labels[i];
    if (y < -1 || y >= ds.num_classes) violation("row " + std::to_string(i) + " label out of range");
    if (ds.is_labeled(i)) {
      if (y < 0) violation("row " + std::to_string(i) + " is labeled but has no ground truth");
      if (!ds.is_old(y)) violation("row " + std::to_string(i) + " is a labeled point of novel class " + std::to_string(y));
    } else {
      ++unlabeled;
    }
  }
  if (opts.require_unlabeled && unlabeled == 0) violation("no unlabeled points");
  if (opts.labeled_ratio) {
    for (int c : ds.old_classes) {
      std::size_t members = 0, labeled = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (ds.true_labels[i] != c) continue;
        ++members;
        labeled += ds.is_labeled(i);
      }
      const double want = *opts.labeled_ratio * static_cast<double>(members);
      if (std::abs(static_cast<double>(labeled) - want) > 1.0) {
        violation("class " + std::to_string(c) + " labeled fraction off the configured ratio");
      }
    }
  }
}

struct GenConfig {
  int num_classes = 6;
  int num_old = 3;
  int dim = 16;
  int n_per_class = 100;
  double class_sep = 8.0;
  double sigma = 1.0;
  double labeled_ratio = 0.5;
};

/// Class means on a sphere of radius class_sep (rejection-sampled until every
/// pair is at least class_sep apart), isotropic Gaussian clouds around them.
/// Classes [0, num_old) are old; within each old class round(ratio * n)
/// members are labeled, chosen uniformly.
inline GcdDataset gen_gaussian_gcd(const GenConfig& cfg, Rng& rng, Mat* means_out = nullptr) {
  if (cfg.num_old < 1 || cfg.num_old > cfg.num_classes) {
    fail(ErrorCode::ConfigError, "need 1 <= K_old <= K_u (got K_old=" + std::to_string(cfg.num_old) +
                                     ", K_u=" + std::to_string(cfg.num_classes) + ")");
  }
  if (cfg.dim < 1 || cfg.n_per_class < 1) fail(ErrorCode::ConfigError, "dim and n_per_class must be positive");
  if (cfg.sigma < 0.0 || cfg.class_sep < 0.0) fail(ErrorCode::ConfigError, "sigma and class_sep must be nonnegative");
  if (cfg.labeled_ratio < 0.0 || cfg.labeled_ratio > 1.0) fail(ErrorCode::ConfigError, "labeled_ratio must be in [0,1]");

  const auto k = static_cast<std::size_t>(cfg.num_classes);
  const auto d = static_cast<std::size_t>(cfg.dim);
  const double radius = std::max(cfg.class_sep, 1e-12);
  constexpr int kMaxTries = 10000;

  Mat means(k, d);
  for (std::size_t c = 0; c < k; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
      Vec dir(d);
      for (double& v : dir) v = rng.normal();
      if (norm2(dir) <= kZeroNormThreshold) continue;
      dir = l2_normalize(dir);
      placed = true;
      for (std::size_t o = 0; o < c && placed; ++o) {
        double dist2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = radius * dir[j] - means(o, j);
          dist2 += diff * diff;
        }
        placed = std::sqrt(dist2) >= cfg.class_sep;
      }
      if (placed)
        for (std::size_t j = 0; j < d; ++j) means(c, j) = radius * dir[j];
    }
    if (!placed) {
      fail(ErrorCode::InfeasibleSeparation,
           "could not place class " + std::to_string(c) + " mean at separation " + std::to_string(cfg.class_sep));
    }
  }

  const auto per = static_cast<std::size_t>(cfg.n_per_class);
  GcdDataset ds;
  ds.num_classes = cfg.num_classes;
  ds.points = Mat(k * per, d);
  ds.true_labels.resize(k * per);
  ds.labeled_mask.assign(k * per, 0);
  for (int c = 0; c < cfg.num_old; ++c) ds.old_classes.push_back(c);

  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t m = 0; m < per; ++m) {
      const std::size_t i = c * per + m;
      ds.true_labels[i] = static_cast<int>(c);
      for (std::size_t j = 0; j < d; ++j) ds.points(i, j) = means(c, j) + cfg.sigma * rng.normal();
    }
  }
  const auto n_labeled = static_cast<std::size_t>(std::llround(cfg.labeled_ratio * static_cast<double>(per)));
  for (int c = 0; c < cfg.num_old; ++c) {
    for (std::size_t m : rng.sample_without_replacement(per, n_labeled)) {
      ds.labeled_mask[static_cast<std::size_t>(c) * per + m] = 1;
    }
  }
  validate(ds, {.require_unlabeled = false, .labeled_ratio = cfg.labeled_ratio});
  if (means_out) *means_out = std::move(means);
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  double noise_sigma = 0.0;
  double dropout_prob = 0.0;
};

struct ViewPair {
  Mat view_a;
  Mat view_b;
  std::vector<std::size_t> source_indices;
};

inline Mat gather_rows(const Mat& m, std::span<const std::size_t> idx) {
  Mat out(idx.size(), m.cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = m.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

inline Mat augment_view(const Mat& rows, const AugmentConfig& cfg, Rng& rng) {
  Mat out = rows;
  for (double& v : out.data) {
    if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng.normal();
    if (cfg.dropout_prob > 0.0 && rng.bernoulli(cfg.dropout_prob)) v = 0.0;
  }
  return out;
}

inline ViewPair augment_pair(const Mat& rows, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.noise_sigma < 0.0 || cfg.dropout_prob < 0.0 || cfg.dropout_prob >= 1.0) {
    fail(ErrorCode::ConfigError, "augmentation needs noise_sigma >= 0 and dropout_prob in [0,1)");
  }
  ViewPair vp;
  const Rng base(rng.next_u64());
  Rng ra = base.split(0xa);
  Rng rb = base.split(0xb);
  vp.view_a = augment_view(rows, cfg, ra);
  vp.view_b = augment_view(rows, cfg, rb);
  vp.source_indices.resize(rows.rows);
  for (std::size_t i = 0; i < rows.rows; ++i) vp.source_indices[i] = i;
  return vp;
}

inline ViewPair augment_pair(const GcdDataset& ds, std::span<const std::size_t> indices, const AugmentConfig& cfg,
                             Rng& rng) {
  ViewPair vp = augment_pair(gather_rows(ds.points, indices), cfg, rng);
  vp.source_indices.assign(indices.begin(), indices.end());
  return vp;
}

// ---------------------------------------------------------------------------
// Embedding files

enum class EmbeddingFormat { Csv, Jsonl, Bin };

inline EmbeddingFormat parse_format(std::string_view s) {
  if (s == "csv") return EmbeddingFormat::Csv;
  if (s == "jsonl") return EmbeddingFormat::Jsonl;
  if (s == "bin") return EmbeddingFormat::Bin;
  fail(ErrorCode::ConfigError, "unknown format '" + std::string(s) + "' (expected csv, jsonl or bin)");
}

inline std::string_view format_extension(EmbeddingFormat f) {
  switch (f) {
    case EmbeddingFormat::Csv: return "csv";
    case EmbeddingFormat::Jsonl: return "jsonl";
    case EmbeddingFormat::Bin: return "bin";
  }
  return "";
}

/// Text formats carry no class metadata; these fill it in. Without them,
/// K_u = max label + 1 and the old set is the set of labeled classes.
struct LoadOptions {
  std::optional<int> num_classes;
  std::optional<std::vector<int>> old_classes;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(std::string_view tok, std::size_t line) {
  T v{};
  while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t')) tok.remove_prefix(1);
  while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t' || tok.back() == '\r')) tok.remove_suffix(1);
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
    fail(ErrorCode::ParseError, "line " + std::to_string(line) + ": bad number '" + std::string(tok) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split_csv(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(',', start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

struct RawRow {
  int label;
  bool labeled;
  Vec features;
};

inline GcdDataset assemble(std::vector<RawRow>& rows, const LoadOptions& opts) {
  if (rows.empty()) fail(ErrorCode::InvariantViolation, "file has no data rows");
  GcdDataset ds;
  const std::size_t d = rows.front().features.size();
  ds.points = Mat(rows.size(), d);
  int max_label = -1;
  std::set<int> labeled_classes;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].features.begin(), rows[i].features.end(), ds.points.row(i).begin());
    ds.true_labels.push_back(rows[i].label);
    ds.labeled_mask.push_back(rows[i].labeled ? 1 : 0);
    max_label = std::max(max_label, rows[i].label);
    if (rows[i].labeled) labeled_classes.insert(rows[i].label);
  }
  ds.num_classes = opts.num_classes.value_or(max_label + 1);
  if (opts.old_classes) {
    ds.old_classes = *opts.old_classes;
    std::sort(ds.old_classes.begin(), ds.old_classes.end());
    ds.old_classes.erase(std::unique(ds.old_classes.begin(), ds.old_classes.end()), ds.old_classes.end());
  } else {
    ds.old_classes.assign(labeled_classes.begin(), labeled_classes.end());
  }
  validate(ds);
  return ds;
}

inline void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  for (int b = 0; b < bytes; ++b) os.put(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline std::uint64_t get_le(std::istream& is, int bytes, const char* what) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) fail(ErrorCode::ParseError, std::string("truncated file reading ") + what);
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}

inline constexpr std::array<char, 4> kBinMagic = {'G', 'C', 'D', 'E'};
inline constexpr std::uint16_t kBinVersion = 1;

}  // namespace detail

inline void save_embeddings(const GcdDataset& ds, const std::filesystem::path& path, EmbeddingFormat fmt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  const std::size_t d = ds.dim();
  switch (fmt) {
    case EmbeddingFormat::Csv: {
      os << "label,is_labeled";
      for (std::size_t j = 0; j < d; ++j) os << ",f" << j;
      os << '\n';
      for (std::size_t i = 0; i < ds.size(); ++i) {
        os << ds.true_labels[i] << ',' << int(ds.labeled_mask[i]);
        for (double v : ds.points.row(i)) os << ',' << detail::format_double(v);
        os << '\n';
      }
      break;
    }
    case EmbeddingFormat::Jsonl: {
      for (std::size_t i = 0; i < ds.size(); ++i) {
        os << "{\"label\":" << ds.true_labels[i] << ",\"is_labeled\":" << int(ds.labeled_mask[i]) << ",\"features\":[";
        for (std::size_t j = 0; j < d; ++j) os << (j ? "," : "") << detail::format_double(ds.points(i, j));
        os << "]}\n";
      }
      break;
    }
    case EmbeddingFormat::Bin: {
      os.write(detail::kBinMagic.data(), 4);
      detail::put_le(os, detail::kBinVersion, 2);
      detail::put_le(os, ds.size(), 8);
      detail::put_le(os, d, 8);
      detail::put_le(os, static_cast<std::uint32_t>(ds.num_classes), 4);
      detail::put_le(os, static_cast<std::uint32_t>(ds.old_classes.size()), 4);
      for (int c : ds.old_classes) detail::put_le(os, static_cast<std::uint32_t>(c), 4);
      for (std::size_t i = 0; i < ds.size(); ++i) {
        detail::put_le(os, static_cast<std::uint32_t>(ds.true_labels[i]), 4);
        detail::put_le(os, ds.labeled_mask[i] ? 1 : 0, 1);
        for (double v : ds.points.row(i)) detail::put_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
      }
      break;
    }
  }
  if (!os) fail(ErrorCode::IoError, "write failed for " + path.string());
}

inline GcdDataset load_embeddings(const std::filesystem::path& path, EmbeddingFormat fmt, const LoadOptions& opts = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());

  if (fmt == EmbeddingFormat::Bin) {
    std::array<char, 4> magic{};
    is.read(magic.data(), 4);
    if (!is || magic != detail::kBinMagic) fail(ErrorCode::ParseError, "bad magic bytes in " + path.string());
    const auto version = detail::get_le(is, 2, "version");
    if (version != detail::kBinVersion) fail(ErrorCode::ParseError, "unsupported version " + std::to_string(version));
    const auto n = detail::get_le(is, 8, "N");
    const auto d = detail::get_le(is, 8, "D");
    const auto k_u = detail::get_le(is, 4, "K_u");
    const auto k_old = detail::get_le(is, 4, "K_old");
    if (d == 0 || k_old > k_u) fail(ErrorCode::ParseError, "inconsistent header in " + path.string());
    GcdDataset ds;
    ds.num_classes = static_cast<int>(k_u);
    for (std::uint64_t c = 0; c < k_old; ++c) ds.old_classes.push_back(static_cast<int>(detail::get_le(is, 4, "old class id")));
    ds.points = Mat(n, d);
    ds.true_labels.resize(n);
    ds.labeled_mask.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      ds.true_labels[i] = static_cast<std::int32_t>(static_cast<std::uint32_t>(detail::get_le(is, 4, "label")));
      ds.labeled_mask[i] = static_cast<std::uint8_t>(detail::get_le(is, 1, "is_labeled"));
      if (ds.labeled_mask[i] > 1) fail(ErrorCode::ParseError, "record " + std::to_string(i) + ": is_labeled not 0/1");
      for (std::uint64_t j = 0; j < d; ++j) {
        ds.points(i, j) = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(is, 4, "feature")));
      }
    }
    if (is.peek() != std::char_traits<char>::eof()) fail(ErrorCode::ParseError, "trailing bytes in " + path.string());
    if (opts.num_classes) ds.num_classes = *opts.num_classes;
    if (opts.old_classes) {
      ds.old_classes = *opts.old_classes;
    }
    std::sort(ds.old_classes.begin(), ds.old_classes.end());
    validate(ds);
    return ds;
  }

  std::vector<detail::RawRow> rows;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> dim;
  auto check_dim = [&](std::size_t got) {
    if (got == 0) fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": no features");
    if (dim && *dim != got) {
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected " + std::to_string(*dim) +
                                      " features, got " + std::to_string(got));
    }
    dim = got;
  };
  auto check_flag = [&](int flag) {
    if (flag != 0 && flag != 1) fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": is_labeled must be 0 or 1");
  };

  if (fmt == EmbeddingFormat::Csv) {
    if (!std::getline(is, line)) fail(ErrorCode::ParseError, "line 1: missing header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv(line);
    if (header.size() < 3 || header[0] != "label" || header[1] != "is_labeled") {
      fail(ErrorCode::ParseError, "line 1: header must start with label,is_labeled,f0");
    }
    for (std::size_t j = 2; j < header.size(); ++j) {
      if (header[j] != "f" + std::to_string(j - 2)) fail(ErrorCode::ParseError, "line 1: unexpected column " + std::string(header[j]));
    }
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto toks = detail::split_csv(line);
      if (toks.size() != header.size()) {
        fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " fields");
      }
      detail::RawRow r{detail::parse_number<int>(toks[0], line_no), false, {}};
      const int flag = detail::parse_number<int>(toks[1], line_no);
      check_flag(flag);
      r.labeled = flag == 1;
      for (std::size_t j = 2; j < toks.size(); ++j) r.features.push_back(detail::parse_number<double>(toks[j], line_no));
      check_dim(r.features.size());
      rows.push_back(std::move(r));
    }
  } else {
    while (std::getline(is, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
      }
      try {
        detail::RawRow r{obj.at("label").get<int>(), false, obj.at("features").get<Vec>()};
        const int flag = obj.at("is_labeled").get<int>();
        check_flag(flag);
        r.labeled = flag == 1;
        check_dim(r.features.size());
        rows.push_back(std::move(r));
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  return detail::assemble(rows, opts);
}

}  // namespace ctxgcd
