#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "ctxgcd/dataset.hpp"
#include "ctxgcd/error.hpp"
#include "ctxgcd/numeric.hpp"

namespace ctxgcd {

enum class Activation { Identity, Tanh };

inline std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  fail(ErrorCode::ConfigError, "unknown activation '" + std::string(s) + "'");
}

/// y = act(W x + b) with W stored out x in.
struct DenseLayer {
  Mat weight;
  Vec bias;
  Activation act = Activation::Identity;

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Encoder f, projection head g and the prototype bank T (one row per class).
/// Gradients use the same type.
struct ModelParams {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> projection;
  Mat prototypes;

  std::size_t input_dim() const { return encoder.front().in_dim(); }
  std::size_t hidden_dim() const { return encoder.back().out_dim(); }
  std::size_t proj_dim() const { return projection.back().out_dim(); }
  std::size_t num_classes() const { return prototypes.rows; }

  std::size_t parameter_count() const {
    std::size_t n = prototypes.data.size();
    for (const auto* part : {&encoder, &projection})
      for (const auto& l : *part) n += l.weight.data.size() + l.bias.size();
    return n;
  }

  /// Encoder weights/biases, projection weights/biases, then prototypes.
  Vec flatten() const {
    Vec out;
    out.reserve(parameter_count());
    for (const auto* part : {&encoder, &projection}) {
      for (const auto& l : *part) {
        out.insert(out.end(), l.weight.data.begin(), l.weight.data.end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
      }
    }
    out.insert(out.end(), prototypes.data.begin(), prototypes.data.end());
    return out;
  }

  void unflatten(std::span<const double> flat) {
    if (flat.size() != parameter_count()) fail(ErrorCode::ShapeMismatch, "flat parameter length mismatch");
    std::size_t at = 0;
    auto take = [&](std::vector<double>& dst) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
                flat.begin() + static_cast<std::ptrdiff_t>(at + dst.size()), dst.begin());
      at += dst.size();
    };
    for (auto* part : {&encoder, &projection}) {
      for (auto& l : *part) {
        take(l.weight.data);
        take(l.bias);
      }
    }
    take(prototypes.data);
  }

  /// Same shapes, all zeros.
  ModelParams zeros_like() const {
    ModelParams z = *this;
    for (auto* part : {&z.encoder, &z.projection}) {
      for (auto& l : *part) {
        std::fill(l.weight.data.begin(), l.weight.data.end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
      }
    }
    std::fill(z.prototypes.data.begin(), z.prototypes.data.end(), 0.0);
    return z;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct ModelConfig {
  int hidden_dim = 32;
  int proj_dim = 16;
  int encoder_depth = 2;
  int proj_depth = 2;
};

namespace detail {

inline DenseLayer init_dense(std::size_t in, std::size_t out, Activation act, Rng& rng) {
  DenseLayer l{Mat(out, in), Vec(out, 0.0), act};
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : l.weight.data) w = scale * rng.normal();
  return l;
}

inline std::vector<DenseLayer> init_stack(std::size_t in, std::size_t width, std::size_t out, int depth, Rng& rng) {
  std::vector<DenseLayer> layers;
  for (int i = 0; i < depth; ++i) {
    const bool last = i == depth - 1;
    layers.push_back(init_dense(i == 0 ? in : width, last ? out : width, last ? Activation::Identity : Activation::Tanh, rng));
  }
  return layers;
}

}  // namespace detail

/// Each stack is (depth-1) tanh layers followed by one affine layer.
/// Prototype rows start as normalized unit-Gaussian draws.
inline ModelParams init_model(std::size_t input_dim, std::size_t num_classes, const ModelConfig& cfg, Rng& rng) {
  if (cfg.hidden_dim < 1 || cfg.proj_dim < 1 || cfg.encoder_depth < 1 || cfg.proj_depth < 1 || input_dim < 1 ||
      num_classes < 1) {
    fail(ErrorCode::ConfigError, "model dimensions and depths must be positive");
  }
  const auto h = static_cast<std::size_t>(cfg.hidden_dim);
  ModelParams p;
  p.encoder = detail::init_stack(input_dim, h, h, cfg.encoder_depth, rng);
  p.projection = detail::init_stack(h, h, static_cast<std::size_t>(cfg.proj_dim), cfg.proj_depth, rng);
  p.prototypes = Mat(num_classes, h);
  for (std::size_t k = 0; k < num_classes; ++k) {
    Vec t(h);
    for (double& v : t) v = rng.normal();
    t = l2_normalize(t);
    std::copy(t.begin(), t.end(), p.prototypes.row(k).begin());
  }
  return p;
}

inline void check_shapes(const ModelParams& p) {
  auto chain = [](const std::vector<DenseLayer>& layers, const char* name) {
    if (layers.empty()) fail(ErrorCode::ShapeMismatch, std::string(name) + " has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].bias.size() != layers[i].out_dim()) fail(ErrorCode::ShapeMismatch, std::string(name) + " bias size");
      if (i > 0 && layers[i].in_dim() != layers[i - 1].out_dim()) {
        fail(ErrorCode::ShapeMismatch, std::string(name) + " layers do not chain");
      }
    }
  };
  chain(p.encoder, "encoder");
  chain(p.projection, "projection");
  if (p.projection.front().in_dim() != p.hidden_dim()) fail(ErrorCode::ShapeMismatch, "projection input != hidden dim");
  if (p.prototypes.cols != p.hidden_dim() || p.prototypes.rows == 0) fail(ErrorCode::ShapeMismatch, "prototype bank shape");
}

// ---------------------------------------------------------------------------
// Forward / backward

struct StackCache {
  std::vector<Mat> inputs;   // input to each layer
  std::vector<Mat> outputs;  // post-activation output of each layer
};

struct ViewCache {
  StackCache encoder;
  StackCache projection;
  Mat z;        // normalized projection
  Vec z_norms;  // norms of the raw projection rows
};

struct ForwardCache {
  ViewCache a;
  ViewCache b;
  std::size_t batch_size = 0;
  std::size_t parameter_count = 0;
};

struct ForwardResult {
  Mat h_a, h_b, z_a, z_b;
  ForwardCache cache;
};

namespace detail {

inline Mat dense_forward(const DenseLayer& l, const Mat& x) {
  Mat y(x.rows, l.out_dim());
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto xi = x.row(i);
    for (std::size_t o = 0; o < l.out_dim(); ++o) {
      double a = l.bias[o] + dot(l.weight.row(o), xi);
      y(i, o) = l.act == Activation::Tanh ? std::tanh(a) : a;
    }
  }
  return y;
}

inline Mat stack_forward(const std::vector<DenseLayer>& layers, const Mat& x, StackCache* cache) {
  Mat cur = x;
  for (const auto& l : layers) {
    if (cur.cols != l.in_dim()) fail(ErrorCode::ShapeMismatch, "input width does not match layer");
    Mat next = dense_forward(l, cur);
    if (cache) {
      cache->inputs.push_back(std::move(cur));
      cache->outputs.push_back(next);
    }
    cur = std::move(next);
  }
  return cur;
}

/// Accumulates parameter gradients into `grads`, returns gradient w.r.t. the stack input.
inline Mat stack_backward(const std::vector<DenseLayer>& layers, const StackCache& cache, Mat grad_out,
                          std::vector<DenseLayer>& grads) {
  for (std::size_t li = layers.size(); li-- > 0;) {
    const DenseLayer& l = layers[li];
    const Mat& x = cache.inputs[li];
    const Mat& y = cache.outputs[li];
    if (l.act == Activation::Tanh) {
      for (std::size_t t = 0; t < grad_out.data.size(); ++t) grad_out.data[t] *= 1.0 - y.data[t] * y.data[t];
    }
    DenseLayer& g = grads[li];
    Mat grad_in(x.rows, l.in_dim());
    for (std::size_t i = 0; i < x.rows; ++i) {
      const auto xi = x.row(i);
      auto gi = grad_in.row(i);
      for (std::size_t o = 0; o < l.out_dim(); ++o) {
        const double ga = grad_out(i, o);
        if (ga == 0.0) continue;
        g.bias[o] += ga;
        auto gw = g.weight.row(o);
        const auto w = l.weight.row(o);
        for (std::size_t j = 0; j < xi.size(); ++j) {
          gw[j] += ga * xi[j];
          gi[j] += ga * w[j];
        }
      }
    }
    grad_out = std::move(grad_in);
  }
  return grad_out;
}

inline Mat view_forward(const ModelParams& p, const Mat& x, ViewCache* cache, Mat* h_out) {
  Mat h = stack_forward(p.encoder, x, cache ? &cache->encoder : nullptr);
  const Mat u = stack_forward(p.projection, h, cache ? &cache->projection : nullptr);
  Vec norms;
  Mat z = normalize_rows(u, &norms);
  if (cache) {
    cache->z = z;
    cache->z_norms = std::move(norms);
  }
  *h_out = std::move(h);
  return z;
}

}  // namespace detail

/// Hidden features h = f(x) and normalized projections z = g(h)/|g(h)| for
/// a set of rows, without a cache.
inline std::pair<Mat, Mat> embed(const ModelParams& p, const Mat& x) {
  Mat h;
  Mat z = detail::view_forward(p, x, nullptr, &h);
  return {std::move(h), std::move(z)};
}

inline ForwardResult forward(const ModelParams& p, const ViewPair& batch) {
  check_shapes(p);
  if (!batch.view_a.same_shape(batch.view_b)) fail(ErrorCode::ShapeMismatch, "views differ in shape");
  if (batch.view_a.cols != p.input_dim()) {
    fail(ErrorCode::ShapeMismatch, "batch has " + std::to_string(batch.view_a.cols) + " features, encoder expects " +
                                       std::to_string(p.input_dim()));
  }
  ForwardResult r;
  r.z_a = detail::view_forward(p, batch.view_a, &r.cache.a, &r.h_a);
  r.z_b = detail::view_forward(p, batch.view_b, &r.cache.b, &r.h_b);
  r.cache.batch_size = batch.view_a.rows;
  r.cache.parameter_count = p.parameter_count();
  return r;
}

/// Upstream partials of a scalar loss w.r.t. the forward outputs. An empty
/// matrix stands for an all-zero gradient.
struct UpstreamGrads {
  Mat h_a, h_b, z_a, z_b;
  Mat prototypes;
};

inline ModelParams backward(const ModelParams& p, const ForwardCache& cache, const UpstreamGrads& up) {
  if (cache.parameter_count != p.parameter_count() || cache.a.z.cols != p.proj_dim()) {
    fail(ErrorCode::CacheMismatch, "cache does not belong to these parameters");
  }
  const std::size_t n = cache.batch_size;
  auto check = [&](const Mat& g, std::size_t cols, const char* what) {
    if (!g.data.empty() && (g.rows != n || g.cols != cols)) {
      fail(ErrorCode::CacheMismatch, std::string("upstream gradient on ") + what + " has the wrong shape");
    }
  };
  check(up.h_a, p.hidden_dim(), "h_a");
  check(up.h_b, p.hidden_dim(), "h_b");
  check(up.z_a, p.proj_dim(), "z_a");
  check(up.z_b, p.proj_dim(), "z_b");
  if (!up.prototypes.data.empty() && !up.prototypes.same_shape(p.prototypes)) {
    fail(ErrorCode::CacheMismatch, "prototype gradient shape");
  }

  ModelParams g = p.zeros_like();
  if (!up.prototypes.data.empty()) g.prototypes = up.prototypes;

  auto one_view = [&](const ViewCache& vc, const Mat& gz, const Mat& gh) {
    Mat grad_h(n, p.hidden_dim());
    if (!gz.data.empty()) {
      Mat grad_u(n, p.proj_dim());
      for (std::size_t i = 0; i < n; ++i) normalize_backward(vc.z.row(i), vc.z_norms[i], gz.row(i), grad_u.row(i));
      grad_h = detail::stack_backward(p.projection, vc.projection, std::move(grad_u), g.projection);
    }
    if (!gh.data.empty())
      for (std::size_t t = 0; t < grad_h.data.size(); ++t) grad_h.data[t] += gh.data[t];
    detail::stack_backward(p.encoder, vc.encoder, std::move(grad_h), g.encoder);
  };
  one_view(cache.a, up.z_a, up.h_a);
  one_view(cache.b, up.z_b, up.h_b);
  return g;
}

// ---------------------------------------------------------------------------
// Prototype classifier

/// logits(i,k) = cos(h_i, t_k) / tau.
inline Mat classify_logits(const ModelParams& p, const Mat& h, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::NonPositiveTemperature, "classifier temperature must be positive");
  if (h.cols != p.prototypes.cols) fail(ErrorCode::ShapeMismatch, "hidden width differs from prototype width");
  const Mat hn = normalize_rows(h);
  const Mat tn = normalize_rows(p.prototypes);
  Mat logits(h.rows, tn.rows);
  for (std::size_t i = 0; i < h.rows; ++i)
    for (std::size_t k = 0; k < tn.rows; ++k) logits(i, k) = dot(hn.row(i), tn.row(k)) / tau;
  return logits;
}

inline Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const Vec r = softmax_temp(logits.row(i), 1.0);
    std::copy(r.begin(), r.end(), p.row(i).begin());
  }
  return p;
}

inline Mat classify(const ModelParams& p, const Mat& h, double tau) { return softmax_rows(classify_logits(p, h, tau)); }

/// Pulls d loss / d logits back onto h and the prototype bank.
inline std::pair<Mat, Mat> classify_backward(const ModelParams& p, const Mat& h, double tau, const Mat& grad_logits) {
  Vec h_norms, t_norms;
  const Mat hn = normalize_rows(h, &h_norms);
  const Mat tn = normalize_rows(p.prototypes, &t_norms);
  Mat g_hn(h.rows, h.cols), g_tn(tn.rows, tn.cols);
  for (std::size_t i = 0; i < h.rows; ++i) {
    for (std::size_t k = 0; k < tn.rows; ++k) {
      const double g = grad_logits(i, k) / tau;
      if (g == 0.0) continue;
      for (std::size_t j = 0; j < h.cols; ++j) {
        g_hn(i, j) += g * tn(k, j);
        g_tn(k, j) += g * hn(i, j);
      }
    }
  }
  Mat g_h(h.rows, h.cols), g_t(tn.rows, tn.cols);
  for (std::size_t i = 0; i < h.rows; ++i) normalize_backward(hn.row(i), h_norms[i], g_hn.row(i), g_h.row(i));
  for (std::size_t k = 0; k < tn.rows; ++k) normalize_backward(tn.row(k), t_norms[k], g_tn.row(k), g_t.row(k));
  return {std::move(g_h), std::move(g_t)};
}

/// Hard assignment: argmax over classes, smallest index on ties.
inline std::vector<int> predict(const ModelParams& p, const Mat& x, double tau) {
  const auto [h, z] = embed(p, x);
  const Mat logits = classify_logits(p, h, tau);
  std::vector<int> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto r = logits.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

}  // namespace ctxgcd
