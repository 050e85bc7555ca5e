#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include <spdlog/spdlog.h>

#include "ctxgcd/error.hpp"
#include "ctxgcd/mining.hpp"
#include "ctxgcd/model.hpp"
#include "ctxgcd/numeric.hpp"

namespace ctxgcd {

struct LossConfig {
  double tau_u = 0.07;      // self-supervised contrastive temperature
  double tau_sup = 0.1;     // supervised contrastive temperature
  double tau_s = 0.1;       // classifier (student) temperature
  double tau_t = 0.07;      // teacher temperature; the trainer overrides it per epoch
  double tau_proto = 0.1;   // prototype contrast temperature
  double lambda = 0.35;     // supervised vs unsupervised balance
  double epsilon = 1.0;     // mean-entropy regularizer weight
  double delta = 0.5;       // margin for dissimilar pairs
  double lambda_n = 0.1;
  double lambda_c = 0.3;
  bool hinge_clamp = true;
  bool detach_teacher = true;

  void validate() const {
    for (double t : {tau_u, tau_sup, tau_s, tau_t, tau_proto})
      if (!(t > 0.0)) fail(ErrorCode::NonPositiveTemperature, "all loss temperatures must be positive");
    if (lambda < 0.0 || lambda > 1.0) fail(ErrorCode::ConfigError, "lambda must be in [0,1]");
    if (epsilon < 0.0 || lambda_n < 0.0 || lambda_c < 0.0) fail(ErrorCode::ConfigError, "loss weights must be nonnegative");
    if (!(delta > 0.0) || delta > 2.0) fail(ErrorCode::ConfigError, "delta must be in (0,2]");
  }
};

/// Value plus gradients w.r.t. the two embedding matrices (either may be
/// empty when the loss does not touch that input).
struct PairLoss {
  double value = 0.0;
  Mat grad_a;
  Mat grad_b;
};

namespace detail {

inline void add_scaled(std::span<double> dst, std::span<const double> src, double s) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

inline Vec softmax_of(std::span<const double> x) { return softmax_temp(x, 1.0); }

}  // namespace detail

/// Self-supervised contrast: anchor z_b[i], positive z_a[i], candidates z_a[*].
inline PairLoss loss_rep_u(const Mat& z_a, const Mat& z_b, double tau) {
  if (!z_a.same_shape(z_b) || z_a.rows == 0) fail(ErrorCode::ShapeMismatch, "views must have equal nonempty shape");
  if (!(tau > 0.0)) fail(ErrorCode::NonPositiveTemperature, "tau_u must be positive");
  const std::size_t n = z_a.rows;
  PairLoss out{0.0, Mat(n, z_a.cols), Mat(n, z_a.cols)};
  Vec s(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) s[j] = dot(z_a.row(j), z_b.row(i)) / tau;
    out.value += (log_sum_exp(s) - s[i]) * inv_n;
    const Vec p = detail::softmax_of(s);
    for (std::size_t j = 0; j < n; ++j) {
      const double c = (p[j] - (i == j ? 1.0 : 0.0)) * inv_n / tau;
      detail::add_scaled(out.grad_a.row(j), z_b.row(i), c);
      detail::add_scaled(out.grad_b.row(i), z_a.row(j), c);
    }
  }
  return out;
}

/// Supervised contrast over the labeled rows. For anchor i the positives are
/// the other labeled rows sharing its label; the denominator runs over all
/// labeled n != i. Anchors without positives are left out of the mean.
inline PairLoss loss_rep_s(const Mat& z_a, const Mat& z_b, const std::vector<int>& labels,
                           const std::vector<std::uint8_t>& labeled, double tau) {
  if (!z_a.same_shape(z_b)) fail(ErrorCode::ShapeMismatch, "views must have equal shape");
  if (labels.size() != z_a.rows || labeled.size() != z_a.rows) fail(ErrorCode::ShapeMismatch, "one label per row");
  if (!(tau > 0.0)) fail(ErrorCode::NonPositiveTemperature, "tau_sup must be positive");
  std::vector<std::size_t> lab;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    if (labeled[i]) lab.push_back(i);
  if (lab.empty()) fail(ErrorCode::NoLabeledSamples, "batch holds no labeled rows");

  const std::size_t n = z_a.rows;
  PairLoss out{0.0, Mat(n, z_a.cols), Mat(n, z_a.cols)};
  std::vector<std::size_t> anchors;
  for (std::size_t i : lab) {
    for (std::size_t p : lab) {
      if (p != i && labels[p] == labels[i]) {
        anchors.push_back(i);
        break;
      }
    }
  }
  if (anchors.empty()) return out;
  const double inv_a = 1.0 / static_cast<double>(anchors.size());

  std::vector<std::size_t> others;
  Vec s;
  for (std::size_t i : anchors) {
    others.clear();
    s.clear();
    std::size_t n_pos = 0;
    for (std::size_t m : lab) {
      if (m == i) continue;
      others.push_back(m);
      s.push_back(dot(z_a.row(i), z_b.row(m)) / tau);
      n_pos += labels[m] == labels[i];
    }
    const double lse = log_sum_exp(s);
    const Vec p = detail::softmax_of(s);
    const double inv_p = 1.0 / static_cast<double>(n_pos);
    for (std::size_t r = 0; r < others.size(); ++r) {
      const bool pos = labels[others[r]] == labels[i];
      if (pos) out.value += (lse - s[r]) * inv_p * inv_a;
      const double c = (p[r] - (pos ? inv_p : 0.0)) * inv_a / tau;
      detail::add_scaled(out.grad_a.row(i), z_b.row(others[r]), c);
      detail::add_scaled(out.grad_b.row(others[r]), z_a.row(i), c);
    }
  }
  return out;
}

struct ClsLoss {
  double cls_l = 0.0;
  double cls_u = 0.0;        // includes -epsilon * H(mean prediction)
  double mean_entropy = 0.0; // H(mean prediction)
  Mat grad_logits_a, grad_logits_b;    // d cls_l / d student logits
  Mat grad_logits_u_a, grad_logits_u_b;  // d cls_u / d student logits
  Mat grad_teacher_a, grad_teacher_b;  // d cls_u / d teacher probabilities
};

/// Classifier losses. teacher_a (from view a) is the target for the student
/// of view b and vice versa. cls_l averages both views over labeled rows;
/// cls_u averages both directions over all rows.
inline ClsLoss loss_cls(const Mat& logits_a, const Mat& logits_b, const Mat& teacher_a, const Mat& teacher_b,
                        const std::vector<int>& labels, const std::vector<std::uint8_t>& labeled, double epsilon) {
  if (!logits_a.same_shape(logits_b) || !logits_a.same_shape(teacher_a) || !logits_a.same_shape(teacher_b) ||
      logits_a.rows == 0) {
    fail(ErrorCode::ShapeMismatch, "classifier inputs must share a nonempty shape");
  }
  if (labels.size() != logits_a.rows || labeled.size() != logits_a.rows) fail(ErrorCode::ShapeMismatch, "one label per row");
  for (std::size_t i = 0; i < teacher_a.rows; ++i) {
    check_probability(teacher_a.row(i));
    check_probability(teacher_b.row(i));
  }
  const std::size_t n = logits_a.rows;
  const std::size_t k = logits_a.cols;
  ClsLoss out;
  out.grad_logits_a = Mat(n, k);
  out.grad_logits_b = Mat(n, k);
  out.grad_logits_u_a = Mat(n, k);
  out.grad_logits_u_b = Mat(n, k);
  out.grad_teacher_a = Mat(n, k);
  out.grad_teacher_b = Mat(n, k);

  Mat logp_a(n, k), logp_b(n, k), p_a(n, k), p_b(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    const double la = log_sum_exp(logits_a.row(i));
    const double lb = log_sum_exp(logits_b.row(i));
    for (std::size_t c = 0; c < k; ++c) {
      logp_a(i, c) = logits_a(i, c) - la;
      logp_b(i, c) = logits_b(i, c) - lb;
      p_a(i, c) = std::exp(logp_a(i, c));
      p_b(i, c) = std::exp(logp_b(i, c));
    }
  }

  std::size_t n_lab = 0;
  for (std::size_t i = 0; i < n; ++i) n_lab += labeled[i] != 0;
  if (n_lab > 0) {
    const double w = 1.0 / (2.0 * static_cast<double>(n_lab));
    for (std::size_t i = 0; i < n; ++i) {
      if (!labeled[i]) continue;
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) fail(ErrorCode::ShapeMismatch, "label out of range");
      const auto y = static_cast<std::size_t>(labels[i]);
      out.cls_l -= w * (logp_a(i, y) + logp_b(i, y));
      for (std::size_t c = 0; c < k; ++c) {
        out.grad_logits_a(i, c) += w * (p_a(i, c) - (c == y ? 1.0 : 0.0));
        out.grad_logits_b(i, c) += w * (p_b(i, c) - (c == y ? 1.0 : 0.0));
      }
    }
  }

  const double w = 1.0 / (2.0 * static_cast<double>(n));
  Vec mean_p(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      out.cls_u -= w * (teacher_b(i, c) * logp_a(i, c) + teacher_a(i, c) * logp_b(i, c));
      out.grad_logits_u_a(i, c) += w * (p_a(i, c) - teacher_b(i, c));
      out.grad_logits_u_b(i, c) += w * (p_b(i, c) - teacher_a(i, c));
      out.grad_teacher_b(i, c) -= w * logp_a(i, c);
      out.grad_teacher_a(i, c) -= w * logp_b(i, c);
      mean_p[c] += w * (p_a(i, c) + p_b(i, c));
    }
  }
  Vec log_mean(k);
  double h = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    log_mean[c] = std::log(std::max(mean_p[c], kProbFloor));
    h -= mean_p[c] * log_mean[c];
  }
  out.mean_entropy = h;
  out.cls_u -= epsilon * h;
  if (epsilon != 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      double ea = 0.0, eb = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        ea += p_a(i, c) * log_mean[c];
        eb += p_b(i, c) * log_mean[c];
      }
      for (std::size_t c = 0; c < k; ++c) {
        out.grad_logits_u_a(i, c) += epsilon * w * p_a(i, c) * (log_mean[c] - ea);
        out.grad_logits_u_b(i, c) += epsilon * w * p_b(i, c) * (log_mean[c] - eb);
      }
    }
  }
  return out;
}

/// Mean over ordered pairs i != j of s_ij d_ij + (1 - s_ij) m(delta - d_ij),
/// d the cosine distance and m the hinge (or identity when unclamped).
inline PairLoss loss_context_instance(const Mat& z, const PairMatrix& s, double delta, bool hinge_clamp) {
  const std::size_t n = z.rows;
  if (n < 2) fail(ErrorCode::BatchTooSmall, "instance contrast needs at least two rows");
  if (s.n != n) fail(ErrorCode::ShapeMismatch, "pair matrix size differs from batch");
  PairLoss out{0.0, Mat(n, z.cols), Mat()};
  Vec norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = norm2(z.row(i));
    if (!(norms[i] > kZeroNormThreshold)) fail(ErrorCode::ZeroVector, "zero embedding row");
  }
  const double scale = 1.0 / static_cast<double>(n * n - n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double c = dot(z.row(i), z.row(j)) / (norms[i] * norms[j]);
      const double d = 1.0 - c;
      double dterm = 0.0;  // d term / d d
      if (s(i, j)) {
        out.value += scale * d;
        dterm = 1.0;
      } else {
        const double gap = delta - d;
        if (!hinge_clamp || gap > 0.0) {
          out.value += scale * gap;
          dterm = -1.0;
        }
      }
      if (dterm == 0.0) continue;
      // d d / d z_i = -(z_j / (|z_i||z_j|) - c z_i / |z_i|^2)
      const double g = -dterm * scale;
      const auto zi = z.row(i);
      const auto zj = z.row(j);
      auto gi = out.grad_a.row(i);
      auto gj = out.grad_a.row(j);
      for (std::size_t t = 0; t < z.cols; ++t) {
        gi[t] += g * (zj[t] / (norms[i] * norms[j]) - c * zi[t] / (norms[i] * norms[i]));
        gj[t] += g * (zi[t] / (norms[i] * norms[j]) - c * zj[t] / (norms[j] * norms[j]));
      }
    }
  }
  return out;
}

struct ProtoLoss {
  double value = 0.0;
  std::size_t num_common = 0;
  Mat grad_mu_a;
  Mat grad_mu_b;
};

/// Cross-view prototype contrast over classes present in both views; the
/// denominator runs over classes present in view b.
inline ProtoLoss loss_context_cluster(const PrototypeSet& a, const PrototypeSet& b, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::NonPositiveTemperature, "tau_proto must be positive");
  if (!a.mu.same_shape(b.mu)) fail(ErrorCode::ShapeMismatch, "prototype sets differ in shape");
  const std::size_t k = a.mu.rows;
  std::vector<std::size_t> common, in_b;
  for (std::size_t c = 0; c < k; ++c) {
    if (b.present[c]) in_b.push_back(c);
    if (a.present[c] && b.present[c]) common.push_back(c);
  }
  if (common.empty()) fail(ErrorCode::NoCommonClasses, "no class has a prototype in both views");
  ProtoLoss out{0.0, common.size(), Mat(k, a.mu.cols), Mat(k, a.mu.cols)};
  const double inv_c = 1.0 / static_cast<double>(common.size());
  Vec s(in_b.size());
  for (std::size_t i : common) {
    std::size_t self = 0;
    for (std::size_t r = 0; r < in_b.size(); ++r) {
      s[r] = dot(a.mu.row(i), b.mu.row(in_b[r])) / tau;
      if (in_b[r] == i) self = r;
    }
    out.value += (log_sum_exp(s) - s[self]) * inv_c;
    const Vec p = detail::softmax_of(s);
    for (std::size_t r = 0; r < in_b.size(); ++r) {
      const double c = (p[r] - (r == self ? 1.0 : 0.0)) * inv_c / tau;
      detail::add_scaled(out.grad_mu_a.row(i), b.mu.row(in_b[r]), c);
      detail::add_scaled(out.grad_mu_b.row(in_b[r]), a.mu.row(i), c);
    }
  }
  return out;
}

/// Gradient on the member rows of z given a gradient on the prototypes.
inline Mat prototype_backward(const PrototypeSet& ps, const Mat& grad_mu, std::size_t num_rows) {
  Mat g(num_rows, ps.mu.cols);
  Vec gsum(ps.mu.cols);
  for (std::size_t c = 0; c < ps.mu.rows; ++c) {
    if (!ps.present[c]) continue;
    normalize_backward(ps.mu.row(c), ps.sum_norms[c], grad_mu.row(c), gsum);
    for (std::size_t i : ps.members[c]) detail::add_scaled(g.row(i), gsum, 1.0);
  }
  return g;
}

/// Builds both views' prototypes from shared pseudo-labels and returns the
/// loss with gradients on z_a and z_b.
inline PairLoss loss_context_cluster(const Mat& z_a, const Mat& z_b, const std::vector<int>& pseudo, int num_classes,
                                     double tau) {
  const PrototypeSet pa = prototypes(z_a, pseudo, num_classes);
  const PrototypeSet pb = prototypes(z_b, pseudo, num_classes);
  const ProtoLoss pl = loss_context_cluster(pa, pb, tau);
  return {pl.value, prototype_backward(pa, pl.grad_mu_a, z_a.rows), prototype_backward(pb, pl.grad_mu_b, z_b.rows)};
}

// ---------------------------------------------------------------------------
// Composite objective

struct LossBreakdown {
  double rep_u = 0.0;
  double rep_s = 0.0;
  double cls_l = 0.0;
  double cls_u = 0.0;
  double entropy_term = 0.0;  // H(mean prediction); already folded into cls_u
  double l_n = 0.0;
  double l_c = 0.0;
  double baseline = 0.0;
  double total = 0.0;    // baseline + lambda_n l_n + lambda_c l_c
  double applied = 0.0;  // value actually differentiated (baseline during warmup)
};

/// Baseline and overall values from the component terms.
inline LossBreakdown compose_breakdown(LossBreakdown b, const LossConfig& cfg, bool context_active) {
  b.baseline = (1.0 - cfg.lambda) * (b.rep_u + b.cls_u) + cfg.lambda * (b.rep_s + b.cls_l);
  b.total = b.baseline + cfg.lambda_n * b.l_n + cfg.lambda_c * b.l_c;
  b.applied = context_active ? b.total : b.baseline;
  return b;
}

/// Per-row supervision for a batch: ground truth is read only where labeled.
struct BatchTargets {
  std::vector<int> labels;
  std::vector<std::uint8_t> labeled;
};

struct ObjectiveOptions {
  bool context_active = true;  // false during warmup: context terms reported, not applied
  std::size_t k_nn = 10;       // clamped to |B| - 1 inside a batch
  const Mat* mining_embeddings = nullptr;  // defaults to z of view a
  /// Fixed pseudo-labels and pair matrix (e.g. for finite-difference checks).
  const NeighborContext* fixed_context = nullptr;
};

struct ObjectiveResult {
  LossBreakdown breakdown;
  ModelParams grad;
  NeighborContext context;
};

/// Forward pass, all loss terms, and the parameter gradient of the applied
/// objective for one two-view batch.
inline ObjectiveResult compute_objective(const ModelParams& params, const ViewPair& batch, const BatchTargets& targets,
                                         const LossConfig& cfg, const ObjectiveOptions& opts = {}) {
  cfg.validate();
  const std::size_t n = batch.view_a.rows;
  if (targets.labels.size() != n || targets.labeled.size() != n) fail(ErrorCode::ShapeMismatch, "targets must cover the batch");
  const ForwardResult fw = forward(params, batch);
  const int k = static_cast<int>(params.num_classes());

  const Mat logits_a = classify_logits(params, fw.h_a, cfg.tau_s);
  const Mat logits_b = classify_logits(params, fw.h_b, cfg.tau_s);
  const Mat tlogits_a = classify_logits(params, fw.h_a, cfg.tau_t);
  const Mat tlogits_b = classify_logits(params, fw.h_b, cfg.tau_t);
  const Mat teacher_a = softmax_rows(tlogits_a);
  const Mat teacher_b = softmax_rows(tlogits_b);

  ObjectiveResult res;
  LossBreakdown& bd = res.breakdown;
  const double lam = cfg.lambda;
  UpstreamGrads up;
  up.z_a = Mat(n, params.proj_dim());
  up.z_b = Mat(n, params.proj_dim());
  up.h_a = Mat(n, params.hidden_dim());
  up.h_b = Mat(n, params.hidden_dim());
  up.prototypes = Mat(params.prototypes.rows, params.prototypes.cols);
  auto acc = [](Mat& dst, const Mat& src, double w) {
    if (w == 0.0 || src.data.empty()) return;
    for (std::size_t t = 0; t < dst.data.size(); ++t) dst.data[t] += w * src.data[t];
  };

  const PairLoss ru = loss_rep_u(fw.z_a, fw.z_b, cfg.tau_u);
  bd.rep_u = ru.value;
  acc(up.z_a, ru.grad_a, 1.0 - lam);
  acc(up.z_b, ru.grad_b, 1.0 - lam);

  const bool any_labeled = std::any_of(targets.labeled.begin(), targets.labeled.end(), [](auto v) { return v != 0; });
  if (any_labeled) {
    const PairLoss rs = loss_rep_s(fw.z_a, fw.z_b, targets.labels, targets.labeled, cfg.tau_sup);
    bd.rep_s = rs.value;
    acc(up.z_a, rs.grad_a, lam);
    acc(up.z_b, rs.grad_b, lam);
  }

  const ClsLoss cl = loss_cls(logits_a, logits_b, teacher_a, teacher_b, targets.labels, targets.labeled, cfg.epsilon);
  bd.cls_l = cl.cls_l;
  bd.cls_u = cl.cls_u;
  bd.entropy_term = cl.mean_entropy;
  {
    Mat g_a(n, static_cast<std::size_t>(k)), g_b(n, static_cast<std::size_t>(k));
    acc(g_a, cl.grad_logits_a, lam);
    acc(g_a, cl.grad_logits_u_a, 1.0 - lam);
    acc(g_b, cl.grad_logits_b, lam);
    acc(g_b, cl.grad_logits_u_b, 1.0 - lam);
    auto [gh_a, gt_a] = classify_backward(params, fw.h_a, cfg.tau_s, g_a);
    auto [gh_b, gt_b] = classify_backward(params, fw.h_b, cfg.tau_s, g_b);
    acc(up.h_a, gh_a, 1.0);
    acc(up.h_b, gh_b, 1.0);
    acc(up.prototypes, gt_a, 1.0);
    acc(up.prototypes, gt_b, 1.0);
  }
  if (!cfg.detach_teacher) {
    // through the teacher softmax: d/dl_m = t_m (g_m - sum_c t_c g_c)
    auto through_softmax = [&](const Mat& t, const Mat& g) {
      Mat out(t.rows, t.cols);
      for (std::size_t i = 0; i < t.rows; ++i) {
        const double inner = dot(t.row(i), g.row(i));
        for (std::size_t c = 0; c < t.cols; ++c) out(i, c) = (1.0 - lam) * t(i, c) * (g(i, c) - inner);
      }
      return out;
    };
    auto [gh_a, gt_a] = classify_backward(params, fw.h_a, cfg.tau_t, through_softmax(teacher_a, cl.grad_teacher_a));
    auto [gh_b, gt_b] = classify_backward(params, fw.h_b, cfg.tau_t, through_softmax(teacher_b, cl.grad_teacher_b));
    acc(up.h_a, gh_a, 1.0);
    acc(up.h_b, gh_b, 1.0);
    acc(up.prototypes, gt_a, 1.0);
    acc(up.prototypes, gt_b, 1.0);
  }

  // Context terms on the student probabilities of both views.
  if (opts.fixed_context) {
    res.context = *opts.fixed_context;
  } else if (n >= 2) {
    const Mat& space = opts.mining_embeddings ? *opts.mining_embeddings : fw.z_a;
    res.context = mine_context(space, softmax_rows(logits_a), softmax_rows(logits_b), std::min(opts.k_nn, n - 1));
  } else {
    res.context.pseudo_labels = pseudo_labels(softmax_rows(logits_a), softmax_rows(logits_b));
    res.context.pair_labels = PairMatrix(n);
  }
  if (n >= 2) {
    const PairLoss ln = loss_context_instance(fw.z_a, res.context.pair_labels, cfg.delta, cfg.hinge_clamp);
    bd.l_n = ln.value;
    if (opts.context_active) acc(up.z_a, ln.grad_a, cfg.lambda_n);
  }
  {
    const PrototypeSet pa = prototypes(fw.z_a, res.context.pseudo_labels, k);
    const PrototypeSet pb = prototypes(fw.z_b, res.context.pseudo_labels, k);
    bool common = false;
    for (int c = 0; c < k; ++c) common = common || (pa.present[c] && pb.present[c]);
    if (common) {
      const ProtoLoss pl = loss_context_cluster(pa, pb, cfg.tau_proto);
      bd.l_c = pl.value;
      if (opts.context_active) {
        acc(up.z_a, prototype_backward(pa, pl.grad_mu_a, n), cfg.lambda_c);
        acc(up.z_b, prototype_backward(pb, pl.grad_mu_b, n), cfg.lambda_c);
      }
    } else {
      spdlog::debug("cluster loss skipped: no class present in both views");
    }
  }

  bd = compose_breakdown(bd, cfg, opts.context_active);
  res.grad = backward(params, fw.cache, up);
  return res;
}

}  // namespace ctxgcd
