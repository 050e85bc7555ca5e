// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Thresholds are pinned below.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ctxgcd/commands.hpp"
#include "ctxgcd/log.hpp"
#include "oracles.hpp"

using namespace ctxgcd;
namespace fs = std::filesystem;

namespace limits {
constexpr int kGradInstances = 50;
constexpr double kGradStep = 1e-5;
constexpr double kGradRelErr = 1e-4;
constexpr double kGradSeconds = 30.0;

constexpr int kAssignTrials = 1000;
constexpr double kAssignSeconds = 10.0;

constexpr int kMiningInstances = 100;

constexpr double kInvarianceTol = 1e-12;

constexpr double kBenchAll = 0.95;
constexpr double kBenchOld = 0.95;
constexpr double kBenchNew = 0.90;
constexpr double kBenchSeconds = 120.0;
constexpr std::uint64_t kBenchSeed = 0;

constexpr int kAblationSeeds = 5;
constexpr double kAblationMargin = 0.02;

constexpr int kEntropySteps = 2000;
constexpr double kEntropyTol = 1e-3;
}  // namespace limits

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Mat random_mat(Rng& rng, std::size_t r, std::size_t c) {
  Mat m(r, c);
  for (double& v : m.data) v = rng.normal();
  return m;
}

Mat with_data(const Mat& shape, const Vec& x) {
  Mat m = shape;
  m.data = x;
  return m;
}

Mat random_probs(Rng& rng, std::size_t n, std::size_t k) {
  Mat p(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    Vec l(k);
    for (double& v : l) v = rng.normal();
    const Vec s = softmax_temp(l, 0.5);
    std::copy(s.begin(), s.end(), p.row(i).begin());
  }
  return p;
}

ViewPair views_of(const Mat& a, const Mat& b) {
  ViewPair vp{a, b, {}};
  for (std::size_t i = 0; i < a.rows; ++i) vp.source_indices.push_back(i);
  return vp;
}

template <class T>
std::vector<T> permute(const std::vector<T>& v, const std::vector<std::size_t>& perm) {
  std::vector<T> out(v.size());
  for (std::size_t r = 0; r < v.size(); ++r) out[r] = v[perm[r]];
  return out;
}

Mat permute_rows(const Mat& m, const std::vector<std::size_t>& perm) {
  Mat out(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) std::copy(m.row(perm[r]).begin(), m.row(perm[r]).end(), out.row(r).begin());
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double w = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, std::abs(a[i] - b[i]));
  return w;
}

// ---------------------------------------------------------------------------
// 1. gradient suite

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  std::string worst_name = "none";
  auto track = [&](const char* name, double err) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };
  const double h = limits::kGradStep;

  for (int t = 0; t < limits::kGradInstances; ++t) {
    const std::size_t d = 2 + rng.below(7);   // <= 8
    const std::size_t b = 3 + rng.below(10);  // <= 12
    const std::size_t k = 2 + rng.below(3);   // <= 4
    const Mat za = normalize_rows(random_mat(rng, b, d)), zb = normalize_rows(random_mat(rng, b, d));
    std::vector<int> y(b);
    std::vector<std::uint8_t> lab(b);
    for (std::size_t i = 0; i < b; ++i) {
      y[i] = static_cast<int>(rng.below(k));
      lab[i] = rng.bernoulli(0.5);
    }
    y[0] = y[1] = 0;
    lab[0] = lab[1] = 1;

    const double tau = rng.uniform(0.1, 1.0);
    const PairLoss ru = loss_rep_u(za, zb, tau);
    track("rep_u", check_gradient([&](const Vec& x) { return loss_rep_u(with_data(za, x), zb, tau).value; },
                                  ru.grad_a.data, za.data, h));
    track("rep_u", check_gradient([&](const Vec& x) { return loss_rep_u(za, with_data(zb, x), tau).value; },
                                  ru.grad_b.data, zb.data, h));

    const PairLoss rs = loss_rep_s(za, zb, y, lab, tau);
    track("rep_s", check_gradient([&](const Vec& x) { return loss_rep_s(with_data(za, x), zb, y, lab, tau).value; },
                                  rs.grad_a.data, za.data, h));
    track("rep_s", check_gradient([&](const Vec& x) { return loss_rep_s(za, with_data(zb, x), y, lab, tau).value; },
                                  rs.grad_b.data, zb.data, h));

    const Mat la = random_mat(rng, b, k), lb = random_mat(rng, b, k);
    const Mat ta = random_probs(rng, b, k), tb = random_probs(rng, b, k);
    const ClsLoss cl = loss_cls(la, lb, ta, tb, y, lab, 1.0);
    track("cls_l", check_gradient([&](const Vec& x) { return loss_cls(with_data(la, x), lb, ta, tb, y, lab, 1.0).cls_l; },
                                  cl.grad_logits_a.data, la.data, h));
    track("cls_l", check_gradient([&](const Vec& x) { return loss_cls(la, with_data(lb, x), ta, tb, y, lab, 1.0).cls_l; },
                                  cl.grad_logits_b.data, lb.data, h));
    track("cls_u", check_gradient([&](const Vec& x) { return loss_cls(with_data(la, x), lb, ta, tb, y, lab, 1.0).cls_u; },
                                  cl.grad_logits_u_a.data, la.data, h));
    track("cls_u", check_gradient([&](const Vec& x) { return loss_cls(la, with_data(lb, x), ta, tb, y, lab, 1.0).cls_u; },
                                  cl.grad_logits_u_b.data, lb.data, h));

    PairMatrix s(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = i + 1; j < b; ++j)
        if (rng.bernoulli(0.3)) {
          s.set(i, j, true);
          s.set(j, i, true);
        }
    const PairLoss ln = loss_context_instance(za, s, 0.5, true);
    track("l_n", check_gradient([&](const Vec& x) { return loss_context_instance(with_data(za, x), s, 0.5, true).value; },
                                ln.grad_a.data, za.data, h));

    const int kc = static_cast<int>(k);
    const PairLoss lc = loss_context_cluster(za, zb, y, kc, tau);
    track("l_c", check_gradient([&](const Vec& x) { return loss_context_cluster(with_data(za, x), zb, y, kc, tau).value; },
                                lc.grad_a.data, za.data, h));
    track("l_c", check_gradient([&](const Vec& x) { return loss_context_cluster(za, with_data(zb, x), y, kc, tau).value; },
                                lc.grad_b.data, zb.data, h));

    // composite objective through the network, mined context held fixed
    const ModelParams params = init_model(d, k, ModelConfig{6, 4, 2, 2}, rng);
    const ViewPair batch = views_of(random_mat(rng, b, d), random_mat(rng, b, d));
    const BatchTargets targets{y, lab};
    LossConfig cfg;
    cfg.detach_teacher = false;
    const std::size_t k_nn = std::min<std::size_t>(3, b - 1);
    const ObjectiveResult obj = compute_objective(params, batch, targets, cfg, {.context_active = true, .k_nn = k_nn});
    const ObjectiveOptions fixed{.context_active = true, .k_nn = k_nn, .fixed_context = &obj.context};
    track("composite", check_gradient(
                           [&](const Vec& x) {
                             ModelParams q = params;
                             q.unflatten(x);
                             return compute_objective(q, batch, targets, cfg, fixed).breakdown.applied;
                           },
                           obj.grad.flatten(), params.flatten(), h));
  }
  const double secs = seconds_since(t0);
  return {worst <= limits::kGradRelErr && secs <= limits::kGradSeconds,
          fmt("max rel err %.3g (%s, limit %.0e) over %d instances, %.2f s (limit %.0f s)", worst, worst_name.c_str(),
              limits::kGradRelErr, limits::kGradInstances, secs, limits::kGradSeconds)};
}

// ---------------------------------------------------------------------------
// 2. assignment oracle

Verdict assignment_oracle() {
  const auto t0 = Clock::now();
  Rng rng(202);
  int mismatches = 0;
  for (int t = 0; t < limits::kAssignTrials; ++t) {
    const std::size_t k = 1 + rng.below(7);
    const std::size_t n = 1 + rng.below(50);
    Mat c(k, k);
    for (std::size_t i = 0; i < n; ++i) c(rng.below(k), rng.below(k)) += 1.0;
    const std::vector<int> m = hungarian_match(c);
    double got = 0.0;
    std::vector<int> seen;
    for (std::size_t r = 0; r < k; ++r) {
      if (m[r] < 0) continue;
      got += c(r, static_cast<std::size_t>(m[r]));
      seen.push_back(m[r]);
    }
    std::sort(seen.begin(), seen.end());
    const bool injective = std::adjacent_find(seen.begin(), seen.end()) == seen.end();
    if (!injective || got != oracle::best_assignment_value(c)) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs <= limits::kAssignSeconds,
          fmt("%d mismatches in %d tables, %.2f s (limit %.0f s)", mismatches, limits::kAssignTrials, secs,
              limits::kAssignSeconds)};
}

// ---------------------------------------------------------------------------
// 3. mining oracle

Verdict mining_oracle() {
  Rng rng(303);
  int mismatches = 0;
  for (int t = 0; t < limits::kMiningInstances; ++t) {
    const std::size_t n = 2 + rng.below(199);  // <= 200
    const std::size_t d = 2 + rng.below(7);
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(20, n - 1));
    Mat z = random_mat(rng, n, d);
    if (t % 4 == 0) {  // exact duplicates exercise index tie-breaking
      for (std::size_t i = 1; i < n; i += 3) std::copy(z.row(i - 1).begin(), z.row(i - 1).end(), z.row(i).begin());
    }
    std::vector<int> pl(n);
    for (int& v : pl) v = static_cast<int>(rng.below(4));

    const IndexLists nn = knn(z, k);
    const IndexLists r = k_reciprocal(nn);
    const PairMatrix s = contextual_pairs(r, pl);
    const auto ref_nn = oracle::knn(z, k);
    bool ok = nn == ref_nn;
    for (std::size_t i = 0; i < n && ok; ++i) {
      std::vector<std::size_t> ref_r;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && oracle::reciprocal(ref_nn, i, j)) ref_r.push_back(j);
      ok = r[i] == ref_r;
      for (std::size_t j = 0; j < n && ok; ++j)
        if (j != i) ok = s(i, j) == oracle::pair_label(ref_nn, pl, i, j);
      ok = ok && !s(i, i);
    }
    mismatches += !ok;
  }
  return {mismatches == 0, fmt("%d mismatching instances of %d (N <= 200, k_nn <= 20)", mismatches, limits::kMiningInstances)};
}

// ---------------------------------------------------------------------------
// 4. invariance suite

Verdict invariance_suite() {
  Rng rng(404);
  double scale = 0.0, shift = 0.0, batch_perm = 0.0, proto = 0.0;
  bool relabel_exact = true;
  const ModelConfig mc{8, 4, 2, 2};

  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 2 + rng.below(7), k = 2 + rng.below(3), b = 4 + rng.below(9);
    const ModelParams p = init_model(d, k, mc, rng);
    const Mat h = random_mat(rng, b, 8);
    Mat hs = h;
    const double c = rng.uniform(0.01, 100.0);
    for (double& v : hs.data) v *= c;
    scale = std::max(scale, max_abs_diff(classify(p, h, 0.1).data, classify(p, hs, 0.1).data));

    Vec x(k);
    for (double& v : x) v = rng.uniform(-20, 20);
    Vec xs = x;
    const double sh = rng.uniform(-100, 100);
    for (double& v : xs) v += sh;
    shift = std::max(shift, max_abs_diff(softmax_temp(x, 0.3), softmax_temp(xs, 0.3)));

    // every loss under a batch permutation, mined context carried along
    const ViewPair batch = views_of(random_mat(rng, b, d), random_mat(rng, b, d));
    BatchTargets tg;
    for (std::size_t i = 0; i < b; ++i) {
      tg.labels.push_back(static_cast<int>(rng.below(k)));
      tg.labeled.push_back(rng.bernoulli(0.5));
    }
    tg.labeled[0] = 1;
    const LossConfig cfg;
    const ObjectiveResult r = compute_objective(p, batch, tg, cfg, {.context_active = true, .k_nn = 3});
    const auto perm = rng.sample_without_replacement(b, b);
    NeighborContext ctx;
    ctx.pseudo_labels = permute(r.context.pseudo_labels, perm);
    ctx.pair_labels = PairMatrix(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) ctx.pair_labels.set(i, j, r.context.pair_labels(perm[i], perm[j]));
    const ObjectiveResult q =
        compute_objective(p, views_of(permute_rows(batch.view_a, perm), permute_rows(batch.view_b, perm)),
                          BatchTargets{permute(tg.labels, perm), permute(tg.labeled, perm)}, cfg,
                          {.context_active = true, .k_nn = 3, .fixed_context = &ctx});
    const LossBreakdown &x1 = r.breakdown, &x2 = q.breakdown;
    for (auto [u, v] : {std::pair{x1.rep_u, x2.rep_u}, {x1.rep_s, x2.rep_s}, {x1.cls_l, x2.cls_l}, {x1.cls_u, x2.cls_u},
                        {x1.l_n, x2.l_n}, {x1.l_c, x2.l_c}, {x1.total, x2.total}})
      batch_perm = std::max(batch_perm, std::abs(u - v));

    // gcd_accuracy under relabeling of predicted clusters
    std::vector<int> pred(b), truth(b);
    for (std::size_t i = 0; i < b; ++i) {
      truth[i] = static_cast<int>(rng.below(k));
      pred[i] = static_cast<int>(rng.below(k));
    }
    const auto relabel = rng.sample_without_replacement(k, k);
    std::vector<int> pred2(b);
    for (std::size_t i = 0; i < b; ++i) pred2[i] = static_cast<int>(relabel[static_cast<std::size_t>(pred[i])]);
    relabel_exact = relabel_exact && gcd_accuracy(pred, truth, {0}).acc_all == gcd_accuracy(pred2, truth, {0}).acc_all;

    // prototypes under member reordering
    const Mat z = normalize_rows(random_mat(rng, b, d));
    const PrototypeSet a = prototypes(z, tg.labels, static_cast<int>(k));
    const PrototypeSet pz = prototypes(permute_rows(z, perm), permute(tg.labels, perm), static_cast<int>(k));
    for (std::size_t cidx = 0; cidx < k; ++cidx)
      if (a.present[cidx]) proto = std::max(proto, max_abs_diff(a.mu.row(cidx), pz.mu.row(cidx)));
  }
  const double tol = limits::kInvarianceTol;
  const bool pass = scale <= tol && shift <= tol && batch_perm <= tol && proto <= tol && relabel_exact;
  return {pass, fmt("classifier scale %.2g, softmax shift %.2g, batch permutation %.2g, prototype order %.2g "
                    "(limit %.0e); relabel %s",
                    scale, shift, batch_perm, proto, tol, relabel_exact ? "exact" : "NOT exact")};
}

// ---------------------------------------------------------------------------
// 5-7. end-to-end runs

ExperimentConfig bench_config(std::uint64_t seed) {
  ExperimentConfig c;  // defaults are the benchmark setting
  c.seed = seed;
  c.train.seed = seed;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct BenchRuns {
  TrainOutcome first;
  double first_seconds = 0.0;
  bool identical = false;
  std::string identical_detail;
};

BenchRuns bench_runs(const fs::path& root) {
  BenchRuns out;
  const ExperimentConfig c = bench_config(limits::kBenchSeed);
  auto t0 = Clock::now();
  out.first = cmd_train(c, root / "run_a");
  out.first_seconds = seconds_since(t0);
  cmd_train(c, root / "run_b");
  out.identical = true;
  for (const char* f : {"checkpoint.json", "checkpoint.bin", "metrics.json", "metrics.csv"}) {
    const bool same = slurp(root / "run_a" / f) == slurp(root / "run_b" / f);
    if (!same) out.identical_detail += std::string(out.identical_detail.empty() ? "" : ", ") + f + " differs";
    out.identical = out.identical && same;
  }
  if (out.identical_detail.empty()) out.identical_detail = "checkpoint.json, checkpoint.bin, metrics.json, metrics.csv identical";
  return out;
}

Verdict benchmark(const BenchRuns& r) {
  const GcdMetrics& m = r.first.metrics;
  const bool pass = m.acc_all >= limits::kBenchAll && m.acc_old >= limits::kBenchOld && m.acc_new >= limits::kBenchNew &&
                    r.first_seconds <= limits::kBenchSeconds;
  return {pass, fmt("all %.4f old %.4f new %.4f (limits %.2f/%.2f/%.2f), %.1f s (limit %.0f s)", m.acc_all, m.acc_old,
                    m.acc_new, limits::kBenchAll, limits::kBenchOld, limits::kBenchNew, r.first_seconds,
                    limits::kBenchSeconds)};
}

Verdict ablation() {
  double full = 0.0, base = 0.0;
  std::string per_seed;
  for (int s = 0; s < limits::kAblationSeeds; ++s) {
    const ExperimentConfig c = bench_config(static_cast<std::uint64_t>(s));
    const GcdDataset ds = generate_dataset(c);
    const double f = evaluate(train(ds, apply_ablation(c, Ablation::Full).train).params, ds).acc_all;
    const double b = evaluate(train(ds, apply_ablation(c, Ablation::Baseline).train).params, ds).acc_all;
    full += f / limits::kAblationSeeds;
    base += b / limits::kAblationSeeds;
    per_seed += fmt(" %d:%.3f/%.3f", s, f, b);
  }
  return {full >= base - limits::kAblationMargin,
          fmt("mean all full %.4f vs baseline %.4f (margin %.2f); per seed full/baseline%s", full, base,
              limits::kAblationMargin, per_seed.c_str())};
}

// ---------------------------------------------------------------------------
// 8. entropy regularizer alone

Verdict entropy_property() {
  Rng rng(808);
  const std::size_t n = 32, k = 5;
  Mat logits = random_mat(rng, n, k);
  for (double& v : logits.data) v *= 3.0;
  const Mat teacher(n, k, 1.0 / static_cast<double>(k));
  const std::vector<int> y(n, 0);
  const std::vector<std::uint8_t> lab(n, 0);
  const double lr = 5.0;

  auto mean_pred = [&] {
    Vec m(k, 0.0);
    const Mat p = softmax_rows(logits);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c) m[c] += p(i, c) / static_cast<double>(n);
    return m;
  };
  auto gap = [&] {
    double w = 0.0;
    for (double m : mean_pred()) w = std::max(w, std::abs(m - 1.0 / static_cast<double>(k)));
    return w;
  };
  const double start = gap();
  int step = 0;
  for (; step < limits::kEntropySteps && gap() > limits::kEntropyTol; ++step) {
    // gradient of -H(mean) alone: cls_u at eps = 1 minus the cross-entropy part
    const ClsLoss with = loss_cls(logits, logits, teacher, teacher, y, lab, 1.0);
    const ClsLoss without = loss_cls(logits, logits, teacher, teacher, y, lab, 0.0);
    for (std::size_t t = 0; t < logits.data.size(); ++t) {
      const double g = (with.grad_logits_u_a.data[t] + with.grad_logits_u_b.data[t]) -
                       (without.grad_logits_u_a.data[t] + without.grad_logits_u_b.data[t]);
      logits.data[t] -= lr * g;
    }
  }
  const double end = gap();
  return {end <= limits::kEntropyTol, fmt("||mean p - uniform||_inf %.3g -> %.3g after %d steps (limit %.0e in %d)", start,
                                          end, step, limits::kEntropyTol, limits::kEntropySteps)};
}

}  // namespace

int main() {
  init_logging_from_env();
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s [%d] %s: %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "assignment oracle", assignment_oracle);
  report(3, "mining oracle", mining_oracle);
  report(4, "invariance suite", invariance_suite);

  const fs::path root = fs::temp_directory_path() / "ctxgcd_acceptance";
  fs::remove_all(root);
  BenchRuns runs;
  std::string bench_error;
  try {
    runs = bench_runs(root);
  } catch (const std::exception& e) {
    bench_error = e.what();
  }
  auto or_error = [&](const std::function<Verdict()>& fn) -> std::function<Verdict()> {
    if (!bench_error.empty()) return [&] { return Verdict{false, "benchmark run failed: " + bench_error}; };
    return fn;
  };
  report(5, "synthetic benchmark", or_error([&] { return benchmark(runs); }));
  report(6, "ablation non-inferiority", ablation);
  report(7, "determinism", or_error([&] { return Verdict{runs.identical, runs.identical_detail}; }));
  report(8, "entropy regularizer", entropy_property);
  fs::remove_all(root);

  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
