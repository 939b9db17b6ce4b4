// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "euat/baselines.hpp"
#include "euat/experiment.hpp"
#include "euat/losses.hpp"
#include "euat/metrics.hpp"
#include "euat/robustness.hpp"
#include "euat/trainer.hpp"
#include "euat/uncertainty.hpp"
#include "support.hpp"

using namespace euat;

namespace {

// Pinned tolerances.
constexpr double kFdTolerance = 1e-4;
constexpr double kFdBudgetSeconds = 30.0;
constexpr double kMetricTolerance = 1e-12;
constexpr double kMcSumTolerance = 1e-9;
constexpr double kWassersteinRatio = 1.2;
constexpr double kSeedBudgetSeconds = 600.0;
constexpr std::size_t kFlipSeedsRequired = 4;
constexpr double kIsotonicTolerance = 1e-6;
constexpr double kAttackEpsilon = 0.05;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Check {
  bool ok = true;
  std::string detail;
  void require(bool cond, const std::string& what) {
    if (!cond && ok) detail = what;
    ok = ok && cond;
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------------------
// Oracles

double brute_uauc(const std::vector<EvalRecord>& recs) {
  double score = 0.0, pairs = 0.0;
  for (const auto& w : recs) {
    if (w.correct) continue;
    for (const auto& c : recs) {
      if (!c.correct) continue;
      pairs += 1.0;
      score += w.uncertainty > c.uncertainty ? 1.0 : w.uncertainty == c.uncertainty ? 0.5 : 0.0;
    }
  }
  return score / pairs;
}

double quantile_w1(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::set<double> grid{0.0, 1.0};
  for (std::size_t i = 1; i < a.size(); ++i) grid.insert(double(i) / double(a.size()));
  for (std::size_t j = 1; j < b.size(); ++j) grid.insert(double(j) / double(b.size()));
  const std::vector<double> t(grid.begin(), grid.end());
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < t.size(); ++k) {
    const double mid = 0.5 * (t[k] + t[k + 1]);
    total += (t[k + 1] - t[k]) * std::abs(a[std::size_t(mid * double(a.size()))] -
                                          b[std::size_t(mid * double(b.size()))]);
  }
  return total;
}

double recount_ece(const std::vector<EvalRecord>& recs, std::size_t bins) {
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = double(b) / double(bins), hi = double(b + 1) / double(bins);
    double n = 0, acc = 0, conf = 0;
    for (const auto& r : recs) {
      if (!((r.confidence > lo && r.confidence <= hi) || (b == 0 && r.confidence == 0.0))) continue;
      n += 1;
      acc += r.correct;
      conf += r.confidence;
    }
    if (n > 0) total += (n / double(recs.size())) * std::abs(acc / n - conf / n);
  }
  return total;
}

std::vector<double> minmax_isotonic(const std::vector<double>& y) {
  const std::size_t n = y.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = -1e300;
    for (std::size_t j = 0; j <= i; ++j) {
      double worst = 1e300;
      for (std::size_t k = i; k < n; ++k) {
        double s = 0.0;
        for (std::size_t t = j; t <= k; ++t) s += y[t];
        worst = std::min(worst, s / double(k - j + 1));
      }
      best = std::max(best, worst);
    }
    out[i] = best;
  }
  return out;
}

LabeledBatch random_batch(std::size_t rows, std::size_t dims, std::size_t classes, std::uint64_t seed) {
  LabeledBatch b;
  b.inputs = testing::random_matrix(rows, dims, seed);
  CounterRng rng(derive_seed(seed, "labels"));
  for (std::size_t r = 0; r < rows; ++r) {
    b.labels.push_back(rng.next_below(classes));
    b.membership.push_back(r % 2 ? Membership::correct_set : Membership::wrong_set);
  }
  return b;
}

std::vector<EvalRecord> random_records(std::size_t n, std::uint64_t seed, int levels) {
  CounterRng rng(seed);
  std::vector<EvalRecord> out(n);
  for (auto& r : out) {
    r.correct = rng.next_uniform() < 0.6;
    r.uncertainty = std::floor(rng.next_uniform() * levels) / levels;
    r.confidence = rng.next_uniform();
    r.residual = rng.next_uniform();
  }
  return out;
}

ExperimentConfig blob_config(std::uint64_t seed, Method method) {
  ExperimentConfig c;
  c.method = method;
  c.dataset.generator.kind = DatasetKind::gaussian_blobs;
  c.dataset.generator.classes = 3;
  c.dataset.generator.n = 10000;
  c.dataset.generator.noise = 0.62;
  c.schedule.euat_lr = 0.03;
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------
// Criteria

Check gradients() {
  Check chk;
  const auto start = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto m = testing::random_model({3, 7, 6, 4}, 0.3, seed);
    const LabeledBatch b = random_batch(6, 3, 4, seed + 1000);
    const std::size_t n = 3;
    const std::uint64_t ms = seed + 2000;
    auto entropy = [&](const MlpModel& mm) {
      return batch_objective(mm, b.inputs, n, ms,
                             [](std::span<const double> p, std::size_t) { return entropy_term(p); });
    };
    const std::vector<std::function<BatchLoss(const MlpModel&)>> losses{
        [&](const MlpModel& mm) { return ce_batch_loss(mm, b, n, ms); },
        entropy,
        [&](const MlpModel& mm) { return euat_loss(mm, b, n, ms); },
        [&](const MlpModel& mm) { return ce_pe_batch_loss(mm, b, 1.0, n, ms); }};
    for (const auto& loss : losses) {
      const BatchLoss l = loss(m);
      worst = std::max(worst, testing::max_param_fd_error(
                                  m, l.grads, [&](const MlpModel& mm) { return loss(mm).value; }));
    }
    const auto g = euat_loss(m, b, n, ms).grads;
    worst = std::max(worst, testing::max_input_fd_error(b.inputs, g.input, [&](const Tensor& x) {
                       LabeledBatch bb = b;
                       bb.inputs = x;
                       return euat_loss(m, bb, n, ms).value;
                     }));
  }
  const double secs = seconds_since(start);
  chk.require(worst < kFdTolerance, fmt("max relative error %.3g", worst));
  chk.require(secs < kFdBudgetSeconds, fmt("took %.1f s", secs));
  if (chk.ok) chk.detail = fmt("20 nets x 4 losses, max relative error %.3g, %.2f s", worst, secs);
  return chk;
}

Check metric_oracles() {
  Check chk;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto recs = random_records(200, seed, seed % 2 ? 10 : 1000000);
    chk.require(std::abs(*uauc(recs) - brute_uauc(recs)) <= kMetricTolerance, "uAUC differs from brute force");
    for (std::size_t bins : {1u, 10u, 15u}) {
      chk.require(std::abs(ece(recs, bins) - recount_ece(recs, bins)) <= kMetricTolerance, "ECE recount differs");
    }
    CounterRng rng(seed + 50);
    std::vector<double> a(37 + seed), b(53);
    for (auto& v : a) v = rng.next_uniform();
    for (auto& v : b) v = rng.next_uniform() * 0.8 + 0.1;
    chk.require(std::abs(wasserstein1(a, b) - quantile_w1(a, b)) <= kMetricTolerance, "W1 differs");

    const double t = 0.37;
    std::size_t tc = 0, tu = 0;
    for (const auto& r : recs) {
      tc += r.correct && r.uncertainty <= t;
      tu += !r.correct && r.uncertainty > t;
    }
    chk.require(uncertainty_accuracy(build_ucm(recs, t)) == double(tc + tu) / 200.0, "uA is not exact");
  }
  if (chk.ok) chk.detail = "uAUC, ECE, W1 (unequal sizes) within 1e-12; uA exact over 20 fixtures";
  return chk;
}

Check mc_dropout() {
  Check chk;
  double worst_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t k = 2 + seed % 5;
    const auto m = testing::random_model({4, 16, 16, k}, 0.3, seed);
    const Tensor x = testing::random_matrix(30, 4, seed + 7);
    for (const auto& d : mc_predict_batch(m, x, 20, seed)) {
      const double s = std::accumulate(d.probs.begin(), d.probs.end(), 0.0);
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      const double h = predictive_entropy(d), u = normalized_entropy(d);
      chk.require(h >= 0.0 && h <= std::log(double(k)) + 1e-12, "entropy out of range");
      chk.require(u >= 0.0 && u <= 1.0, "normalized entropy out of range");
    }
    const auto plain = testing::random_model({4, 16, 16, k}, 0.0, seed);
    const Tensor p = softmax(predict_logits(plain, x));
    const auto dists = mc_predict_batch(plain, x, 20, seed);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < k; ++c) chk.require(dists[r].probs[c] == p(r, c), "dropout 0 is not bit-exact");
  }
  chk.require(worst_sum <= kMcSumTolerance, fmt("probabilities sum off by %.3g", worst_sum));
  if (chk.ok) chk.detail = fmt("max |sum - 1| = %.3g; entropy in range; dropout 0 bit-exact", worst_sum);
  return chk;
}

Check trainer_invariants() {
  Check chk;
  chk.require(apportion(std::vector<std::size_t>{60, 30, 10}, 20) == std::vector<std::size_t>{12, 6, 2},
              "apportion {60,30,10} -> 20");
  GeneratorSpec spec;
  spec.n = 1500;
  spec.seed = 21;
  const auto data = split_dataset(generate_dataset(spec), 0.1, 0.2, 3);
  TrainingSchedule s;
  s.pretrain_epochs = 5;
  s.euat_epochs = 4;
  s.euat_lr = 0.01;
  s.train_mc_samples = 4;
  s.eval_mc_samples = 4;
  const auto pre = pretrain(MlpModel::initialize(std::vector<std::size_t>{2, 32, 32, 3}, 0.3, 22),
                            data.train, s, 23)
                       .model;
  std::vector<std::size_t> epochs;
  std::size_t full = 0;
  TrainObserver obs;
  obs.on_partition = [&](const PartitionedTrainSet& p) {
    epochs.push_back(p.epoch);
    chk.require(p.correct.size() + p.wrong.size() == data.train.size(), "partition does not cover the set");
    if (p.epoch == 0)
      chk.require(partition(pre, data.train.inputs, data.train.labels).wrong == p.wrong,
                  "first partition differs from the model's mistakes");
  };
  obs.on_batch = [&](const LabeledBatch& b) {
    const auto w = std::count(b.membership.begin(), b.membership.end(), Membership::wrong_set);
    chk.require(std::size_t(w) * 2 == b.inputs.rows(), "unbalanced batch");
    if (b.inputs.rows() == s.batch_size) ++full;
  };
  (void)euat_train(pre, data.train, data.validation, s, 24, {}, obs);
  chk.require(epochs == std::vector<std::size_t>{0, 1, 2, 3}, "partition not recomputed every epoch");
  chk.require(full > 0, "no full batches");
  s.euat_lr = 0.0;
  chk.require(euat_train(pre, data.train, data.validation, s, 24).model.same_parameters(pre),
              "lr 0 changed the model");
  if (chk.ok) chk.detail = fmt("%g full batches at B/2 each; 4 partitions; lr 0 leaves the model unchanged", double(full));
  return chk;
}

Check uncertainty_quality() {
  Check chk;
  std::vector<double> ratios, u_euat, u_ce;
  double slowest = 0.0;
  std::string rows;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t = Clock::now();
    const auto e = run_experiment(blob_config(seed, Method::euat), {.write_files = false});
    const auto c = run_experiment(blob_config(seed, Method::ce), {.write_files = false});
    slowest = std::max(slowest, seconds_since(t));
    chk.require(e.ok && c.ok, "run failed");
    if (!chk.ok) return chk;
    const double we = e.metrics["clean"]["wasserstein"], wc = c.metrics["clean"]["wasserstein"];
    ratios.push_back(we / wc);
    u_euat.push_back(e.metrics["clean"]["uAUC"]);
    u_ce.push_back(c.metrics["clean"]["uAUC"]);
    std::printf("  seed %d: W euat %.4f ce %.4f ratio %.3f | uAUC euat %.4f ce %.4f\n", int(seed), we, wc,
                we / wc, u_euat.back(), u_ce.back());
  }
  const double mr = median(ratios), me = median(u_euat), mc = median(u_ce);
  chk.require(mr >= kWassersteinRatio, fmt("median W ratio %.3f < 1.2", mr));
  chk.require(me > mc, fmt("median uAUC euat %.4f <= ce %.4f", me, mc));
  chk.require(slowest < kSeedBudgetSeconds, fmt("a seed took %.0f s", slowest));
  if (chk.ok) chk.detail = fmt("median W ratio %.3f, median uAUC %.4f vs %.4f, slowest seed %.1f s", mr, me, mc, slowest);
  return chk;
}

Check flip_gain() {
  Check chk;
  std::vector<double> g_euat, g_ce;
  std::size_t helped = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto ce = blob_config(seed, Method::ce), eu = blob_config(seed, Method::euat);
    for (auto* c : {&ce, &eu}) {
      c->dataset.binary_positive = 0;
      c->flip = true;
    }
    const auto e = run_experiment(eu, {.write_files = false});
    const auto c = run_experiment(ce, {.write_files = false});
    chk.require(e.ok && c.ok, "run failed");
    if (!chk.ok) return chk;
    const auto& fe = e.metrics["flip"];
    helped += fe["error_with_flip"].get<double>() <= fe["error_without_flip"].get<double>();
    g_euat.push_back(fe["flip_gain"]);
    g_ce.push_back(c.metrics["flip"]["flip_gain"]);
    std::printf("  seed %d: flip gain euat %+.4f ce %+.4f (euat error %.4f -> %.4f)\n", int(seed), g_euat.back(),
                g_ce.back(), fe["error_without_flip"].get<double>(), fe["error_with_flip"].get<double>());
  }
  const double me = median(g_euat), mc = median(g_ce);
  chk.require(helped >= kFlipSeedsRequired, fmt("flipping helped EUAT in only %g of 5 seeds", double(helped)));
  chk.require(me > mc, fmt("median gain euat %.4f <= ce %.4f", me, mc));
  if (chk.ok) chk.detail = fmt("no worse in %g/5 seeds; median gain %.4f vs %.4f", double(helped), me, mc);
  return chk;
}

Check adversarial() {
  Check chk;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto m = testing::random_model({5, 12, 4}, 0.3, seed);
    const Tensor x = testing::random_matrix(40, 5, seed + 9);
    std::vector<std::size_t> y(40);
    for (std::size_t r = 0; r < 40; ++r) y[r] = (r * 5 + 1) % 4;
    AttackConfig cfg;
    cfg.epsilon = 0.0;
    chk.require(fgsm(m, x, y, cfg) == x, "epsilon 0 is not the identity");
    for (double eps : {1.0 / 255.0, 0.1, 0.3}) {
      cfg.epsilon = eps;
      const Tensor adv = fgsm(m, x, y, cfg);
      for (std::size_t k = 0; k < x.size(); ++k) {
        chk.require(std::abs(adv[k] - x[k]) <= eps, "L-inf budget exceeded");
        chk.require(adv[k] >= 0.0 && adv[k] <= 1.0, "clip range violated");
      }
    }
  }
  std::string summary;
  for (auto method : {Method::euat, Method::ce, Method::ce_pe, Method::calibrated_ce, Method::ensemble}) {
    std::vector<double> adv_err, clean_err;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto c = blob_config(seed, method);
      c.dataset.generator.n = 3000;
      c.schedule.pretrain_epochs = 10;
      c.schedule.euat_epochs = 10;
      c.adversarial_training = true;
      c.evaluate_adversarial = true;
      c.attack.epsilon = kAttackEpsilon;
      const auto r = run_experiment(c, {.write_files = false});
      chk.require(r.ok, "run failed");
      if (!r.ok) return chk;
      adv_err.push_back(r.metrics["adversarial"]["error"]);
      clean_err.push_back(r.metrics["adversarial"]["clean_error"]);
    }
    const double a = median(adv_err), c = median(clean_err);
    std::printf("  %s: median error clean %.4f adversarial %.4f\n", to_string(method).c_str(), c, a);
    chk.require(a >= c, to_string(method) + ": adversarial error below clean error");
  }
  if (chk.ok) chk.detail = "exact L-inf bound, epsilon 0 identity, attacked error >= clean for all 5 methods";
  return chk;
}

Check isotonic() {
  Check chk;
  CounterRng rng(17);
  for (int t = 0; t < 40; ++t) {
    std::vector<double> x(25), y(25);
    for (std::size_t i = 0; i < 25; ++i) {
      x[i] = (double(i) + rng.next_uniform() * 0.5) / 25.0;
      y[i] = t % 2 ? double(rng.next_uniform() < x[i]) : rng.next_uniform();
    }
    const auto m = isotonic_fit(x, y);
    const auto want = minmax_isotonic(y);
    for (std::size_t i = 0; i < 25; ++i)
      chk.require(std::abs(m(x[i]) - want[i]) < kIsotonicTolerance, "fit differs from the closed form");
    double prev = -1.0;
    for (int g = 0; g <= 1000; ++g) {
      const double v = m(g / 1000.0);
      chk.require(v >= prev, "map decreases on the grid");
      prev = v;
    }
    for (std::size_t k : {2u, 3u, 10u}) {
      std::vector<double> p(k);
      double s = 0.0;
      for (auto& v : p) s += (v = std::pow(rng.next_uniform(), 3.0) + 1e-9);
      for (auto& v : p) v /= s;
      PredictiveDistribution d;
      d.probs = p;
      chk.require(isotonic_apply(m, d).predicted_class() == d.predicted_class(), "argmax changed");
    }
  }
  if (chk.ok) chk.detail = "monotone on 1001-point grid; closed-form match within 1e-6; argmax preserved";
  return chk;
}

Check reproducibility() {
  Check chk;
  auto c = blob_config(3, Method::euat);
  c.dataset.generator.n = 3000;
  c.evaluate_ood = true;
  c.evaluate_adversarial = true;
  const auto a = run_experiment(c, {.write_files = false});
  const auto b = run_experiment(c, {.write_files = false});
  chk.require(a.ok && b.ok, "run failed");
  chk.require(metrics_text(a.metrics) == metrics_text(b.metrics), "metrics differ between runs");

  Dataset d;
  d.class_count = 10;
  d.inputs = Tensor::matrix(50, 28 * 28);
  CounterRng rng(5);
  for (auto& v : d.inputs.data()) v = double(rng.next_below(256)) / 255.0;
  for (std::size_t i = 0; i < 50; ++i) d.labels.push_back(rng.next_below(10));
  const IdxBytes bytes = encode_idx(d, 28, 28);
  const Dataset back = parse_idx(bytes.images, bytes.labels);
  chk.require(back.inputs == d.inputs && back.labels == d.labels, "IDX round trip changed the data");
  const IdxBytes again = encode_idx(back, 28, 28);
  chk.require(again.images == bytes.images && again.labels == bytes.labels, "IDX bytes differ");
  if (chk.ok) chk.detail = "metrics byte-identical across two runs; IDX round trip exact";
  return chk;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Check()>>> criteria{
      {"gradients match central differences", gradients},
      {"metric oracles", metric_oracles},
      {"MC-dropout averaging", mc_dropout},
      {"EUAT training invariants", trainer_invariants},
      {"EUAT separates correct and wrong uncertainty", uncertainty_quality},
      {"flipping uncertain binary predictions", flip_gain},
      {"adversarial robustness checks", adversarial},
      {"isotonic calibration", isotonic},
      {"reproducibility and IDX round trip", reproducibility},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    try {
      c = criteria[i].second();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s criterion %zu: %s (%s)\n", c.ok ? "PASS" : "FAIL", i + 1, criteria[i].first,
                c.detail.c_str());
    std::fflush(stdout);
    failed += !c.ok;
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
