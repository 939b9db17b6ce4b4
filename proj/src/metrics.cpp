#include "euat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace euat {

namespace {

void require_nonempty(std::span<const EvalRecord> records, const char* what) {
  if (records.empty()) throw std::invalid_argument(std::string(what) + ": no records");
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json histogram_json(const Histogram& h) {
  return {{"edges", h.edges}, {"counts", h.counts}};
}

}  // namespace

EvalRecord make_record(const PredictiveDistribution& dist, std::size_t label) {
  if (label >= dist.class_count()) throw std::invalid_argument("record: label out of range");
  EvalRecord rec;
  rec.correct = dist.predicted_class() == label;
  rec.uncertainty = normalized_entropy(dist);
  rec.confidence = dist.confidence();
  rec.residual = std::clamp(1.0 - dist.probs[label], 0.0, 1.0);
  return rec;
}

std::vector<EvalRecord> make_records(std::span<const PredictiveDistribution> dists,
                                     std::span<const std::size_t> labels) {
  if (dists.size() != labels.size()) throw std::invalid_argument("records: size mismatch");
  std::vector<EvalRecord> out;
  out.reserve(dists.size());
  for (std::size_t i = 0; i < dists.size(); ++i) out.push_back(make_record(dists[i], labels[i]));
  return out;
}

UncertaintyConfusionMatrix build_ucm(std::span<const EvalRecord> records, double threshold) {
  require_nonempty(records, "ucm");
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("ucm: threshold must lie in [0, 1]");
  }
  UncertaintyConfusionMatrix ucm;
  ucm.threshold = threshold;
  for (const auto& r : records) {
    const bool certain = r.uncertainty <= threshold;
    if (r.correct) {
      ++(certain ? ucm.tc : ucm.fu);
    } else {
      ++(certain ? ucm.fc : ucm.tu);
    }
  }
  return ucm;
}

double uncertainty_accuracy(const UncertaintyConfusionMatrix& ucm) {
  if (ucm.total() == 0) throw std::invalid_argument("uA: empty confusion matrix");
  return static_cast<double>(ucm.tc + ucm.tu) / static_cast<double>(ucm.total());
}

std::optional<double> uauc(std::span<const EvalRecord> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].uncertainty < records[b].uncertainty;
  });
  double wrong_rank_sum = 0.0;
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    while (end + 1 < order.size() &&
           records[order[end + 1]].uncertainty == records[order[start]].uncertainty) {
      ++end;
    }
    // 1-based mid-rank of the tie block [start, end].
    const double mid_rank = 0.5 * static_cast<double>(start + end + 2);
    for (std::size_t k = start; k <= end; ++k) {
      if (!records[order[k]].correct) {
        wrong_rank_sum += mid_rank;
        ++wrong;
      }
    }
    start = end + 1;
  }
  const std::size_t correct = records.size() - wrong;
  if (wrong == 0 || correct == 0) return std::nullopt;
  const double nw = static_cast<double>(wrong);
  const double u = wrong_rank_sum - nw * (nw + 1.0) / 2.0;
  return u / (nw * static_cast<double>(correct));
}

double ece(std::span<const EvalRecord> records, std::size_t bins) {
  require_nonempty(records, "ece");
  if (bins == 0) throw std::invalid_argument("ece: need at least one bin");
  const double n_bins = static_cast<double>(bins);
  auto edge = [&](std::size_t b) { return static_cast<double>(b) / n_bins; };
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<double> hits(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (const auto& r : records) {
    const double c = std::clamp(r.confidence, 0.0, 1.0);
    auto b = static_cast<std::size_t>(std::clamp(std::ceil(c * n_bins) - 1.0, 0.0, n_bins - 1.0));
    // Settle rounding at the edges against the exact (lo, hi] convention.
    while (b + 1 < bins && c > edge(b + 1)) ++b;
    while (b > 0 && c <= edge(b)) --b;
    conf_sum[b] += c;
    hits[b] += r.correct ? 1.0 : 0.0;
    ++count[b];
  }
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double n = static_cast<double>(count[b]);
    total += n * std::abs(hits[b] / n - conf_sum[b] / n);
  }
  return total / static_cast<double>(records.size());
}

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein: both samples must be non-empty");
  std::vector<double> xs(a.begin(), a.end());
  std::vector<double> ys(b.begin(), b.end());
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  const double na = static_cast<double>(xs.size());
  const double nb = static_cast<double>(ys.size());
  // Integrate |F_a - F_b| over the merged support. With i, j the counts at or
  // below the current point, F_a - F_b = (i * nb - j * na) / (na * nb).
  std::size_t i = 0;
  std::size_t j = 0;
  double prev = std::min(xs.front(), ys.front());
  double area = 0.0;
  while (i < xs.size() || j < ys.size()) {
    const double x = j == ys.size() ? xs[i] : i == xs.size() ? ys[j] : std::min(xs[i], ys[j]);
    area += std::abs(static_cast<double>(i) * nb - static_cast<double>(j) * na) * (x - prev);
    while (i < xs.size() && xs[i] == x) ++i;
    while (j < ys.size() && ys[j] == x) ++j;
    prev = x;
  }
  return area / (na * nb);
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: size mismatch");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = x[k] - mx;
    const double dy = y[k] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::optional<double> residual_correlation(std::span<const EvalRecord> records) {
  std::vector<double> res, unc;
  for (const auto& r : records) {
    res.push_back(r.residual);
    unc.push_back(r.uncertainty);
  }
  return pearson(res, unc);
}

std::optional<double> binary_residual_correlation(std::span<const EvalRecord> records) {
  std::vector<double> res, unc;
  for (const auto& r : records) {
    res.push_back(r.correct ? 0.0 : 1.0);
    unc.push_back(r.uncertainty);
  }
  return pearson(res, unc);
}

double threshold_objective(std::span<const EvalRecord> records, double threshold,
                           ThresholdObjective objective) {
  const auto ucm = build_ucm(records, threshold);
  if (objective == ThresholdObjective::uncertainty_accuracy) return uncertainty_accuracy(ucm);
  return (static_cast<double>(ucm.tu) - static_cast<double>(ucm.fu)) /
         static_cast<double>(ucm.total());
}

std::vector<double> threshold_candidates(std::span<const EvalRecord> records) {
  std::vector<double> u;
  for (const auto& r : records) u.push_back(r.uncertainty);
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> out{0.0, 1.0};
  for (std::size_t k = 0; k + 1 < u.size(); ++k) out.push_back(0.5 * (u[k] + u[k + 1]));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double tune_threshold(std::span<const EvalRecord> records, ThresholdObjective) {
  require_nonempty(records, "threshold tuning");
  // uA * n and flip_gain * n differ by the constant (correct count), so both
  // objectives rank thresholds by the integer (wrong above) - (correct above).
  std::vector<double> wrong_u, correct_u;
  for (const auto& r : records) (r.correct ? correct_u : wrong_u).push_back(r.uncertainty);
  std::sort(wrong_u.begin(), wrong_u.end());
  std::sort(correct_u.begin(), correct_u.end());
  auto above = [](const std::vector<double>& v, double t) {
    return static_cast<long long>(v.end() - std::upper_bound(v.begin(), v.end(), t));
  };
  double best_t = 0.0;
  long long best_score = 0;
  bool first = true;
  for (double t : threshold_candidates(records)) {
    const long long score = above(wrong_u, t) - above(correct_u, t);
    if (first || score > best_score) {
      best_t = t;
      best_score = score;
      first = false;
    }
  }
  return best_t;
}

double error_rate(std::span<const EvalRecord> records) {
  require_nonempty(records, "error rate");
  const auto wrong = std::count_if(records.begin(), records.end(),
                                   [](const EvalRecord& r) { return !r.correct; });
  return static_cast<double>(wrong) / static_cast<double>(records.size());
}

Histogram uncertainty_histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram: need at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b) {
    h.edges.push_back(static_cast<double>(b) / static_cast<double>(bins));
  }
  for (double v : values) {
    const double scaled = std::clamp(v, 0.0, 1.0) * static_cast<double>(bins);
    ++h.counts[std::min(static_cast<std::size_t>(scaled), bins - 1)];
  }
  return h;
}

MetricsReport compute_metrics(std::span<const EvalRecord> records, double threshold,
                              std::size_t ece_bins) {
  require_nonempty(records, "metrics");
  MetricsReport m;
  m.samples = records.size();
  m.threshold = threshold;
  m.error = error_rate(records);
  m.ucm = build_ucm(records, threshold);
  m.ua = uncertainty_accuracy(m.ucm);
  m.uauc_value = uauc(records);
  m.ece_bins = ece_bins;
  m.ece_value = ece(records, ece_bins);
  std::vector<double> u_correct, u_wrong;
  for (const auto& r : records) (r.correct ? u_correct : u_wrong).push_back(r.uncertainty);
  m.correct_count = u_correct.size();
  if (!u_correct.empty() && !u_wrong.empty()) m.wasserstein = wasserstein1(u_correct, u_wrong);
  m.correlation = residual_correlation(records);
  m.binary_correlation = binary_residual_correlation(records);
  m.hist_correct = uncertainty_histogram(u_correct);
  m.hist_wrong = uncertainty_histogram(u_wrong);
  return m;
}

nlohmann::json to_json(const MetricsReport& m) {
  std::vector<double> ece_edges;
  for (std::size_t b = 0; b <= m.ece_bins; ++b) {
    ece_edges.push_back(static_cast<double>(b) / static_cast<double>(m.ece_bins));
  }
  return {{"samples", m.samples},
          {"correct", m.correct_count},
          {"wrong", m.samples - m.correct_count},
          {"threshold", m.threshold},
          {"error", m.error},
          {"ucm", {{"tc", m.ucm.tc}, {"tu", m.ucm.tu}, {"fc", m.ucm.fc}, {"fu", m.ucm.fu}}},
          {"uA", m.ua},
          {"uAUC", optional_json(m.uauc_value)},
          {"ece", m.ece_value},
          {"ece_bin_edges", ece_edges},
          {"wasserstein", optional_json(m.wasserstein)},
          {"corr", optional_json(m.correlation)},
          {"corr_binary", optional_json(m.binary_correlation)},
          {"histogram_correct", histogram_json(m.hist_correct)},
          {"histogram_wrong", histogram_json(m.hist_wrong)}};
}

}  // namespace euat
