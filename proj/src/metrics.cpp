#include "survgrad/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "survgrad/log.hpp"
#include "survgrad/parallel.hpp"

namespace survgrad {

double concordance_index(std::span<const double> time, std::span<const int> event,
                         std::span<const double> risk) {
  const std::size_t n = time.size();
  if (event.size() != n || risk.size() != n) throw ShapeError("concordance_index: length mismatch");
  double concordant = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (event[i] != 1) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (!(time[i] < time[j])) continue;
      ++pairs;
      if (risk[i] > risk[j]) {
        concordant += 1.0;
      } else if (risk[i] == risk[j]) {
        concordant += 0.5;
      }
    }
  }
  if (pairs == 0) throw MetricError("concordance_index: no comparable pairs");
  return concordant / static_cast<double>(pairs);
}

KaplanMeier censoring_km(const SurvivalDataset& train) {
  return KaplanMeier::fit(train.time, train.event, true);
}

Curve brier_score(const SurvivalCurveMatrix& curves, std::span<const double> time,
                  std::span<const int> event, const KaplanMeier& censoring) {
  const std::size_t n = time.size(), T = curves.grid.size();
  if (event.size() != n || curves.values.rows() != n || curves.values.cols() != T) {
    throw ShapeError("brier_score: curve and data shapes disagree");
  }
  const Matrix S = monotonize_survival(curves.values);
  // 1 / G(y_i-) for events, evaluated once.
  std::vector<double> event_weight(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (event[i] != 1) continue;
    const double g = censoring.left_limit(time[i]);
    event_weight[i] = g > 0.0 ? 1.0 / g : 0.0;
  }
  Curve out;
  for (std::size_t k = 0; k < T; ++k) {
    const double t = curves.grid[k];
    const double g_t = censoring(t);
    if (!(g_t > 0.0)) {
      warn("brier_score: censoring survival is zero from t=" + std::to_string(t) + "; grid truncated");
      break;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = S(i, k);
      if (time[i] <= t && event[i] == 1) {
        sum += s * s * event_weight[i];
      } else if (time[i] > t) {
        sum += (1.0 - s) * (1.0 - s) / g_t;
      }
    }
    out.times.push_back(t);
    out.values.push_back(sum / static_cast<double>(n));
  }
  return out;
}

double integrated_brier_score(const Curve& brier) {
  const std::size_t T = brier.times.size();
  if (T < 2) throw MetricError("integrated Brier score needs at least two grid points");
  double area = 0.0;
  for (std::size_t k = 1; k < T; ++k) {
    area += 0.5 * (brier.values[k] + brier.values[k - 1]) * (brier.times[k] - brier.times[k - 1]);
  }
  return area / (brier.times.back() - brier.times.front());
}

Curve local_accuracy_t(const Attribution& attr) {
  if (!attr.has_reference()) throw ConfigError("local accuracy needs an attribution with pred_ref");
  const std::size_t n = attr.instances(), p = attr.features(), T = attr.times();
  if (n == 0) throw MetricError("local accuracy needs at least one instance");
  Curve out;
  for (std::size_t k = 0; k < T; ++k) {
    double err = 0.0, mean_f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += attr.values(i, j, k);
      const double e = attr.pred_diff(i, k) - s;
      err += e * e;
      mean_f += attr.pred(i, k);
    }
    err /= static_cast<double>(n);
    mean_f /= static_cast<double>(n);
    if (mean_f == 0.0) {
      warn("local accuracy: mean prediction is zero at t=" + std::to_string(attr.grid[k]) + "; point dropped");
      continue;
    }
    out.times.push_back(attr.grid[k]);
    out.values.push_back(std::sqrt(err / mean_f));
  }
  return out;
}

std::size_t RankingTable::modal_rank(std::size_t feature) const {
  const auto& c = counts.at(feature);
  return static_cast<std::size_t>(std::max_element(c.begin(), c.end()) - c.begin()) + 1;
}

std::vector<double> RankingTable::mean_ranks() const {
  std::vector<double> m(features(), 0.0);
  for (const auto& r : ranks) {
    for (std::size_t j = 0; j < r.size(); ++j) m[j] += static_cast<double>(r[j]);
  }
  for (double& v : m) v /= static_cast<double>(std::max<std::size_t>(1, ranks.size()));
  return m;
}

RankingTable global_ranking(const Matrix& importance) {
  const std::size_t n = importance.rows(), p = importance.cols();
  if (n == 0) throw MetricError("global ranking needs at least one instance");
  RankingTable table;
  table.counts.assign(p, std::vector<std::size_t>(p, 0));
  table.ranks.reserve(n);
  std::vector<std::size_t> order(p);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return importance(i, a) > importance(i, b); });
    std::vector<std::size_t> rank(p);
    for (std::size_t r = 0; r < p; ++r) rank[order[r]] = r + 1;
    for (std::size_t j = 0; j < p; ++j) ++table.counts[j][rank[j] - 1];
    table.ranks.push_back(std::move(rank));
  }
  return table;
}

RankingTable global_ranking(const Attribution& attr) { return global_ranking(time_averaged_importance(attr)); }

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw MetricError("spearman needs two equal-length samples (n >= 2)");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw MetricError("spearman is undefined for a constant sample");
  return sab / std::sqrt(saa * sbb);
}

RuntimeStats measure_runtime(const std::function<void()>& task, std::size_t repetitions, std::size_t threads) {
  if (repetitions == 0) throw ConfigError("measure_runtime needs at least one repetition");
  ScopedThreadBudget pin(threads);
  RuntimeStats stats;
  for (std::size_t r = 0; r < repetitions; ++r) {
    const auto start = std::chrono::steady_clock::now();
    task();
    const auto stop = std::chrono::steady_clock::now();
    stats.samples.push_back(std::chrono::duration<double>(stop - start).count());
  }
  std::vector<double> sorted = stats.samples;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  stats.median_seconds = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return stats;
}

nlohmann::json to_json(const Curve& curve) { return {{"times", curve.times}, {"values", curve.values}}; }

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json doc = {{"format", "survgrad.metrics"},
                        {"version", 1},
                        {"model", r.model},
                        {"c_index", r.c_index},
                        {"brier", to_json(r.brier)},
                        {"ibs", r.ibs},
                        {"metadata", r.metadata}};
  if (r.local_accuracy) doc["local_accuracy"] = to_json(*r.local_accuracy);
  return doc;
}

}  // namespace survgrad
