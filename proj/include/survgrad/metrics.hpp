#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "survgrad/attribution.hpp"
#include "survgrad/dataset.hpp"

namespace survgrad {

// Harrell's C: pairs with t_i < t_j and delta_i = 1, ties in risk count 1/2.
double concordance_index(std::span<const double> time, std::span<const int> event,
                         std::span<const double> risk);

struct Curve {
  std::vector<double> times;
  std::vector<double> values;
};

// Kaplan-Meier estimate of the censoring survival G.
KaplanMeier censoring_km(const SurvivalDataset& train);

// IPCW Brier score (Graf et al.) of the monotonized curves over the grid,
// averaged over all test rows. Grid points with G(t) = 0 are dropped with a warning.
Curve brier_score(const SurvivalCurveMatrix& curves, std::span<const double> time,
                  std::span<const int> event, const KaplanMeier& censoring);

// Trapezoidal integral divided by the grid span.
double integrated_brier_score(const Curve& brier);

// sqrt(mean_x (pred - pred_ref - sum_j R_j)^2 / mean_x pred) per time point.
// Time points where mean_x pred is zero are dropped with a warning.
Curve local_accuracy_t(const Attribution& attr);

struct RankingTable {
  std::vector<std::vector<std::size_t>> ranks;  // per instance, 1-based rank of each feature
  std::vector<std::vector<std::size_t>> counts; // counts[feature][rank - 1]

  std::size_t features() const { return counts.size(); }
  // Most frequent rank (1-based) of a feature; the smaller rank wins ties.
  std::size_t modal_rank(std::size_t feature) const;
  std::vector<double> mean_ranks() const;
};

// Ranks features by descending importance per row; equal scores rank the
// lower feature index first.
RankingTable global_ranking(const Matrix& importance);
RankingTable global_ranking(const Attribution& attr);  // uses time_averaged_importance

// Spearman correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

struct RuntimeStats {
  double median_seconds = 0.0;
  std::vector<double> samples;
};

// Wall-clock median over repetitions, with the internal thread budget pinned.
RuntimeStats measure_runtime(const std::function<void()>& task, std::size_t repetitions,
                             std::size_t threads = 1);

struct MetricReport {
  std::string model;
  double c_index = 0.0;
  Curve brier;
  double ibs = 0.0;
  std::optional<Curve> local_accuracy;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json to_json(const Curve& curve);
nlohmann::json to_json(const MetricReport& report);

}  // namespace survgrad
