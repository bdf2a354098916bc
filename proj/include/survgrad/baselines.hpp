#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "survgrad/attribution.hpp"
#include "survgrad/dataset.hpp"

namespace survgrad {

struct ShapleyConfig {
  std::size_t permutations = 10;
  Matrix background;
  std::uint64_t seed = 1;
  // Enumerate all p! orderings with a coalition cache (p <= 8).
  bool exhaustive = false;
};

// Sampling Shapley values per time point. A coalition C is valued by the mean
// over background rows of S(t | x on C, background elsewhere).
Attribution survshap_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                       const ShapleyConfig& cfg);

// Exact Shapley values from all 2^p coalitions under the same value function.
Attribution brute_force_shapley(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                                const Matrix& background);

inline constexpr std::size_t kMaxBruteForceFeatures = 12;
inline constexpr std::size_t kMaxExhaustivePermutationFeatures = 8;

struct SurvLimeConfig {
  std::size_t neighbors = 1000;
  double kernel_width = 0.0;        // 0 selects 0.75 * sqrt(p) in standardized units
  double perturbation_scale = 0.5;  // neighbour sd as a multiple of the training sd
  std::uint64_t seed = 1;
};

// Training-set quantities SurvLIME needs: feature scales and the
// Nelson-Aalen cumulative hazard used as the surrogate baseline.
struct SurvLimeReference {
  std::vector<double> feature_sd;
  NelsonAalen baseline;

  static SurvLimeReference from_training(const SurvivalDataset& train);
};

// Local Cox surrogate log H(t|z) ~ log H0(t) + c + z.b fitted by kernel-weighted
// least squares over the grid; returns b (length p). The free intercept c
// absorbs any constant offset between H0 and the black-box baseline.
std::vector<double> survlime(const SurvivalModel& model, std::span<const double> x,
                             const TimeGrid& grid, const SurvLimeConfig& cfg,
                             const SurvLimeReference& ref);
// One weight row per instance (n x p); instance i uses seed substream i.
Matrix survlime(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                const SurvLimeConfig& cfg, const SurvLimeReference& ref);

nlohmann::json survlime_to_json(std::span<const double> weights,
                                const std::vector<std::string>& feature_names);

}  // namespace survgrad
