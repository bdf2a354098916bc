#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "survgrad/dataset.hpp"
#include "survgrad/survival_models.hpp"

namespace survgrad {

enum class FeatureLaw { standard_normal, uniform01, uniform_sym };

std::string_view to_string(FeatureLaw law);
FeatureLaw parse_feature_law(std::string_view name);

// Weibull-baseline Cox design
//   h(t|x) = lambda * gamma * t^(gamma-1) * exp(x.beta + tve_coeff * x_1 * log t)
// with administrative censoring at censor_time.
struct SimDesign {
  std::string name = "custom";
  std::size_t n = 1000;
  double lambda = 0.1;
  double gamma = 2.5;
  std::vector<double> beta;
  double tve_coeff = 0.0;
  double censor_time = 7.0;
  std::vector<FeatureLaw> feature_laws;  // one per feature
  std::uint64_t seed = 1;
  // Suggested test-set size for train_test_split.
  std::size_t test_n = 0;

  std::size_t num_features() const { return beta.size(); }
  void validate() const;
  CoxWeibullOracle oracle() const;
};

SurvivalDataset simulate(const SimDesign& design);

// Solves H(t|x) = -log u for t.
double invert_event_time(double u, const SimDesign& design, std::span<const double> x);

// time_independent, time_dependent, linear_p<p> (e.g. "linear_p20"), ranking_p5.
SimDesign design_preset(std::string_view name);
std::vector<std::string> design_preset_names();
SimDesign linear_p_design(std::size_t p);

std::pair<SurvivalDataset, SurvivalDataset> train_test_split(const SurvivalDataset& data,
                                                             std::size_t test_n,
                                                             std::uint64_t seed);

nlohmann::json to_json(const SimDesign& design);
SimDesign sim_design_from_json(const nlohmann::json& doc);
void write_design_json(const SimDesign& design, const std::filesystem::path& path);

}  // namespace survgrad
