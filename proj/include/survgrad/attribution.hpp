#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "survgrad/dataset.hpp"
#include "survgrad/matrix.hpp"
#include "survgrad/survival_models.hpp"

namespace survgrad {

enum class ReferenceKind { none, zeros, mean, custom, background };

std::string_view to_string(ReferenceKind kind);
ReferenceKind parse_reference_kind(std::string_view name);

struct ReferenceSpec {
  ReferenceKind kind = ReferenceKind::none;
  std::vector<double> point;        // the baseline x~ for zeros/mean/custom
  std::size_t background_rows = 0;  // for background references
  std::uint64_t seed = 0;
};

// Relevance R_j(t_k) for a batch of instances together with the curves it
// decomposes. pred_ref and pred_diff are either both empty or both n x T.
struct Attribution {
  Tensor3 values;  // n x p x T
  TimeGrid grid;
  std::string method;
  nlohmann::json params = nlohmann::json::object();
  Matrix pred;       // n x T
  Matrix pred_ref;   // n x T
  Matrix pred_diff;  // pred - pred_ref
  ReferenceSpec reference;
  std::vector<std::string> feature_names;
  std::vector<std::size_t> instance_ids;  // labels used by exports; defaults to 0..n-1

  std::size_t instances() const { return values.dim0(); }
  std::size_t features() const { return values.dim1(); }
  std::size_t times() const { return values.dim2(); }
  bool has_reference() const { return !pred_diff.empty(); }
  Matrix instance(std::size_t i) const;  // p x T
  // Row index of the given instance label; throws ConfigError when absent.
  std::size_t locate(std::size_t instance_id) const;
  void validate() const;
};

struct NoiseSpec {
  double noise_level = 0.1;
  std::size_t samples = 50;
  std::uint64_t seed = 1;
};

struct GradShapConfig {
  std::size_t n_samples = 0;  // background draws per instance; 0 means one per background row
  std::size_t n_int = 25;     // alpha draws per background draw
  std::uint64_t seed = 1;
  // Midpoint alphas (l - 1/2) / n_int instead of uniform draws.
  bool stratified = false;
};

Attribution grad_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                   bool absolute = false);

// Noise scale per feature is noise_level * (max - min) over `range_data`.
Attribution smoothgrad_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                         const NoiseSpec& noise, const Matrix& range_data,
                         bool multiply_input = false);

Attribution gradxinput_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid);

// Midpoint rule with `steps` nodes along the straight path from `baseline`.
Attribution intgrad_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                      std::span<const double> baseline, std::size_t steps,
                      ReferenceKind kind = ReferenceKind::custom);

Attribution gradshap_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                       const Matrix& background, const GradShapConfig& cfg);

// Per-feature baselines.
std::vector<double> zeros_baseline(std::size_t p);
std::vector<double> mean_baseline(const Matrix& data);

// |R_j| / sum_k |R_k| per time slice; all-zero slices become uniform with a warning.
Tensor3 normalized_contributions(const Attribution& attr);
Tensor3 normalized_contributions(const Tensor3& values, bool warn_on_zero = true);
// Time average of the normalized contributions, n x p.
Matrix time_averaged_importance(const Attribution& attr);
Matrix time_averaged_importance(const Tensor3& normalized);

// Long format "instance,feature,time,value,method".
std::string attribution_to_csv(const Attribution& attr);
void write_attribution_csv(const Attribution& attr, const std::filesystem::path& path);
nlohmann::json to_json(const Attribution& attr);
Attribution attribution_from_json(const nlohmann::json& doc);
void write_attribution_json(const Attribution& attr, const std::filesystem::path& path);
Attribution read_attribution_json(const std::filesystem::path& path);

// Counts network gradient evaluations issued through a wrapped model.
class CountingModel : public SurvivalModel {
 public:
  explicit CountingModel(const SurvivalModel& inner) : inner_(inner) {}
  std::size_t num_features() const override { return inner_.num_features(); }
  Matrix survival(const Matrix& X, const TimeGrid& grid) const override;
  Tensor3 survival_gradient(const Matrix& X, const TimeGrid& grid) const override;
  std::size_t gradient_rows() const { return gradient_rows_.load(); }
  std::size_t survival_rows() const { return survival_rows_.load(); }

 private:
  const SurvivalModel& inner_;
  mutable std::atomic<std::size_t> gradient_rows_{0};
  mutable std::atomic<std::size_t> survival_rows_{0};
};

}  // namespace survgrad
