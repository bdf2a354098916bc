#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "survgrad/dataset.hpp"
#include "survgrad/dense_net.hpp"
#include "survgrad/matrix.hpp"

namespace survgrad {

// Anything that predicts survival curves S(t|x) and their input gradients.
// Explanation methods are written against this interface only.
class SurvivalModel {
 public:
  virtual ~SurvivalModel() = default;

  virtual std::size_t num_features() const = 0;
  // n x T matrix of S(t_k | x_i). Raw model output (no clamping).
  virtual Matrix survival(const Matrix& X, const TimeGrid& grid) const = 0;
  // n x p x T tensor of dS(t_k | x_i) / dx_ij.
  virtual Tensor3 survival_gradient(const Matrix& X, const TimeGrid& grid) const = 0;
};

SurvivalCurveMatrix predict_survival(const SurvivalModel& model, const Matrix& X,
                                     const TimeGrid& grid);
// p x T matrix of dS(t_k|x)/dx_j for a single instance.
Matrix predict_gradient(const SurvivalModel& model, std::span<const double> x,
                        const TimeGrid& grid);

// Step baseline hazard: increments at distinct event times.
struct BaselineHazard {
  std::vector<double> times;
  std::vector<double> increments;
  std::vector<double> cumulative;  // running sum of increments

  BaselineHazard() = default;
  BaselineHazard(std::vector<double> times, std::vector<double> increments);
  // H0(t), right-continuous; 0 before the first jump, flat after the last.
  double cumulative_at(double t) const;
};

// Breslow estimator: increment d_i / sum_{y_j >= t_i} exp(g_j) at each
// distinct event time t_i.
BaselineHazard breslow_baseline(std::span<const double> time, std::span<const int> event,
                                std::span<const double> log_risk);

// Unique event times, thinned to at most `size` equidistant quantiles.
TimeGrid evaluation_grid(const SurvivalDataset& data, std::size_t size);
TimeGrid evaluation_grid(std::span<const double> time, std::span<const int> event,
                         std::size_t size);

struct TrainConfig {
  std::vector<std::size_t> hidden{32, 32};
  Activation activation = Activation::relu;
  double dropout = 0.1;
  std::size_t batch_size = 1024;
  std::size_t max_epochs = 500;
  std::size_t patience = 10;
  double learning_rate = 0.01;
  double validation_fraction = 0.3;
  std::uint64_t seed = 1;
  double deephit_alpha = 0.5;
  double deephit_sigma = 0.1;
  std::size_t deephit_bins = 32;
  std::size_t coxtime_knots = 128;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& doc);

struct TrainHistory {
  std::vector<double> train_loss;       // mean minibatch loss per epoch
  std::vector<double> validation_loss;  // empty when no validation split was used
  std::size_t best_epoch = 0;           // 1-based epoch whose weights were kept
};

struct DeepSurvModel {
  DenseNet net;  // p -> 1 log-risk g(x)
  BaselineHazard baseline;
};

struct CoxTimeModel {
  DenseNet net;  // (t_std, x) -> g(t, x)
  double time_mean = 0.0;
  double time_sd = 1.0;
  std::vector<double> knots;       // times at which the baseline jumps
  std::vector<double> increments;  // baseline increment at each knot
  double risk_time = 0.0;          // time used for scalar risk scores (training median)

  double standardize_time(double t) const { return (t - time_mean) / time_sd; }
};

struct DeepHitModel {
  DenseNet net;                  // p -> K logits
  std::vector<double> bin_edges; // right edges tau_1 < ... < tau_K of the bins

  std::size_t bins() const { return bin_edges.size(); }
};

// Cox model with Weibull baseline h(t|x) = lambda*gamma*t^(gamma-1)*exp(x.beta + c*x_f*log t),
// c = tve_coeff acting on feature x_f.
struct CoxWeibullOracle {
  double lambda = 0.1;
  double gamma = 2.5;
  std::vector<double> beta;
  double tve_coeff = 0.0;
  std::size_t tve_feature = 0;

  // Lower integration limit used when the hazard is not integrable at 0
  // (gamma + c*x_f <= 0).
  static constexpr double kTruncation = 1e-8;

  void validate() const;
  double linear_predictor(std::span<const double> x) const;
  double shape(std::span<const double> x) const;  // gamma + c * x_f
  double cumulative_hazard(double t, std::span<const double> x) const;
  // dH(t|x)/dx_j into `out` (length p); returns H.
  double cumulative_hazard_gradient(double t, std::span<const double> x,
                                    std::span<double> out) const;
};

enum class ModelKind { none, deepsurv, coxtime, deephit, oracle };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

class FittedModel : public SurvivalModel {
 public:
  using Variant =
      std::variant<std::monostate, DeepSurvModel, CoxTimeModel, DeepHitModel, CoxWeibullOracle>;

  FittedModel() = default;
  explicit FittedModel(Variant model, TrainConfig config = {}, TrainHistory history = {});

  bool fitted() const { return !std::holds_alternative<std::monostate>(model_); }
  ModelKind kind() const;
  const Variant& variant() const { return model_; }
  const TrainConfig& config() const { return config_; }
  const TrainHistory& history() const { return history_; }

  std::vector<std::string> feature_names;

  std::size_t num_features() const override;
  Matrix survival(const Matrix& X, const TimeGrid& grid) const override;
  Tensor3 survival_gradient(const Matrix& X, const TimeGrid& grid) const override;

  // Scalar risk for concordance: g(x) for DeepSurv, g(median time, x) for
  // CoxTime, minus the restricted mean survival time for DeepHit, log H(1|x)
  // for the oracle.
  std::vector<double> risk_score(const Matrix& X) const;

 private:
  void require_fitted() const;

  Variant model_;
  TrainConfig config_;
  TrainHistory history_;
};

FittedModel fit_deepsurv(const SurvivalDataset& data, const TrainConfig& cfg);
FittedModel fit_coxtime(const SurvivalDataset& data, const TrainConfig& cfg);
FittedModel fit_deephit(const SurvivalDataset& data, const TrainConfig& cfg);
FittedModel fit_model(ModelKind kind, const SurvivalDataset& data, const TrainConfig& cfg);

nlohmann::json to_json(const FittedModel& model);
FittedModel model_from_json(const nlohmann::json& doc);
void save_model(const FittedModel& model, const std::filesystem::path& path);
FittedModel load_model(const std::filesystem::path& path);

namespace loss {

// Negative Cox log partial likelihood (Breslow ties), averaged over events.
// Writes dL/dg into `grad` when nonempty. Returns 0 when there are no events.
double cox_partial_likelihood(std::span<const double> log_risk, std::span<const double> time,
                              std::span<const int> event, std::span<double> grad);

// DeepHit objective alpha * rank + (1 - alpha) * NLL on a batch of logits.
// `bin` holds the 0-based bin index of each observed time. Writes dL/dlogits
// into `grad` when it is nonempty.
double deephit(const Matrix& logits, std::span<const std::size_t> bin,
               std::span<const double> time, std::span<const int> event, double alpha,
               double sigma, Matrix* grad);

}  // namespace loss

}  // namespace survgrad
