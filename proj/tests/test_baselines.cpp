#include <cmath>

#include "doctest.h"
#include "survgrad/baselines.hpp"
#include "survgrad/error.hpp"
#include "survgrad/metrics.hpp"
#include "test_support.hpp"

using namespace survgrad;
using namespace survgrad::testing;

namespace {

// f(t|x) = sum_j c_j t sin(x_j): Shapley values are c_j t (sin x_j - mean_b sin b_j).
class AdditiveModel : public SurvivalModel {
 public:
  explicit AdditiveModel(std::vector<double> c) : c_(std::move(c)) {}
  std::size_t num_features() const override { return c_.size(); }
  Matrix survival(const Matrix& X, const TimeGrid& grid) const override {
    Matrix out(X.rows(), grid.size());
    for (std::size_t i = 0; i < X.rows(); ++i) {
      for (std::size_t k = 0; k < grid.size(); ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < c_.size(); ++j) s += c_[j] * grid[k] * std::sin(X(i, j));
        out(i, k) = s;
      }
    }
    return out;
  }
  Tensor3 survival_gradient(const Matrix& X, const TimeGrid& grid) const override {
    Tensor3 out(X.rows(), X.cols(), grid.size());
    for (std::size_t i = 0; i < X.rows(); ++i) {
      for (std::size_t j = 0; j < c_.size(); ++j) {
        for (std::size_t k = 0; k < grid.size(); ++k) out(i, j, k) = c_[j] * grid[k] * std::cos(X(i, j));
      }
    }
    return out;
  }

 private:
  std::vector<double> c_;
};

}  // namespace

TEST_CASE("shapley estimators recover additive contributions exactly") {
  const AdditiveModel model({1.0, -0.5, 2.0, 0.0});
  const TimeGrid grid = linear_grid(0.5, 2.0, 4);
  const Matrix X = random_matrix(3, 4, 1);
  const Matrix background = random_matrix(16, 4, 2);
  std::vector<double> mean_sin(4, 0.0);
  for (std::size_t r = 0; r < 16; ++r) {
    for (std::size_t j = 0; j < 4; ++j) mean_sin[j] += std::sin(background(r, j)) / 16.0;
  }
  const std::vector<double> c{1.0, -0.5, 2.0, 0.0};

  ShapleyConfig cfg;
  cfg.background = background;
  cfg.permutations = 3;
  const Attribution sampled = survshap_t(model, X, grid, cfg);
  cfg.exhaustive = true;
  const Attribution exhaustive = survshap_t(model, X, grid, cfg);
  const Attribution brute = brute_force_shapley(model, X, grid, background);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t k = 0; k < 4; ++k) {
        const double expected = c[j] * grid[k] * (std::sin(X(i, j)) - mean_sin[j]);
        CHECK(sampled.values(i, j, k) == doctest::Approx(expected));
        CHECK(exhaustive.values(i, j, k) == doctest::Approx(expected));
        CHECK(brute.values(i, j, k) == doctest::Approx(expected));
      }
    }
  }
  CHECK(sampled.method == "survshap");
  CHECK(sampled.reference.kind == ReferenceKind::background);
}

TEST_CASE("exhaustive permutations agree with brute-force coalitions on an interacting model") {
  const FittedModel oracle(three_feature_oracle());
  const TimeGrid grid = linear_grid(0.5, 6.0, 6);
  const Matrix X = random_matrix(2, 3, 3);
  const Matrix background = random_matrix(10, 3, 4);
  ShapleyConfig cfg;
  cfg.background = background;
  cfg.exhaustive = true;
  const Attribution perm = survshap_t(oracle, X, grid, cfg);
  const Attribution brute = brute_force_shapley(oracle, X, grid, background);
  CHECK(max_abs_difference(perm.values.values(), brute.values.values()) < 1e-12);
  // Efficiency: every ordering telescopes to pred - pred_ref.
  cfg.exhaustive = false;
  cfg.permutations = 2;
  const Curve la = local_accuracy_t(survshap_t(oracle, X, grid, cfg));
  for (double v : la.values) CHECK(v < 1e-7);
}

TEST_CASE("survshap is seeded and validates its inputs") {
  const FittedModel oracle(three_feature_oracle());
  const TimeGrid grid = linear_grid(1.0, 3.0, 3);
  const Matrix X = random_matrix(2, 3, 5);
  ShapleyConfig cfg;
  cfg.background = random_matrix(6, 3, 6);
  cfg.permutations = 2;
  CHECK(survshap_t(oracle, X, grid, cfg).values == survshap_t(oracle, X, grid, cfg).values);
  cfg.background = Matrix(0, 3);
  CHECK_THROWS_AS(survshap_t(oracle, X, grid, cfg), ConfigError);
  cfg.background = random_matrix(6, 2, 6);
  CHECK_THROWS_AS(survshap_t(oracle, X, grid, cfg), ShapeError);
}

TEST_CASE("survlime recovers the coefficients of a proportional-hazards oracle") {
  const FittedModel oracle(three_feature_oracle());
  const SurvivalDataset train = small_dataset(400, 3);
  const SurvLimeReference ref = SurvLimeReference::from_training(train);
  CHECK(ref.feature_sd.size() == 3);
  // Short horizon keeps every neighbour's S above the underflow clamp.
  const TimeGrid grid = linear_grid(0.5, 2.0, 20);
  SurvLimeConfig cfg;
  cfg.neighbors = 200;
  const std::vector<double> x{0.4, 0.1, -0.3};
  const std::vector<double> w = survlime(oracle, x, grid, cfg, ref);
  CHECK(w[0] == doctest::Approx(1.7).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(-2.4).epsilon(1e-6));
  CHECK(std::abs(w[2]) < 1e-6);

  const Matrix batch = survlime(oracle, random_matrix(3, 3, 7, 0.3), grid, cfg, ref);
  CHECK(batch.rows() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(batch(i, 1) == doctest::Approx(-2.4).epsilon(1e-6));

  const nlohmann::json j = survlime_to_json(w, {"x1", "x2", "x3"});
  CHECK(j.at("x2").get<double>() == doctest::Approx(-2.4).epsilon(1e-6));
  cfg.neighbors = 0;
  CHECK_THROWS_AS(survlime(oracle, x, grid, cfg, ref), ConfigError);
}
