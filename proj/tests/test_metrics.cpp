#include <chrono>
#include <cmath>
#include <thread>

#include "doctest.h"
#include "survgrad/error.hpp"
#include "survgrad/log.hpp"
#include "survgrad/metrics.hpp"
#include "survgrad/parallel.hpp"
#include "test_support.hpp"

using namespace survgrad;
using namespace survgrad::testing;

TEST_CASE("concordance index on hand-counted pairs") {
  const std::vector<double> time{1.0, 2.0, 3.0};
  const std::vector<int> event{1, 1, 0};
  CHECK(concordance_index(time, event, std::vector<double>{3.0, 2.0, 1.0}) == 1.0);
  CHECK(concordance_index(time, event, std::vector<double>{1.0, 2.0, 3.0}) == 0.0);
  CHECK(concordance_index(time, event, std::vector<double>{1.0, 1.0, 1.0}) == 0.5);
  // Pairs (0,1), (0,2), (1,2); only (1,2) is discordant.
  CHECK(concordance_index(time, event, std::vector<double>{3.0, 1.0, 2.0}) == doctest::Approx(2.0 / 3.0));
  // A censored earlier time is not comparable.
  CHECK_THROWS_AS(concordance_index(std::vector<double>{1.0, 2.0}, std::vector<int>{0, 1},
                                    std::vector<double>{1.0, 2.0}),
                  MetricError);
  CHECK_THROWS_AS(concordance_index(time, event, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("brier score with censoring weights") {
  const std::vector<double> time{1.0, 2.0, 3.0, 4.0};
  const std::vector<int> event{1, 0, 1, 1};
  SurvivalDataset train;
  train.time = time;
  train.event = event;
  train.features = Matrix(4, 1);
  const KaplanMeier G = censoring_km(train);
  CHECK(G(1.5) == 1.0);
  CHECK(G(2.5) == doctest::Approx(2.0 / 3.0));

  SurvivalCurveMatrix curves{TimeGrid({2.5}), Matrix::from_rows({{0.2}, {0.5}, {0.6}, {0.9}})};
  const Curve b = brier_score(curves, time, event, G);
  // Row 0 failed before t with G(1-) = 1, row 1 is censored, rows 2 and 3 survive with G(t) = 2/3.
  const double expected = (0.04 + 1.5 * (0.16 + 0.01)) / 4.0;
  REQUIRE(b.values.size() == 1);
  CHECK(b.values[0] == doctest::Approx(expected));
}

TEST_CASE("integrated brier score of constant and perfect predictors") {
  const std::vector<double> time{1.0, 2.0, 3.0};
  const std::vector<int> event{1, 1, 1};
  const KaplanMeier G = KaplanMeier::fit(time, event, true);
  const TimeGrid grid = linear_grid(0.5, 2.5, 5);
  SurvivalCurveMatrix half{grid, Matrix(3, 5, 0.5)};
  const Curve b = brier_score(half, time, event, G);
  for (double v : b.values) CHECK(v == doctest::Approx(0.25));
  CHECK(integrated_brier_score(b) == doctest::Approx(0.25));

  SurvivalCurveMatrix perfect{grid, Matrix(3, 5)};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 5; ++k) perfect.values(i, k) = grid[k] < time[i] ? 1.0 : 0.0;
  }
  CHECK(integrated_brier_score(brier_score(perfect, time, event, G)) == 0.0);
  CHECK_THROWS_AS(integrated_brier_score(Curve{{1.0}, {0.1}}), MetricError);
}

TEST_CASE("brier score truncates where the censoring survival vanishes") {
  const std::vector<double> time{1.0, 2.0};
  const std::vector<int> event{1, 0};
  const KaplanMeier G = KaplanMeier::fit(time, event, true);
  std::vector<std::string> warnings;
  ScopedWarningHandler capture([&](std::string_view m) { warnings.emplace_back(m); });
  SurvivalCurveMatrix curves{TimeGrid({0.5, 1.5, 2.5}), Matrix(2, 3, 0.5)};
  const Curve b = brier_score(curves, time, event, G);
  CHECK(b.times == std::vector<double>{0.5, 1.5});
  CHECK(warnings.size() == 1);
}

TEST_CASE("local accuracy measures the completeness residual") {
  Attribution a;
  a.grid = TimeGrid({1.0, 2.0});
  a.values = Tensor3(2, 2, 2);
  a.pred = Matrix::from_rows({{0.9, 0.5}, {0.7, 0.3}});
  a.pred_ref = Matrix::from_rows({{0.8, 0.6}, {0.8, 0.6}});
  a.pred_diff = Matrix::from_rows({{0.1, -0.1}, {-0.1, -0.3}});
  // Exact decomposition at t=1, residuals 0.1 and -0.1 at t=2.
  a.values(0, 0, 0) = 0.04;
  a.values(0, 1, 0) = 0.06;
  a.values(1, 0, 0) = -0.1;
  a.values(0, 0, 1) = -0.2;
  a.values(1, 1, 1) = -0.2;
  const Curve la = local_accuracy_t(a);
  CHECK(la.times == std::vector<double>{1.0, 2.0});
  CHECK(la.values[0] == doctest::Approx(0.0));
  CHECK(la.values[1] == doctest::Approx(std::sqrt(0.01 / 0.4)));
  Attribution no_ref;
  no_ref.values = Tensor3(1, 1, 1);
  CHECK_THROWS_AS(local_accuracy_t(no_ref), ConfigError);
}

TEST_CASE("global ranking breaks ties by feature index") {
  const Matrix imp = Matrix::from_rows({{0.5, 0.3, 0.2}, {0.1, 0.6, 0.3}, {0.4, 0.4, 0.2}});
  const RankingTable t = global_ranking(imp);
  CHECK(t.ranks[0] == std::vector<std::size_t>{1, 2, 3});
  CHECK(t.ranks[1] == std::vector<std::size_t>{3, 1, 2});
  CHECK(t.ranks[2] == std::vector<std::size_t>{1, 2, 3});
  CHECK(t.counts[0] == std::vector<std::size_t>{2, 0, 1});
  CHECK(t.modal_rank(0) == 1);
  CHECK(t.modal_rank(1) == 2);
  CHECK(t.modal_rank(2) == 3);
  const auto m = t.mean_ranks();
  CHECK(m[0] == doctest::Approx(5.0 / 3.0));
  CHECK(m[1] == doctest::Approx(5.0 / 3.0));
  // Equal counts pick the smaller rank.
  const RankingTable tie = global_ranking(Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}}));
  CHECK(tie.modal_rank(0) == 1);
  CHECK(tie.modal_rank(1) == 1);
  CHECK_THROWS_AS(global_ranking(Matrix(0, 3)), MetricError);
}

TEST_CASE("spearman correlation uses average ranks") {
  const std::vector<double> a{1.0, 2.0, 3.0, 4.0};
  CHECK(spearman(a, std::vector<double>{10.0, 20.0, 30.0, 40.0}) == doctest::Approx(1.0));
  CHECK(spearman(a, std::vector<double>{4.0, 3.0, 2.0, 1.0}) == doctest::Approx(-1.0));
  CHECK(spearman(std::vector<double>{1.0, 2.0, 2.0, 3.0}, a) == doctest::Approx(0.9486832980505139));
  CHECK_THROWS_AS(spearman(a, std::vector<double>{1.0, 1.0, 1.0, 1.0}), MetricError);
  CHECK_THROWS_AS(spearman(std::vector<double>{1.0}, std::vector<double>{1.0}), MetricError);
}

TEST_CASE("runtime measurement pins the thread budget") {
  const std::size_t before = thread_budget();
  std::size_t seen = 0;
  const RuntimeStats s = measure_runtime(
      [&] {
        seen = thread_budget();
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
      },
      3, 1);
  CHECK(seen == 1);
  CHECK(thread_budget() == before);
  CHECK(s.samples.size() == 3);
  CHECK(s.median_seconds >= 0.002);
  CHECK_THROWS_AS(measure_runtime([] {}, 0), ConfigError);
}

TEST_CASE("metric reports serialize their curves") {
  MetricReport r;
  r.model = "deepsurv";
  r.c_index = 0.75;
  r.brier = Curve{{1.0, 2.0}, {0.1, 0.2}};
  r.ibs = 0.15;
  const nlohmann::json j = to_json(r);
  CHECK(j.at("model") == "deepsurv");
  CHECK(j.at("brier").at("values").size() == 2);
  CHECK(j.at("c_index").get<double>() == 0.75);
}
