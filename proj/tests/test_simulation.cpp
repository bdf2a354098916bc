#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "survgrad/error.hpp"
#include "survgrad/parallel.hpp"
#include "survgrad/simulation.hpp"
#include "test_support.hpp"

using namespace survgrad;
using namespace survgrad::testing;

TEST_CASE("inversion recovers the time whose cumulative hazard matches") {
  SimDesign d = design_preset("time_independent");
  const std::vector<double> x{0.0, 0.0, 0.0};
  // H(1|0) = lambda = 0.1.
  CHECK(invert_event_time(std::exp(-0.1), d, x) == doctest::Approx(1.0));
  const std::vector<double> x2{0.5, -0.25, 3.0};
  for (double u : {0.01, 0.3, 0.9, 0.999}) {
    const double t = invert_event_time(u, d, x2);
    CHECK(d.oracle().cumulative_hazard(t, x2) == doctest::Approx(-std::log(u)).epsilon(1e-10));
  }
}

TEST_CASE("bisection handles a non-integrable shape") {
  SimDesign d = design_preset("time_dependent");
  // gamma + 6 x_1 <= 0 needs x_1 <= -0.25: integrated from the truncation point.
  const std::vector<double> x{-0.3, 0.0, 0.0, 0.0};
  const double t = invert_event_time(0.5, d, x);
  CHECK(d.oracle().cumulative_hazard(t, x) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  // Survival that never falls below u cannot be inverted inside the bracket.
  const std::vector<double> x_far{-0.3, -20.0, 0.0, 0.0};
  CHECK_THROWS_AS(invert_event_time(0.01, d, x_far), SimulationError);
}

TEST_CASE("simulated event times follow the oracle survival") {
  for (const char* preset : {"time_independent", "time_dependent"}) {
    SimDesign d = design_preset(preset);
    d.censor_time = 1e3;
    d.seed = 17;
    const SurvivalDataset data = simulate(d);
    const CoxWeibullOracle o = d.oracle();
    // S(T|x) is uniform when T ~ S(.|x).
    std::vector<double> u(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      u[i] = std::exp(-o.cumulative_hazard(data.time[i], data.features.row(i)));
    }
    std::sort(u.begin(), u.end());
    double ks = 0.0;
    const double n = static_cast<double>(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
      ks = std::max({ks, std::abs(u[i] - static_cast<double>(i) / n), std::abs(u[i] - static_cast<double>(i + 1) / n)});
    }
    CHECK(ks <= 0.02);
  }
}

TEST_CASE("administrative censoring at the follow-up limit") {
  const SurvivalDataset data = simulate(design_preset("time_independent"));
  REQUIRE(data.size() == 10000);
  std::size_t censored = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(data.time[i] <= 7.0);
    if (data.event[i] == 0) {
      CHECK(data.time[i] == 7.0);
      ++censored;
    }
  }
  CHECK(censored > 0);
  CHECK(censored < data.size() / 2);
}

TEST_CASE("feature laws of the presets") {
  const SurvivalDataset data = simulate(design_preset("time_dependent"));
  double mn0 = 1.0, mx0 = 0.0, mn3 = 1.0, mx3 = -1.0, mean1 = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    mn0 = std::min(mn0, data.features(i, 0));
    mx0 = std::max(mx0, data.features(i, 0));
    mn3 = std::min(mn3, data.features(i, 3));
    mx3 = std::max(mx3, data.features(i, 3));
    mean1 += data.features(i, 1);
  }
  CHECK(mn0 > 0.0);
  CHECK(mx0 < 1.0);
  CHECK(mn3 < -0.99);
  CHECK(mx3 > 0.99);
  CHECK(std::abs(mean1 / static_cast<double>(data.size())) < 0.05);
}

TEST_CASE("preset coefficients") {
  const SimDesign lin = design_preset("linear_p5");
  CHECK(lin.beta == std::vector<double>{0.0, 0.25, -0.5, 0.75, -1.0});
  CHECK(lin.censor_time == 10.0);
  const SimDesign rank = design_preset("ranking_p5");
  CHECK(rank.beta == std::vector<double>{-1.0, 0.75, -0.5, 0.25, 0.0});
  CHECK(rank.n == 2300);
  CHECK(rank.test_n == 300);
  CHECK(design_preset("linear_p20").num_features() == 20);
  CHECK_THROWS_AS(design_preset("no_such_design"), ConfigError);
  CHECK_THROWS_AS(design_preset("linear_p"), ConfigError);
}

TEST_CASE("simulation is deterministic and independent of the thread budget") {
  SimDesign d = design_preset("time_dependent");
  d.n = 2000;
  const SurvivalDataset a = simulate(d);
  SurvivalDataset b;
  {
    ScopedThreadBudget one(1);
    b = simulate(d);
  }
  CHECK(a.time == b.time);
  CHECK(a.features.storage() == b.features.storage());
  d.seed = 2;
  CHECK(simulate(d).time != a.time);
}

TEST_CASE("design validation") {
  SimDesign d = design_preset("time_independent");
  d.lambda = 0.0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d = design_preset("time_independent");
  d.feature_laws.pop_back();
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d = design_preset("time_independent");
  d.censor_time = -1.0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("train/test split is a seeded partition") {
  SimDesign d = design_preset("time_independent");
  d.n = 1000;
  const SurvivalDataset data = simulate(d);
  auto [train, test] = train_test_split(data, 100, 3);
  CHECK(train.size() == 900);
  CHECK(test.size() == 100);
  auto [train2, test2] = train_test_split(data, 100, 3);
  CHECK(test.time == test2.time);
  CHECK_THROWS_AS(train_test_split(data, 1000, 3), ConfigError);
}

TEST_CASE("dataset CSV and design JSON round trip") {
  TempDir dir("sim");
  SimDesign d = design_preset("time_dependent");
  d.n = 50;
  d.test_n = 10;
  const SurvivalDataset data = simulate(d);
  write_dataset_csv(data, dir.path() / "d.csv");
  const SurvivalDataset back = read_dataset_csv(dir.path() / "d.csv");
  CHECK(back.time == data.time);
  CHECK(back.event == data.event);
  CHECK(back.features.storage() == data.features.storage());
  CHECK(back.feature_names == std::vector<std::string>{"x1", "x2", "x3", "x4"});

  const SimDesign again = sim_design_from_json(to_json(d));
  CHECK(to_json(again) == to_json(d));
  CHECK(simulate(again).time == data.time);
}

TEST_CASE("malformed dataset files are reported with context") {
  TempDir dir("badcsv");
  const auto path = dir.path() / "bad.csv";
  {
    std::ofstream out(path);
    out << "time,event,x1\n1.0,1,0.5\n2.0,3,0.1\n";
  }
  CHECK_THROWS_AS(read_dataset_csv(path), IoError);
  {
    std::ofstream out(path);
    out << "time,event,x1\n1.0,1\n";
  }
  CHECK_THROWS_AS(read_dataset_csv(path), IoError);
  CHECK_THROWS_AS(read_dataset_csv(dir.path() / "absent.csv"), IoError);
}

TEST_CASE("kaplan-meier and nelson-aalen on a toy sample") {
  const std::vector<double> time{1.0, 2.0, 2.0, 3.0, 4.0};
  const std::vector<int> event{1, 1, 0, 1, 0};
  const auto km = KaplanMeier::fit(time, event);
  CHECK(km(0.5) == 1.0);
  CHECK(km(1.0) == doctest::Approx(0.8));
  CHECK(km(2.0) == doctest::Approx(0.8 * 0.75));
  CHECK(km(3.5) == doctest::Approx(0.8 * 0.75 * 0.5));
  CHECK(km.left_limit(2.0) == doctest::Approx(0.8));
  CHECK(km.median() == 3.0);
  const auto na = NelsonAalen::fit(time, event);
  CHECK(na(3.0) == doctest::Approx(0.2 + 0.25 + 0.5));
  const auto censoring = KaplanMeier::fit(time, event, true);
  CHECK(censoring(2.0) == doctest::Approx(1.0 - 1.0 / 4.0));
}
