#include "survgrad/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "survgrad/parallel.hpp"
#include "survgrad/rng.hpp"

namespace survgrad {

namespace {

constexpr double kBracketLow = 1e-8;
constexpr double kBracketHigh = 1e4;
constexpr double kBisectionTol = 1e-10;
constexpr int kBisectionIters = 200;
constexpr std::uint64_t kSplitStream = 0x5eed5;

double draw(FeatureLaw law, Rng& rng) {
  switch (law) {
    case FeatureLaw::standard_normal:
      return std::normal_distribution<double>(0.0, 1.0)(rng);
    case FeatureLaw::uniform01:
      return uniform_open(rng);
    case FeatureLaw::uniform_sym:
      return 2.0 * uniform_open(rng) - 1.0;
  }
  return 0.0;
}

double bisect(double target, const CoxWeibullOracle& oracle, std::span<const double> x) {
  double lo = std::log(kBracketLow), hi = std::log(kBracketHigh);
  const double h_lo = oracle.cumulative_hazard(kBracketLow, x);
  const double h_hi = oracle.cumulative_hazard(kBracketHigh, x);
  if (!(h_lo <= target && target <= h_hi)) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "event time not bracketed: target H=%.6g, H(%.0e)=%.6g, H(%.0e)=%.6g, shape=%.6g",
                  target, kBracketLow, h_lo, kBracketHigh, h_hi, oracle.shape(x));
    throw SimulationError(buf);
  }
  const double tol = kBisectionTol * std::max(1.0, target);
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < kBisectionIters; ++it) {
    mid = 0.5 * (lo + hi);
    const double h = oracle.cumulative_hazard(std::exp(mid), x);
    if (std::abs(h - target) <= tol) return std::exp(mid);
    if (h < target) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (!(lo < mid && mid < hi) && lo == hi) break;
  }
  const double h = oracle.cumulative_hazard(std::exp(mid), x);
  if (std::abs(h - target) <= tol || std::nextafter(lo, hi) >= hi) return std::exp(mid);
  char buf[160];
  std::snprintf(buf, sizeof buf, "bisection did not converge: target H=%.6g, reached %.6g", target, h);
  throw SimulationError(buf);
}

}  // namespace

std::string_view to_string(FeatureLaw law) {
  switch (law) {
    case FeatureLaw::standard_normal:
      return "normal";
    case FeatureLaw::uniform01:
      return "uniform01";
    case FeatureLaw::uniform_sym:
      return "uniform_sym";
  }
  return "normal";
}

FeatureLaw parse_feature_law(std::string_view name) {
  if (name == "normal") return FeatureLaw::standard_normal;
  if (name == "uniform01") return FeatureLaw::uniform01;
  if (name == "uniform_sym") return FeatureLaw::uniform_sym;
  throw ConfigError("unknown feature law '" + std::string(name) +
                    "' (expected normal, uniform01 or uniform_sym)");
}

void SimDesign::validate() const {
  if (n == 0) throw ConfigError("design n must be positive");
  if (beta.empty()) throw ConfigError("design needs at least one feature");
  if (!(lambda > 0.0) || !(gamma > 0.0)) throw ConfigError("design lambda and gamma must be positive");
  if (!(censor_time > 0.0) || !std::isfinite(censor_time)) throw ConfigError("censor_time must be positive");
  if (feature_laws.size() != beta.size()) throw ConfigError("feature_laws must match beta in length");
  if (test_n >= n) throw ConfigError("design test_n must be smaller than n");
  oracle().validate();
}

CoxWeibullOracle SimDesign::oracle() const {
  CoxWeibullOracle o;
  o.lambda = lambda;
  o.gamma = gamma;
  o.beta = beta;
  o.tve_coeff = tve_coeff;
  o.tve_feature = 0;
  return o;
}

double invert_event_time(double u, const SimDesign& design, std::span<const double> x) {
  if (!(u > 0.0 && u < 1.0)) throw ConfigError("invert_event_time: u must lie in (0, 1)");
  const CoxWeibullOracle oracle = design.oracle();
  const double target = -std::log(u);
  const double eta = oracle.linear_predictor(x);
  const double a = oracle.shape(x);
  if (a > 0.0) {
    // H(t) = lambda * gamma / a * exp(eta) * t^a
    const double t = std::pow(target * a / (design.lambda * design.gamma * std::exp(eta)), 1.0 / a);
    if (std::isfinite(t) && t > 0.0) return t;
  }
  return bisect(target, oracle, x);
}

SurvivalDataset simulate(const SimDesign& design) {
  design.validate();
  const std::size_t n = design.n, p = design.num_features();
  SurvivalDataset data;
  data.features = Matrix(n, p);
  data.time.resize(n);
  data.event.resize(n);
  data.feature_names = default_feature_names(p);
  parallel_for(n, [&](std::size_t i) {
    Rng rng = make_rng(design.seed, i);
    auto x = data.features.row(i);
    for (std::size_t j = 0; j < p; ++j) x[j] = draw(design.feature_laws[j], rng);
    const double t = invert_event_time(uniform_open(rng), design, x);
    if (t >= design.censor_time) {
      data.time[i] = design.censor_time;
      data.event[i] = 0;
    } else {
      data.time[i] = t;
      data.event[i] = 1;
    }
  });
  return data;
}

SimDesign linear_p_design(std::size_t p) {
  if (p < 2) throw ConfigError("linear_p design needs p >= 2");
  SimDesign d;
  d.name = "linear_p" + std::to_string(p);
  d.n = 1100;
  d.test_n = 100;
  d.censor_time = 10.0;
  for (std::size_t j = 1; j <= p; ++j) {
    const double sign = j % 2 == 0 ? 1.0 : -1.0;
    d.beta.push_back(sign * static_cast<double>(j - 1) / static_cast<double>(p - 1));
  }
  d.feature_laws.assign(p, FeatureLaw::standard_normal);
  return d;
}

SimDesign design_preset(std::string_view name) {
  SimDesign d;
  if (name == "time_independent") {
    d.name = "time_independent";
    d.n = 10000;
    d.test_n = 500;
    d.beta = {1.7, -2.4, 0.0};
    d.feature_laws.assign(3, FeatureLaw::standard_normal);
    return d;
  }
  if (name == "time_dependent") {
    d.name = "time_dependent";
    d.n = 10000;
    d.test_n = 500;
    d.gamma = 1.5;
    d.beta = {-3.0, 1.7, -2.4, 0.0};
    d.tve_coeff = 6.0;
    d.feature_laws = {FeatureLaw::uniform01, FeatureLaw::standard_normal,
                      FeatureLaw::standard_normal, FeatureLaw::uniform_sym};
    return d;
  }
  if (name == "ranking_p5") {
    // Same magnitudes as linear_p5, ordered so that x1 is the strongest.
    d = linear_p_design(5);
    std::reverse(d.beta.begin(), d.beta.end());
    for (std::size_t j = 0; j < d.beta.size(); ++j) {
      d.beta[j] = (j % 2 == 0 ? -1.0 : 1.0) * std::abs(d.beta[j]);
    }
    d.name = "ranking_p5";
    d.n = 2300;
    d.test_n = 300;
    return d;
  }
  if (name.starts_with("linear_p")) {
    const std::string digits(name.substr(8));
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit)) {
      return linear_p_design(std::stoul(digits));
    }
  }
  throw ConfigError("unknown design preset '" + std::string(name) +
                    "' (expected time_independent, time_dependent, ranking_p5 or linear_p<p>)");
}

std::vector<std::string> design_preset_names() {
  return {"time_independent", "time_dependent", "linear_p20", "ranking_p5"};
}

std::pair<SurvivalDataset, SurvivalDataset> train_test_split(const SurvivalDataset& data,
                                                             std::size_t test_n,
                                                             std::uint64_t seed) {
  if (test_n >= data.size()) {
    throw ConfigError("test_n (" + std::to_string(test_n) + ") must be smaller than n (" +
                      std::to_string(data.size()) + ")");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, kSplitStream);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_n));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(test_n), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

nlohmann::json to_json(const SimDesign& d) {
  std::vector<std::string> laws;
  for (auto l : d.feature_laws) laws.emplace_back(to_string(l));
  return {{"format", "survgrad.design"},
          {"version", 1},
          {"name", d.name},
          {"n", d.n},
          {"test_n", d.test_n},
          {"lambda", d.lambda},
          {"gamma", d.gamma},
          {"beta", d.beta},
          {"tve_coeff", d.tve_coeff},
          {"censor_time", d.censor_time},
          {"feature_laws", laws},
          {"seed", d.seed}};
}

SimDesign sim_design_from_json(const nlohmann::json& doc) {
  SimDesign d;
  try {
    d.name = doc.value("name", std::string("custom"));
    d.n = doc.at("n").get<std::size_t>();
    d.test_n = doc.value("test_n", std::size_t{0});
    d.lambda = doc.at("lambda").get<double>();
    d.gamma = doc.at("gamma").get<double>();
    d.beta = doc.at("beta").get<std::vector<double>>();
    d.tve_coeff = doc.value("tve_coeff", 0.0);
    d.censor_time = doc.at("censor_time").get<double>();
    d.seed = doc.value("seed", std::uint64_t{1});
    if (doc.contains("feature_laws")) {
      for (const auto& l : doc.at("feature_laws")) d.feature_laws.push_back(parse_feature_law(l.get<std::string>()));
    } else {
      d.feature_laws.assign(d.beta.size(), FeatureLaw::standard_normal);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed design: ") + e.what());
  }
  d.validate();
  return d;
}

void write_design_json(const SimDesign& design, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_json(design).dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace survgrad
