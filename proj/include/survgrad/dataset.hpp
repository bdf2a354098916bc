#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "survgrad/matrix.hpp"

namespace survgrad {

// Right-censored observations (x_i, y_i, delta_i).
struct SurvivalDataset {
  Matrix features;                      // n x p
  std::vector<double> time;             // observed time y_i >= 0
  std::vector<int> event;               // 1 = event, 0 = censored
  std::vector<std::string> feature_names;

  std::size_t size() const { return time.size(); }
  std::size_t num_features() const { return features.cols(); }
  std::size_t num_events() const;

  // Throws ShapeError/ConfigError when the invariants do not hold.
  void validate() const;

  SurvivalDataset subset(std::span<const std::size_t> indices) const;
};

std::vector<std::string> default_feature_names(std::size_t p);

// Strictly increasing, nonempty evaluation times.
class TimeGrid {
 public:
  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> points);

  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t k) const { return points_[k]; }
  double front() const { return points_.front(); }
  double back() const { return points_.back(); }
  std::span<const double> points() const { return points_; }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  std::vector<double> points_;
};

// S(t_k | x_i) for the rows of a feature matrix.
struct SurvivalCurveMatrix {
  TimeGrid grid;
  Matrix values;  // n x T
};

// Clamps into [0,1] and enforces a non-increasing running minimum per row.
Matrix monotonize_survival(const Matrix& curves);

// CSV with header "time,event,<feature names...>".
void write_dataset_csv(const SurvivalDataset& data, const std::filesystem::path& path);
SurvivalDataset read_dataset_csv(const std::filesystem::path& path);
std::string dataset_to_csv(const SurvivalDataset& data);

// Right-continuous step function helper: value at t of a step function with
// jumps at `knots` (sorted) and cumulative values `levels` (levels[i] holds
// from knots[i] on); `initial` before the first knot.
double step_value(std::span<const double> knots, std::span<const double> levels, double t,
                  double initial);

// Kaplan-Meier estimate. `censoring` flips the roles of events and
// censorings (estimate of the censoring survival G).
struct KaplanMeier {
  std::vector<double> times;     // distinct jump times
  std::vector<double> survival;  // S just after each jump

  static KaplanMeier fit(std::span<const double> time, std::span<const int> event,
                         bool censoring = false);
  double operator()(double t) const;      // S(t), right-continuous
  double left_limit(double t) const;      // S(t-)
  // Smallest t with S(t) <= 0.5, or +inf when the curve never drops that far.
  double median() const;
};

// Nelson-Aalen cumulative hazard.
struct NelsonAalen {
  std::vector<double> times;
  std::vector<double> cumulative_hazard;

  static NelsonAalen fit(std::span<const double> time, std::span<const int> event);
  double operator()(double t) const;
};

}  // namespace survgrad
