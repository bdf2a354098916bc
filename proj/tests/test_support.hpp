#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>

#include "survgrad/matrix.hpp"
#include "survgrad/rng.hpp"
#include "survgrad/simulation.hpp"
#include "survgrad/survival_models.hpp"

namespace survgrad::testing {

// Central differences of S(t_k | x) in every input coordinate, n x p x T.
inline Tensor3 finite_difference_gradient(const SurvivalModel& model, const Matrix& X,
                                          const TimeGrid& grid, double h = 1e-5) {
  const std::size_t n = X.rows(), p = X.cols(), T = grid.size();
  Tensor3 out(n, p, T);
  for (std::size_t j = 0; j < p; ++j) {
    Matrix up = X, down = X;
    for (std::size_t i = 0; i < n; ++i) {
      up(i, j) += h;
      down(i, j) -= h;
    }
    const Matrix su = model.survival(up, grid), sd = model.survival(down, grid);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < T; ++k) out(i, j, k) = (su(i, k) - sd(i, k)) / (2 * h);
    }
  }
  return out;
}

inline double max_abs_difference(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, sd);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = z(rng);
  return m;
}

inline TimeGrid linear_grid(double lo, double hi, std::size_t size) {
  std::vector<double> pts(size);
  for (std::size_t k = 0; k < size; ++k) {
    pts[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(size - 1);
  }
  return TimeGrid(pts);
}

inline CoxWeibullOracle three_feature_oracle() {
  CoxWeibullOracle o;
  o.lambda = 0.1;
  o.gamma = 2.5;
  o.beta = {1.7, -2.4, 0.0};
  return o;
}

// Small simulated dataset for fast training tests.
inline SurvivalDataset small_dataset(std::size_t n, std::uint64_t seed, bool time_dependent = false) {
  SimDesign d = design_preset(time_dependent ? "time_dependent" : "time_independent");
  d.n = n;
  d.seed = seed;
  d.test_n = n / 5;
  return simulate(d);
}

inline TrainConfig quick_train_config(std::size_t epochs = 5) {
  TrainConfig cfg;
  cfg.hidden = {8, 8};
  cfg.max_epochs = epochs;
  cfg.batch_size = 128;
  cfg.coxtime_knots = 32;
  cfg.deephit_bins = 12;
  return cfg;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("survgrad_test_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace survgrad::testing
