#include "survgrad/baselines.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "survgrad/log.hpp"
#include "survgrad/parallel.hpp"
#include "survgrad/rng.hpp"

namespace survgrad {

namespace {

constexpr std::size_t kCoalitionChunkRows = 8192;
constexpr double kLogFloor = 1e-12;
constexpr double kRidge = 1e-6;

void check_background(const SurvivalModel& model, const Matrix& X, const Matrix& background) {
  if (X.cols() != model.num_features()) throw ShapeError("input has the wrong feature count");
  if (background.rows() == 0) throw ConfigError("Shapley background must be nonempty");
  if (background.cols() != X.cols()) throw ShapeError("background has the wrong feature count");
}

Attribution shapley_shell(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                          const Matrix& background, std::string method, const std::vector<double>& ref) {
  Attribution a;
  a.method = std::move(method);
  a.grid = grid;
  a.values = Tensor3(X.rows(), X.cols(), grid.size());
  a.pred = model.survival(X, grid);
  a.feature_names = default_feature_names(X.cols());
  if (const auto* fm = dynamic_cast<const FittedModel*>(&model)) {
    if (fm->feature_names.size() == X.cols()) a.feature_names = fm->feature_names;
  }
  a.instance_ids.resize(X.rows());
  std::iota(a.instance_ids.begin(), a.instance_ids.end(), 0);
  a.reference.kind = ReferenceKind::background;
  a.reference.background_rows = background.rows();
  a.pred_ref = Matrix(X.rows(), grid.size());
  a.pred_diff = Matrix(X.rows(), grid.size());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t k = 0; k < grid.size(); ++k) {
      a.pred_ref(i, k) = ref[k];
      a.pred_diff(i, k) = a.pred(i, k) - ref[k];
    }
  }
  return a;
}

std::vector<double> mean_curve(const SurvivalModel& model, const Matrix& background, const TimeGrid& grid) {
  const Matrix S = model.survival(background, grid);
  std::vector<double> m(grid.size(), 0.0);
  for (std::size_t i = 0; i < S.rows(); ++i) {
    for (std::size_t k = 0; k < S.cols(); ++k) m[k] += S(i, k);
  }
  for (double& v : m) v /= static_cast<double>(S.rows());
  return m;
}

// Coalition values v(mask) for the given masks: rows k of the result hold the
// mean background-marginalized curve for masks[k].
Matrix coalition_values(const SurvivalModel& model, std::span<const double> x, const Matrix& background,
                        const TimeGrid& grid, std::span<const std::uint64_t> masks) {
  const std::size_t B = background.rows(), p = x.size(), T = grid.size();
  Matrix out(masks.size(), T);
  const std::size_t per_chunk = std::max<std::size_t>(1, kCoalitionChunkRows / B);
  for (std::size_t c0 = 0; c0 < masks.size(); c0 += per_chunk) {
    const std::size_t c1 = std::min(masks.size(), c0 + per_chunk);
    Matrix rows((c1 - c0) * B, p);
    for (std::size_t c = c0; c < c1; ++c) {
      for (std::size_t b = 0; b < B; ++b) {
        auto r = rows.row((c - c0) * B + b);
        auto bg = background.row(b);
        for (std::size_t j = 0; j < p; ++j) r[j] = (masks[c] >> j & 1U) ? x[j] : bg[j];
      }
    }
    const Matrix S = model.survival(rows, grid);
    for (std::size_t c = c0; c < c1; ++c) {
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t k = 0; k < T; ++k) out(c, k) += S((c - c0) * B + b, k);
      }
      for (std::size_t k = 0; k < T; ++k) out(c, k) /= static_cast<double>(B);
    }
  }
  return out;
}

// Accumulates the marginal contributions along one ordering.
void walk_permutation(std::span<const std::size_t> perm, const std::function<std::span<const double>(std::uint64_t)>& value,
                      Matrix& acc) {
  std::uint64_t mask = 0;
  std::span<const double> prev = value(mask);
  for (std::size_t j : perm) {
    mask |= std::uint64_t{1} << j;
    std::span<const double> cur = value(mask);
    for (std::size_t k = 0; k < acc.cols(); ++k) acc(j, k) += cur[k] - prev[k];
    prev = cur;
  }
}

// Cholesky solve of the symmetric system A w = b; returns false when A is not
// numerically positive definite.
bool cholesky_solve(std::vector<double> A, std::size_t n, std::vector<double>& b) {
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(A[i * n + i]));
  const double tiny = 1e-12 * std::max(scale, 1e-300);
  for (std::size_t j = 0; j < n; ++j) {
    double d = A[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= A[j * n + k] * A[j * n + k];
    if (!(d > tiny)) return false;
    d = std::sqrt(d);
    A[j * n + j] = d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = A[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= A[i * n + k] * A[j * n + k];
      A[i * n + j] = s / d;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= A[i * n + k] * b[k];
    b[i] = s / A[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= A[k * n + i] * b[k];
    b[i] = s / A[i * n + i];
  }
  return true;
}

}  // namespace

Attribution survshap_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                       const ShapleyConfig& cfg) {
  check_background(model, X, cfg.background);
  const std::size_t p = X.cols(), T = grid.size();
  if (!cfg.exhaustive && cfg.permutations == 0) throw ConfigError("survshap needs at least one permutation");
  if (cfg.exhaustive && p > kMaxExhaustivePermutationFeatures) {
    throw ConfigError("exhaustive permutation enumeration supports at most " +
                      std::to_string(kMaxExhaustivePermutationFeatures) + " features");
  }
  if (p >= 64) throw ConfigError("survshap supports fewer than 64 features");
  const std::vector<double> ref = mean_curve(model, cfg.background, grid);
  Attribution a = shapley_shell(model, X, grid, cfg.background, "survshap", ref);
  a.params = {{"permutations", cfg.permutations}, {"seed", cfg.seed}, {"exhaustive", cfg.exhaustive}};
  a.reference.seed = cfg.seed;
  const std::uint64_t full = (std::uint64_t{1} << p) - 1;

  parallel_for(X.rows(), [&](std::size_t i) {
    auto x = X.row(i);
    Matrix acc(p, T);
    if (cfg.exhaustive) {
      std::vector<std::uint64_t> masks(std::size_t{1} << p);
      std::iota(masks.begin(), masks.end(), 0);
      const Matrix v = coalition_values(model, x, cfg.background, grid, masks);
      std::vector<std::size_t> perm(p);
      std::iota(perm.begin(), perm.end(), 0);
      std::size_t count = 0;
      do {
        walk_permutation(perm, [&](std::uint64_t m) { return v.row(m); }, acc);
        ++count;
      } while (std::next_permutation(perm.begin(), perm.end()));
      for (double& val : acc.values()) val /= static_cast<double>(count);
    } else {
      Rng rng = make_rng(cfg.seed, i);
      std::vector<std::size_t> perm(p);
      std::iota(perm.begin(), perm.end(), 0);
      std::vector<std::vector<std::size_t>> perms(cfg.permutations);
      std::vector<std::uint64_t> masks;  // intermediate coalitions, p-1 per permutation
      for (auto& pr : perms) {
        std::shuffle(perm.begin(), perm.end(), rng);
        pr = perm;
        std::uint64_t m = 0;
        for (std::size_t s = 0; s + 1 < p; ++s) {
          m |= std::uint64_t{1} << pr[s];
          masks.push_back(m);
        }
      }
      const Matrix v = coalition_values(model, x, cfg.background, grid, masks);
      const std::span<const double> pred = a.pred.row(i);
      for (std::size_t q = 0; q < perms.size(); ++q) {
        walk_permutation(perms[q],
                         [&](std::uint64_t m) -> std::span<const double> {
                           if (m == 0) return ref;
                           if (m == full) return pred;
                           const std::size_t size = static_cast<std::size_t>(std::popcount(m));
                           return v.row(q * (p - 1) + size - 1);
                         },
                         acc);
      }
      for (double& val : acc.values()) val /= static_cast<double>(perms.size());
    }
    a.values.set_slab(i, acc);
  });
  return a;
}

Attribution brute_force_shapley(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                                const Matrix& background) {
  check_background(model, X, background);
  const std::size_t p = X.cols(), T = grid.size();
  if (p > kMaxBruteForceFeatures) {
    throw ConfigError("brute-force Shapley supports at most " + std::to_string(kMaxBruteForceFeatures) +
                      " features, got " + std::to_string(p));
  }
  const std::vector<double> ref = mean_curve(model, background, grid);
  Attribution a = shapley_shell(model, X, grid, background, "brute_force_shapley", ref);
  // w(s) = s! (p - s - 1)! / p!
  std::vector<double> weight(p);
  for (std::size_t s = 0; s < p; ++s) {
    weight[s] = std::exp(std::lgamma(static_cast<double>(s) + 1.0) +
                         std::lgamma(static_cast<double>(p - s)) - std::lgamma(static_cast<double>(p) + 1.0));
  }
  std::vector<std::uint64_t> masks(std::size_t{1} << p);
  std::iota(masks.begin(), masks.end(), 0);
  parallel_for(X.rows(), [&](std::size_t i) {
    const Matrix v = coalition_values(model, X.row(i), background, grid, masks);
    Matrix acc(p, T);
    for (std::uint64_t m = 0; m < masks.size(); ++m) {
      const auto size = static_cast<std::size_t>(std::popcount(m));
      for (std::size_t j = 0; j < p; ++j) {
        if (m >> j & 1U) continue;
        const std::uint64_t with = m | (std::uint64_t{1} << j);
        for (std::size_t k = 0; k < T; ++k) acc(j, k) += weight[size] * (v(with, k) - v(m, k));
      }
    }
    a.values.set_slab(i, acc);
  });
  return a;
}

SurvLimeReference SurvLimeReference::from_training(const SurvivalDataset& train) {
  train.validate();
  if (train.size() < 2) throw ConfigError("SurvLIME reference needs at least two training rows");
  SurvLimeReference ref;
  const std::size_t n = train.size(), p = train.num_features();
  ref.feature_sd.assign(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += train.features(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (train.features(i, j) - mean) * (train.features(i, j) - mean);
    ref.feature_sd[j] = std::sqrt(var / static_cast<double>(n - 1));
  }
  ref.baseline = NelsonAalen::fit(train.time, train.event);
  return ref;
}

std::vector<double> survlime(const SurvivalModel& model, std::span<const double> x, const TimeGrid& grid,
                             const SurvLimeConfig& cfg, const SurvLimeReference& ref) {
  const Matrix w = survlime(model, Matrix::row_vector(x), grid, cfg, ref);
  return std::vector<double>(w.row(0).begin(), w.row(0).end());
}

Matrix survlime(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid, const SurvLimeConfig& cfg,
                const SurvLimeReference& ref) {
  const std::size_t p = model.num_features(), T = grid.size();
  if (X.cols() != p) throw ShapeError("survlime input has the wrong feature count");
  if (ref.feature_sd.size() != p) throw ShapeError("survlime reference has the wrong feature count");
  if (cfg.neighbors == 0 || !(cfg.perturbation_scale > 0.0) || cfg.kernel_width < 0.0) {
    throw ConfigError("survlime neighbours, perturbation scale and kernel width must be positive");
  }
  const double width = cfg.kernel_width > 0.0 ? cfg.kernel_width : 0.75 * std::sqrt(static_cast<double>(p));
  std::vector<double> log_h0(T);
  for (std::size_t k = 0; k < T; ++k) log_h0[k] = std::log(std::max(ref.baseline(grid[k]), kLogFloor));
  std::vector<double> sd(p);
  for (std::size_t j = 0; j < p; ++j) sd[j] = ref.feature_sd[j] > 0.0 ? ref.feature_sd[j] : 1.0;

  Matrix out(X.rows(), p);
  parallel_for(X.rows(), [&](std::size_t i) {
    Rng rng = make_rng(cfg.seed, i);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto x = X.row(i);
    const std::size_t N = cfg.neighbors;
    Matrix Z(N, p);
    std::vector<double> kw(N);
    for (std::size_t r = 0; r < N; ++r) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        const double e = normal(rng) * cfg.perturbation_scale;
        Z(r, j) = x[j] + e * sd[j];
        d2 += e * e;
      }
      kw[r] = std::exp(-d2 / (width * width));
    }
    const Matrix S = model.survival(Z, grid);
    // Normal equations over (neighbour, time) pairs with design [1, z].
    const std::size_t q = p + 1;
    std::vector<double> A(q * q, 0.0), b(q, 0.0), design(q);
    for (std::size_t r = 0; r < N; ++r) {
      design[0] = 1.0;
      for (std::size_t j = 0; j < p; ++j) design[j + 1] = Z(r, j);
      double ysum = 0.0;
      for (std::size_t k = 0; k < T; ++k) {
        const double h = -std::log(std::clamp(S(r, k), 1e-300, 1.0));
        ysum += std::log(std::max(h, kLogFloor)) - log_h0[k];
      }
      const double wt = kw[r] * static_cast<double>(T);
      for (std::size_t u = 0; u < q; ++u) {
        b[u] += kw[r] * design[u] * ysum;
        for (std::size_t v = 0; v < q; ++v) A[u * q + v] += wt * design[u] * design[v];
      }
    }
    std::vector<double> sol = b;
    if (!cholesky_solve(A, q, sol)) {
      warn("survlime: singular least-squares system, applying ridge 1e-6");
      for (std::size_t u = 0; u < q; ++u) A[u * q + u] += kRidge;
      sol = b;
      if (!cholesky_solve(A, q, sol)) throw Error("survlime: regularized system is still singular");
    }
    for (std::size_t j = 0; j < p; ++j) out(i, j) = sol[j + 1];
  });
  return out;
}

nlohmann::json survlime_to_json(std::span<const double> weights, const std::vector<std::string>& feature_names) {
  if (weights.size() != feature_names.size()) throw ShapeError("survlime weights/names length mismatch");
  nlohmann::json doc = nlohmann::json::object();
  for (std::size_t j = 0; j < weights.size(); ++j) doc[feature_names[j]] = weights[j];
  return doc;
}

}  // namespace survgrad
