#include "survgrad/survival_models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <type_traits>

namespace survgrad {

namespace {

constexpr int kModelFormatVersion = 1;
// Upper bound on rows per batched network call when inputs are replicated
// over knots or output bins.
constexpr std::size_t kChunkRows = 16384;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_features(const Matrix& X, std::size_t p) {
  if (X.cols() != p) {
    throw ShapeError("feature matrix has " + std::to_string(X.cols()) + " columns, model expects " +
                     std::to_string(p));
  }
}

// Number of knots <= t.
std::size_t knots_at_or_before(std::span<const double> knots, double t) {
  return static_cast<std::size_t>(std::upper_bound(knots.begin(), knots.end(), t) - knots.begin());
}

std::size_t rows_per_chunk(std::size_t replicas) {
  return std::max<std::size_t>(1, kChunkRows / std::max<std::size_t>(1, replicas));
}

// ---- DeepSurv ----

Matrix deepsurv_survival(const DeepSurvModel& m, const Matrix& X, const TimeGrid& grid) {
  const Matrix g = predict(m.net, X);
  std::vector<double> h0(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) h0[k] = m.baseline.cumulative_at(grid[k]);
  Matrix S(X.rows(), grid.size());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    const double risk = std::exp(g(i, 0));
    for (std::size_t k = 0; k < grid.size(); ++k) S(i, k) = std::exp(-h0[k] * risk);
  }
  return S;
}

// dS/dx_j = -H0(t) e^g S dg/dx_j: a single backward pass per row.
Tensor3 deepsurv_gradient(const DeepSurvModel& m, const Matrix& X, const TimeGrid& grid) {
  const std::size_t n = X.rows(), p = X.cols(), T = grid.size();
  auto fwd = forward(m.net, X);
  const Matrix dg = backward_inputs(m.net, fwd.tape, Matrix(n, 1, 1.0));
  std::vector<double> h0(T);
  for (std::size_t k = 0; k < T; ++k) h0[k] = m.baseline.cumulative_at(grid[k]);
  Tensor3 out(n, p, T);
  std::vector<double> factor(T);
  for (std::size_t i = 0; i < n; ++i) {
    const double risk = std::exp(fwd.output(i, 0));
    for (std::size_t k = 0; k < T; ++k) {
      const double H = h0[k] * risk;
      factor[k] = -H * std::exp(-H);
    }
    for (std::size_t j = 0; j < p; ++j) {
      const double d = dg(i, j);
      for (std::size_t k = 0; k < T; ++k) out(i, j, k) = factor[k] * d;
    }
  }
  return out;
}

// ---- CoxTime ----

Matrix coxtime_inputs(const CoxTimeModel& m, const Matrix& X, std::size_t begin, std::size_t end,
                      std::span<const double> times) {
  const std::size_t p = X.cols();
  const std::size_t K = times.size();
  Matrix in((end - begin) * K, p + 1);
  for (std::size_t i = begin; i < end; ++i) {
    auto x = X.row(i);
    for (std::size_t k = 0; k < K; ++k) {
      auto r = in.row((i - begin) * K + k);
      r[0] = m.standardize_time(times[k]);
      std::copy(x.begin(), x.end(), r.begin() + 1);
    }
  }
  return in;
}

Matrix coxtime_survival(const CoxTimeModel& m, const Matrix& X, const TimeGrid& grid) {
  const std::size_t n = X.rows(), T = grid.size(), K = m.knots.size();
  Matrix S(n, T, 1.0);
  if (K == 0) return S;
  std::vector<std::size_t> upto(T);
  for (std::size_t k = 0; k < T; ++k) upto[k] = knots_at_or_before(m.knots, grid[k]);
  std::vector<double> cum(K);
  const std::size_t chunk = rows_per_chunk(K);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    const Matrix g = predict(m.net, coxtime_inputs(m, X, begin, end, m.knots));
    for (std::size_t i = begin; i < end; ++i) {
      double c = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        c += m.increments[k] * std::exp(g((i - begin) * K + k, 0));
        cum[k] = c;
      }
      for (std::size_t k = 0; k < T; ++k) S(i, k) = upto[k] == 0 ? 1.0 : std::exp(-cum[upto[k] - 1]);
    }
  }
  return S;
}

// dH(t)/dx_j = sum_{knots <= t} dh0_k exp(g(tau_k, x)) dg(tau_k, x)/dx_j.
Tensor3 coxtime_gradient(const CoxTimeModel& m, const Matrix& X, const TimeGrid& grid) {
  const std::size_t n = X.rows(), p = X.cols(), T = grid.size(), K = m.knots.size();
  Tensor3 out(n, p, T);
  if (K == 0) return out;
  std::vector<std::size_t> upto(T);
  for (std::size_t k = 0; k < T; ++k) upto[k] = knots_at_or_before(m.knots, grid[k]);
  Matrix cum_h(K, p);  // running dH/dx at each knot
  std::vector<double> cum(K);
  const std::size_t chunk = rows_per_chunk(K);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    auto fwd = forward(m.net, coxtime_inputs(m, X, begin, end, m.knots));
    const Matrix dg = backward_inputs(m.net, fwd.tape, Matrix(fwd.output.rows(), 1, 1.0));
    for (std::size_t i = begin; i < end; ++i) {
      double c = 0.0;
      std::vector<double> running(p, 0.0);
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t r = (i - begin) * K + k;
        const double w = m.increments[k] * std::exp(fwd.output(r, 0));
        c += w;
        cum[k] = c;
        for (std::size_t j = 0; j < p; ++j) {
          running[j] += w * dg(r, j + 1);
          cum_h(k, j) = running[j];
        }
      }
      for (std::size_t t = 0; t < T; ++t) {
        if (upto[t] == 0) continue;
        const std::size_t kk = upto[t] - 1;
        const double S = std::exp(-cum[kk]);
        for (std::size_t j = 0; j < p; ++j) out(i, j, t) = -S * cum_h(kk, j);
      }
    }
  }
  return out;
}

// ---- DeepHit ----

void softmax_rows(Matrix& logits) {
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double& v : z) {
      v = std::exp(v - m);
      s += v;
    }
    for (double& v : z) v /= s;
  }
}

Matrix deephit_survival(const DeepHitModel& m, const Matrix& X, const TimeGrid& grid) {
  Matrix pmf = predict(m.net, X);
  softmax_rows(pmf);
  const std::size_t n = X.rows(), T = grid.size(), K = m.bins();
  std::vector<std::size_t> upto(T);
  for (std::size_t k = 0; k < T; ++k) upto[k] = knots_at_or_before(m.bin_edges, grid[k]);
  Matrix S(n, T);
  std::vector<double> cdf(K);
  for (std::size_t i = 0; i < n; ++i) {
    double c = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      c += pmf(i, k);
      cdf[k] = c;
    }
    for (std::size_t t = 0; t < T; ++t) S(i, t) = upto[t] == 0 ? 1.0 : 1.0 - cdf[upto[t] - 1];
  }
  return S;
}

// Input Jacobian of the logits (K replicated rows per instance), pushed through
// softmax and the cumulative sum: dS_c/dz_l = -p_l ([l < c] - F_c).
Tensor3 deephit_gradient(const DeepHitModel& m, const Matrix& X, const TimeGrid& grid) {
  const std::size_t n = X.rows(), p = X.cols(), T = grid.size(), K = m.bins();
  Tensor3 out(n, p, T);
  std::vector<std::size_t> upto(T);
  for (std::size_t k = 0; k < T; ++k) upto[k] = knots_at_or_before(m.bin_edges, grid[k]);
  const std::size_t chunk = rows_per_chunk(K);
  std::vector<double> pmf(K), cdf(K);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    Matrix reps((end - begin) * K, p);
    Matrix upstream((end - begin) * K, K);
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t l = 0; l < K; ++l) {
        const std::size_t r = (i - begin) * K + l;
        auto x = X.row(i);
        std::copy(x.begin(), x.end(), reps.row(r).begin());
        upstream(r, l) = 1.0;
      }
    }
    auto fwd = forward(m.net, reps);
    const Matrix jac = backward_inputs(m.net, fwd.tape, upstream);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t base = (i - begin) * K;
      auto z = fwd.output.row(base);
      const double mz = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (std::size_t l = 0; l < K; ++l) {
        pmf[l] = std::exp(z[l] - mz);
        s += pmf[l];
      }
      double c = 0.0;
      for (std::size_t l = 0; l < K; ++l) {
        pmf[l] /= s;
        c += pmf[l];
        cdf[l] = c;
      }
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t cnt = upto[t];
        if (cnt == 0) continue;
        const double F = cdf[cnt - 1];
        for (std::size_t l = 0; l < K; ++l) {
          const double u = -pmf[l] * ((l < cnt ? 1.0 : 0.0) - F);
          if (u == 0.0) continue;
          auto jr = jac.row(base + l);
          for (std::size_t j = 0; j < p; ++j) out(i, j, t) += u * jr[j];
        }
      }
    }
  }
  return out;
}

// ---- Oracle ----

Matrix oracle_survival(const CoxWeibullOracle& m, const Matrix& X, const TimeGrid& grid) {
  Matrix S(X.rows(), grid.size());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t k = 0; k < grid.size(); ++k) {
      S(i, k) = std::exp(-m.cumulative_hazard(grid[k], X.row(i)));
    }
  }
  return S;
}

Tensor3 oracle_gradient(const CoxWeibullOracle& m, const Matrix& X, const TimeGrid& grid) {
  const std::size_t n = X.rows(), p = X.cols(), T = grid.size();
  Tensor3 out(n, p, T);
  std::vector<double> dh(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < T; ++k) {
      const double H = m.cumulative_hazard_gradient(grid[k], X.row(i), dh);
      const double S = std::exp(-H);
      for (std::size_t j = 0; j < p; ++j) out(i, j, k) = -S * dh[j];
    }
  }
  return out;
}

}  // namespace

SurvivalCurveMatrix predict_survival(const SurvivalModel& model, const Matrix& X,
                                     const TimeGrid& grid) {
  return {grid, model.survival(X, grid)};
}

Matrix predict_gradient(const SurvivalModel& model, std::span<const double> x,
                        const TimeGrid& grid) {
  if (x.size() != model.num_features()) throw ShapeError("predict_gradient: wrong feature count");
  for (double v : x) {
    if (!std::isfinite(v)) throw ConfigError("predict_gradient: non-finite input");
  }
  return model.survival_gradient(Matrix::row_vector(x), grid).slab_matrix(0);
}

BaselineHazard::BaselineHazard(std::vector<double> t, std::vector<double> inc)
    : times(std::move(t)), increments(std::move(inc)) {
  if (times.size() != increments.size()) throw ShapeError("baseline times/increments differ");
  cumulative.resize(increments.size());
  double c = 0.0;
  for (std::size_t i = 0; i < increments.size(); ++i) {
    if (!(increments[i] >= 0.0) || !std::isfinite(increments[i])) {
      throw ConfigError("baseline increments must be finite and nonnegative");
    }
    if (i > 0 && !(times[i] > times[i - 1])) throw ConfigError("baseline times must increase");
    c += increments[i];
    cumulative[i] = c;
  }
}

double BaselineHazard::cumulative_at(double t) const { return step_value(times, cumulative, t, 0.0); }

BaselineHazard breslow_baseline(std::span<const double> time, std::span<const int> event,
                                std::span<const double> log_risk) {
  const std::size_t n = time.size();
  if (event.size() != n || log_risk.size() != n) throw ShapeError("breslow_baseline: length mismatch");
  if (std::count(event.begin(), event.end(), 1) == 0) {
    throw TrainingError("breslow_baseline: no events");
  }
  const double shift = *std::max_element(log_risk.begin(), log_risk.end());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return time[a] > time[b]; });
  std::vector<double> times, inc;
  double risk_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const double t = time[order[i]];
    std::size_t d = 0;
    while (i < n && time[order[i]] == t) {
      risk_sum += std::exp(log_risk[order[i]] - shift);
      d += event[order[i]] == 1 ? 1 : 0;
      ++i;
    }
    if (d > 0) {
      if (!(risk_sum > 0.0)) throw Error("breslow_baseline: empty risk set");
      times.push_back(t);
      inc.push_back(static_cast<double>(d) / risk_sum * std::exp(-shift));
    }
  }
  std::reverse(times.begin(), times.end());
  std::reverse(inc.begin(), inc.end());
  return BaselineHazard(std::move(times), std::move(inc));
}

TimeGrid evaluation_grid(std::span<const double> time, std::span<const int> event,
                         std::size_t size) {
  if (size < 2) throw ConfigError("evaluation grid size must be at least 2");
  if (time.size() != event.size()) throw ShapeError("evaluation_grid: length mismatch");
  std::vector<double> ev;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (event[i] == 1) ev.push_back(time[i]);
  }
  if (ev.empty()) throw ConfigError("evaluation grid needs at least one event");
  std::sort(ev.begin(), ev.end());
  ev.erase(std::unique(ev.begin(), ev.end()), ev.end());
  if (ev.size() <= size) return TimeGrid(std::move(ev));
  std::vector<double> pts(size);
  const double m = static_cast<double>(ev.size() - 1);
  for (std::size_t q = 0; q < size; ++q) {
    const auto idx = static_cast<std::size_t>(std::llround(m * static_cast<double>(q) /
                                                           static_cast<double>(size - 1)));
    pts[q] = ev[idx];
  }
  return TimeGrid(std::move(pts));
}

TimeGrid evaluation_grid(const SurvivalDataset& data, std::size_t size) {
  return evaluation_grid(data.time, data.event, size);
}

void TrainConfig::validate() const {
  if (hidden.empty()) throw ConfigError("at least one hidden layer is required");
  for (auto w : hidden) {
    if (w == 0) throw ConfigError("hidden widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in (0, 1)");
  }
  if (!(deephit_alpha >= 0.0 && deephit_alpha <= 1.0)) throw ConfigError("deephit_alpha must lie in [0, 1]");
  if (!(deephit_sigma > 0.0)) throw ConfigError("deephit_sigma must be positive");
  if (deephit_bins < 2) throw ConfigError("deephit_bins must be at least 2");
  if (coxtime_knots < 2) throw ConfigError("coxtime_knots must be at least 2");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"hidden", cfg.hidden},
          {"activation", std::string(to_string(cfg.activation))},
          {"dropout", cfg.dropout},
          {"batch_size", cfg.batch_size},
          {"max_epochs", cfg.max_epochs},
          {"patience", cfg.patience},
          {"learning_rate", cfg.learning_rate},
          {"validation_fraction", cfg.validation_fraction},
          {"seed", cfg.seed},
          {"deephit_alpha", cfg.deephit_alpha},
          {"deephit_sigma", cfg.deephit_sigma},
          {"deephit_bins", cfg.deephit_bins},
          {"coxtime_knots", cfg.coxtime_knots}};
}

TrainConfig train_config_from_json(const nlohmann::json& doc) {
  TrainConfig cfg;
  try {
    cfg.hidden = doc.at("hidden").get<std::vector<std::size_t>>();
    cfg.activation = parse_activation(doc.at("activation").get<std::string>());
    cfg.dropout = doc.at("dropout").get<double>();
    cfg.batch_size = doc.at("batch_size").get<std::size_t>();
    cfg.max_epochs = doc.at("max_epochs").get<std::size_t>();
    cfg.patience = doc.at("patience").get<std::size_t>();
    cfg.learning_rate = doc.at("learning_rate").get<double>();
    cfg.validation_fraction = doc.at("validation_fraction").get<double>();
    cfg.seed = doc.at("seed").get<std::uint64_t>();
    cfg.deephit_alpha = doc.at("deephit_alpha").get<double>();
    cfg.deephit_sigma = doc.at("deephit_sigma").get<double>();
    cfg.deephit_bins = doc.at("deephit_bins").get<std::size_t>();
    cfg.coxtime_knots = doc.at("coxtime_knots").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  return cfg;
}

// ---- CoxWeibullOracle ----

void CoxWeibullOracle::validate() const {
  if (!(lambda > 0.0) || !(gamma > 0.0) || !std::isfinite(lambda) || !std::isfinite(gamma)) {
    throw ConfigError("oracle lambda and gamma must be positive and finite");
  }
  for (double b : beta) {
    if (!std::isfinite(b)) throw ConfigError("oracle coefficients must be finite");
  }
  if (!std::isfinite(tve_coeff)) throw ConfigError("oracle tve coefficient must be finite");
  if (tve_coeff != 0.0 && tve_feature >= beta.size()) {
    throw ConfigError("oracle tve feature index out of range");
  }
}

double CoxWeibullOracle::linear_predictor(std::span<const double> x) const {
  if (x.size() != beta.size()) throw ShapeError("oracle: wrong feature count");
  double eta = 0.0;
  for (std::size_t j = 0; j < beta.size(); ++j) eta += beta[j] * x[j];
  return eta;
}

double CoxWeibullOracle::shape(std::span<const double> x) const {
  return tve_coeff == 0.0 ? gamma : gamma + tve_coeff * x[tve_feature];
}

double CoxWeibullOracle::cumulative_hazard(double t, std::span<const double> x) const {
  const double eta = linear_predictor(x);
  if (t <= 0.0) return 0.0;
  const double a = shape(x);
  if (a > 0.0) return lambda * gamma / a * std::pow(t, a) * std::exp(eta);
  if (t <= kTruncation) return 0.0;
  const double scale = lambda * gamma * std::exp(eta);
  if (a == 0.0) return scale * std::log(t / kTruncation);
  return scale * (std::pow(t, a) - std::pow(kTruncation, a)) / a;
}

double CoxWeibullOracle::cumulative_hazard_gradient(double t, std::span<const double> x,
                                                    std::span<double> out) const {
  if (out.size() != beta.size()) throw ShapeError("oracle gradient: wrong output length");
  const double H = cumulative_hazard(t, x);
  for (std::size_t j = 0; j < beta.size(); ++j) out[j] = H * beta[j];
  if (tve_coeff == 0.0 || t <= 0.0) return H;
  const double a = shape(x);
  const double c = tve_coeff;
  const double eta = linear_predictor(x);
  double dh_da = 0.0;  // dH/da with eta held fixed
  if (a > 0.0) {
    dh_da = H * (std::log(t) - 1.0 / a);
  } else if (t > kTruncation) {
    const double scale = lambda * gamma * std::exp(eta);
    const double lt = std::log(t), ll = std::log(kTruncation);
    if (a == 0.0) {
      dh_da = scale * 0.5 * (lt * lt - ll * ll);
    } else {
      const double ta = std::pow(t, a), la = std::pow(kTruncation, a);
      dh_da = scale * ((ta * lt - la * ll) / a - (ta - la) / (a * a));
    }
  }
  out[tve_feature] += c * dh_da;
  return H;
}

// ---- FittedModel ----

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::none:
      return "none";
    case ModelKind::deepsurv:
      return "deepsurv";
    case ModelKind::coxtime:
      return "coxtime";
    case ModelKind::deephit:
      return "deephit";
    case ModelKind::oracle:
      return "oracle";
  }
  return "none";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "deepsurv") return ModelKind::deepsurv;
  if (name == "coxtime") return ModelKind::coxtime;
  if (name == "deephit") return ModelKind::deephit;
  if (name == "oracle") return ModelKind::oracle;
  throw ConfigError("unknown model '" + std::string(name) +
                    "' (expected deepsurv, coxtime, deephit or oracle)");
}

FittedModel::FittedModel(Variant model, TrainConfig config, TrainHistory history)
    : model_(std::move(model)), config_(std::move(config)), history_(std::move(history)) {
  if (const auto* o = std::get_if<CoxWeibullOracle>(&model_)) o->validate();
  if (const auto* h = std::get_if<DeepHitModel>(&model_)) {
    for (std::size_t k = 1; k < h->bin_edges.size(); ++k) {
      if (!(h->bin_edges[k] > h->bin_edges[k - 1])) throw ConfigError("DeepHit bin edges must increase");
    }
    if (h->net.output_width() != h->bins()) throw ShapeError("DeepHit net width does not match bins");
  }
  if (const auto* c = std::get_if<CoxTimeModel>(&model_)) {
    if (c->knots.size() != c->increments.size()) throw ShapeError("CoxTime knots/increments differ");
    for (double v : c->increments) {
      if (!(v >= 0.0)) throw ConfigError("CoxTime baseline increments must be nonnegative");
    }
  }
  if (fitted()) feature_names = default_feature_names(num_features());
}

ModelKind FittedModel::kind() const {
  return std::visit(Overloaded{[](const std::monostate&) { return ModelKind::none; },
                               [](const DeepSurvModel&) { return ModelKind::deepsurv; },
                               [](const CoxTimeModel&) { return ModelKind::coxtime; },
                               [](const DeepHitModel&) { return ModelKind::deephit; },
                               [](const CoxWeibullOracle&) { return ModelKind::oracle; }},
                    model_);
}

void FittedModel::require_fitted() const {
  if (!fitted()) throw StateError("model has not been fitted");
}

std::size_t FittedModel::num_features() const {
  require_fitted();
  return std::visit(Overloaded{[](const std::monostate&) -> std::size_t { return 0; },
                               [](const DeepSurvModel& m) { return m.net.input_width(); },
                               [](const CoxTimeModel& m) { return m.net.input_width() - 1; },
                               [](const DeepHitModel& m) { return m.net.input_width(); },
                               [](const CoxWeibullOracle& m) { return m.beta.size(); }},
                    model_);
}

Matrix FittedModel::survival(const Matrix& X, const TimeGrid& grid) const {
  require_fitted();
  check_features(X, num_features());
  return std::visit(Overloaded{[](const std::monostate&) -> Matrix { return {}; },
                               [&](const DeepSurvModel& m) { return deepsurv_survival(m, X, grid); },
                               [&](const CoxTimeModel& m) { return coxtime_survival(m, X, grid); },
                               [&](const DeepHitModel& m) { return deephit_survival(m, X, grid); },
                               [&](const CoxWeibullOracle& m) { return oracle_survival(m, X, grid); }},
                    model_);
}

Tensor3 FittedModel::survival_gradient(const Matrix& X, const TimeGrid& grid) const {
  require_fitted();
  check_features(X, num_features());
  return std::visit(Overloaded{[](const std::monostate&) -> Tensor3 { return {}; },
                               [&](const DeepSurvModel& m) { return deepsurv_gradient(m, X, grid); },
                               [&](const CoxTimeModel& m) { return coxtime_gradient(m, X, grid); },
                               [&](const DeepHitModel& m) { return deephit_gradient(m, X, grid); },
                               [&](const CoxWeibullOracle& m) { return oracle_gradient(m, X, grid); }},
                    model_);
}

std::vector<double> FittedModel::risk_score(const Matrix& X) const {
  require_fitted();
  check_features(X, num_features());
  return std::visit(
      Overloaded{
          [](const std::monostate&) { return std::vector<double>{}; },
          [&](const DeepSurvModel& m) { return predict(m.net, X).column(0); },
          [&](const CoxTimeModel& m) {
            const std::vector<double> t{m.risk_time};
            return predict(m.net, coxtime_inputs(m, X, 0, X.rows(), t)).column(0);
          },
          [&](const DeepHitModel& m) {
            Matrix pmf = predict(m.net, X);
            softmax_rows(pmf);
            std::vector<double> risk(X.rows());
            for (std::size_t i = 0; i < X.rows(); ++i) {
              double s = 1.0, prev = 0.0, rmst = 0.0;
              for (std::size_t k = 0; k < m.bins(); ++k) {
                rmst += s * (m.bin_edges[k] - prev);
                prev = m.bin_edges[k];
                s -= pmf(i, k);
              }
              risk[i] = -rmst;
            }
            return risk;
          },
          [&](const CoxWeibullOracle& m) {
            std::vector<double> risk(X.rows());
            for (std::size_t i = 0; i < X.rows(); ++i) {
              risk[i] = std::log(m.cumulative_hazard(1.0, X.row(i)));
            }
            return risk;
          }},
      model_);
}

FittedModel fit_model(ModelKind kind, const SurvivalDataset& data, const TrainConfig& cfg) {
  switch (kind) {
    case ModelKind::deepsurv:
      return fit_deepsurv(data, cfg);
    case ModelKind::coxtime:
      return fit_coxtime(data, cfg);
    case ModelKind::deephit:
      return fit_deephit(data, cfg);
    default:
      throw ConfigError("fit_model: '" + std::string(to_string(kind)) + "' is not trainable");
  }
}

// ---- Serialization ----

nlohmann::json to_json(const FittedModel& model) {
  if (!model.fitted()) throw StateError("cannot serialize an unfitted model");
  nlohmann::json doc;
  doc["format"] = "survgrad.model";
  doc["version"] = kModelFormatVersion;
  doc["variant"] = std::string(to_string(model.kind()));
  doc["feature_names"] = model.feature_names;
  doc["config"] = to_json(model.config());
  doc["seed"] = model.config().seed;
  doc["history"] = {{"train_loss", model.history().train_loss},
                    {"validation_loss", model.history().validation_loss},
                    {"best_epoch", model.history().best_epoch}};
  std::visit(Overloaded{[](const std::monostate&) {},
                        [&](const DeepSurvModel& m) {
                          doc["net"] = to_json(m.net);
                          doc["baseline"] = {{"times", m.baseline.times},
                                             {"increments", m.baseline.increments}};
                        },
                        [&](const CoxTimeModel& m) {
                          doc["net"] = to_json(m.net);
                          doc["time_mean"] = m.time_mean;
                          doc["time_sd"] = m.time_sd;
                          doc["risk_time"] = m.risk_time;
                          doc["baseline"] = {{"times", m.knots}, {"increments", m.increments}};
                        },
                        [&](const DeepHitModel& m) {
                          doc["net"] = to_json(m.net);
                          doc["bin_edges"] = m.bin_edges;
                        },
                        [&](const CoxWeibullOracle& m) {
                          doc["oracle"] = {{"lambda", m.lambda},
                                           {"gamma", m.gamma},
                                           {"beta", m.beta},
                                           {"tve_coeff", m.tve_coeff},
                                           {"tve_feature", m.tve_feature}};
                        }},
             model.variant());
  return doc;
}

FittedModel model_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "survgrad.model") {
      throw ConfigError("not a survgrad model document");
    }
    if (doc.at("version").get<int>() != kModelFormatVersion) {
      throw ConfigError("unsupported model version " + doc.at("version").dump());
    }
    const ModelKind kind = parse_model_kind(doc.at("variant").get<std::string>());
    const TrainConfig cfg = train_config_from_json(doc.at("config"));
    TrainHistory history;
    history.train_loss = doc.at("history").at("train_loss").get<std::vector<double>>();
    history.validation_loss = doc.at("history").at("validation_loss").get<std::vector<double>>();
    history.best_epoch = doc.at("history").at("best_epoch").get<std::size_t>();
    FittedModel::Variant v;
    switch (kind) {
      case ModelKind::deepsurv: {
        DeepSurvModel m;
        m.net = dense_net_from_json(doc.at("net"));
        m.baseline = BaselineHazard(doc.at("baseline").at("times").get<std::vector<double>>(),
                                    doc.at("baseline").at("increments").get<std::vector<double>>());
        v = std::move(m);
        break;
      }
      case ModelKind::coxtime: {
        CoxTimeModel m;
        m.net = dense_net_from_json(doc.at("net"));
        m.time_mean = doc.at("time_mean").get<double>();
        m.time_sd = doc.at("time_sd").get<double>();
        m.risk_time = doc.at("risk_time").get<double>();
        m.knots = doc.at("baseline").at("times").get<std::vector<double>>();
        m.increments = doc.at("baseline").at("increments").get<std::vector<double>>();
        v = std::move(m);
        break;
      }
      case ModelKind::deephit: {
        DeepHitModel m;
        m.net = dense_net_from_json(doc.at("net"));
        m.bin_edges = doc.at("bin_edges").get<std::vector<double>>();
        v = std::move(m);
        break;
      }
      case ModelKind::oracle: {
        CoxWeibullOracle m;
        const auto& o = doc.at("oracle");
        m.lambda = o.at("lambda").get<double>();
        m.gamma = o.at("gamma").get<double>();
        m.beta = o.at("beta").get<std::vector<double>>();
        m.tve_coeff = o.at("tve_coeff").get<double>();
        m.tve_feature = o.at("tve_feature").get<std::size_t>();
        v = std::move(m);
        break;
      }
      case ModelKind::none:
        throw ConfigError("model document has no variant");
    }
    FittedModel model(std::move(v), cfg, std::move(history));
    model.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    if (model.feature_names.size() != model.num_features()) {
      throw ConfigError("feature_names length does not match the model");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model document: ") + e.what());
  }
}

void save_model(const FittedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_json(model).dump(1) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

FittedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace survgrad
