#include "survgrad/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "survgrad/log.hpp"
#include "survgrad/parallel.hpp"
#include "survgrad/rng.hpp"

namespace survgrad {

namespace {

// Rows per batched gradient call inside a single instance.
constexpr std::size_t kGradientChunk = 4096;

void check_input(const SurvivalModel& model, const Matrix& X) {
  if (X.cols() != model.num_features()) {
    throw ShapeError("input has " + std::to_string(X.cols()) + " features, model expects " +
                     std::to_string(model.num_features()));
  }
  if (!X.all_finite()) throw ConfigError("attribution inputs must be finite");
}

Attribution make_attribution(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                             std::string method) {
  Attribution a;
  a.values = Tensor3(X.rows(), X.cols(), grid.size());
  a.grid = grid;
  a.method = std::move(method);
  a.pred = model.survival(X, grid);
  a.feature_names = default_feature_names(X.cols());
  a.instance_ids.resize(X.rows());
  std::iota(a.instance_ids.begin(), a.instance_ids.end(), 0);
  if (const auto* fm = dynamic_cast<const FittedModel*>(&model)) {
    if (fm->feature_names.size() == X.cols()) a.feature_names = fm->feature_names;
  }
  return a;
}

void set_reference(Attribution& a, Matrix ref) {
  a.pred_diff = Matrix(a.pred.rows(), a.pred.cols());
  for (std::size_t i = 0; i < a.pred.size(); ++i) a.pred_diff.values()[i] = a.pred.values()[i] - ref.values()[i];
  a.pred_ref = std::move(ref);
}

Matrix broadcast_rows(std::span<const double> row, std::size_t n) {
  Matrix m(n, row.size());
  for (std::size_t i = 0; i < n; ++i) std::copy(row.begin(), row.end(), m.row(i).begin());
  return m;
}

std::vector<double> column_means(const Matrix& m) {
  std::vector<double> mean(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t k = 0; k < m.cols(); ++k) mean[k] += m(i, k);
  }
  for (double& v : mean) v /= static_cast<double>(m.rows());
  return mean;
}

// out(j,k) += sum_r w_r(j) * G(r,j,k) over the rows of a gradient tensor, where
// w_r(j) = scale(r, j).
template <class Scale>
void accumulate_weighted(const Tensor3& G, Matrix& out, Scale scale) {
  const std::size_t p = G.dim1(), T = G.dim2();
  for (std::size_t r = 0; r < G.dim0(); ++r) {
    for (std::size_t j = 0; j < p; ++j) {
      const double w = scale(r, j);
      if (w == 0.0) continue;
      for (std::size_t k = 0; k < T; ++k) out(j, k) += w * G(r, j, k);
    }
  }
}

// Evaluates gradients for `rows` points produced by fill(r, row) in chunks and
// accumulates them with the given per-(row, feature) weight.
template <class Fill, class Scale>
Matrix chunked_gradient_sum(const SurvivalModel& model, const TimeGrid& grid, std::size_t p,
                            std::size_t rows, Fill fill, Scale scale) {
  Matrix acc(p, grid.size());
  for (std::size_t begin = 0; begin < rows; begin += kGradientChunk) {
    const std::size_t end = std::min(rows, begin + kGradientChunk);
    Matrix pts(end - begin, p);
    for (std::size_t r = begin; r < end; ++r) fill(r, pts.row(r - begin));
    const Tensor3 G = model.survival_gradient(pts, grid);
    accumulate_weighted(G, acc, [&](std::size_t r, std::size_t j) { return scale(r + begin, j); });
  }
  return acc;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.storage()}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

}  // namespace

std::string_view to_string(ReferenceKind kind) {
  switch (kind) {
    case ReferenceKind::none:
      return "none";
    case ReferenceKind::zeros:
      return "zeros";
    case ReferenceKind::mean:
      return "mean";
    case ReferenceKind::custom:
      return "custom";
    case ReferenceKind::background:
      return "background";
  }
  return "none";
}

ReferenceKind parse_reference_kind(std::string_view name) {
  if (name == "none") return ReferenceKind::none;
  if (name == "zeros") return ReferenceKind::zeros;
  if (name == "mean") return ReferenceKind::mean;
  if (name == "custom") return ReferenceKind::custom;
  if (name == "background") return ReferenceKind::background;
  throw ConfigError("unknown reference '" + std::string(name) + "'");
}

Matrix Attribution::instance(std::size_t i) const {
  if (i >= instances()) throw ConfigError("instance row " + std::to_string(i) + " out of range");
  return values.slab_matrix(i);
}

std::size_t Attribution::locate(std::size_t instance_id) const {
  for (std::size_t i = 0; i < instance_ids.size(); ++i) {
    if (instance_ids[i] == instance_id) return i;
  }
  throw ConfigError("instance " + std::to_string(instance_id) + " is not part of this attribution");
}

void Attribution::validate() const {
  const std::size_t n = instances(), T = times();
  if (grid.size() != T) throw ShapeError("attribution grid does not match the value tensor");
  if (pred.rows() != n || pred.cols() != T) throw ShapeError("attribution pred has the wrong shape");
  if (pred_ref.empty() != pred_diff.empty()) throw ShapeError("pred_ref and pred_diff must come together");
  if (!pred_ref.empty() && (pred_ref.rows() != n || pred_ref.cols() != T || pred_diff.rows() != n ||
                            pred_diff.cols() != T)) {
    throw ShapeError("reference curves have the wrong shape");
  }
  if (feature_names.size() != features()) throw ShapeError("feature_names length mismatch");
  if (instance_ids.size() != n) throw ShapeError("instance_ids length mismatch");
  if (!values.all_finite()) throw Error("attribution values are not finite");
}

std::vector<double> zeros_baseline(std::size_t p) { return std::vector<double>(p, 0.0); }

std::vector<double> mean_baseline(const Matrix& data) {
  if (data.rows() == 0) throw ConfigError("mean baseline needs data");
  return column_means(data);
}

Attribution grad_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid, bool absolute) {
  check_input(model, X);
  Attribution a = make_attribution(model, X, grid, "grad");
  a.params = {{"absolute", absolute}};
  a.values = model.survival_gradient(X, grid);
  if (absolute) {
    for (double& v : a.values.values()) v = std::abs(v);
  }
  return a;
}

Attribution gradxinput_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid) {
  check_input(model, X);
  Attribution a = make_attribution(model, X, grid, "gradxinput");
  a.values = model.survival_gradient(X, grid);
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t j = 0; j < X.cols(); ++j) {
      for (std::size_t k = 0; k < grid.size(); ++k) a.values(i, j, k) *= X(i, j);
    }
  }
  return a;
}

Attribution smoothgrad_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                         const NoiseSpec& noise, const Matrix& range_data, bool multiply_input) {
  check_input(model, X);
  if (noise.samples == 0) throw ConfigError("smoothgrad needs at least one sample");
  if (!(noise.noise_level >= 0.0 && noise.noise_level <= 1.0)) {
    throw ConfigError("noise_level must lie in [0, 1]");
  }
  if (range_data.cols() != X.cols() || range_data.rows() == 0) {
    throw ShapeError("smoothgrad range data must have the model's feature count");
  }
  const std::size_t p = X.cols(), K = noise.samples;
  std::vector<double> sigma(p);
  for (std::size_t j = 0; j < p; ++j) {
    double lo = range_data(0, j), hi = lo;
    for (std::size_t i = 1; i < range_data.rows(); ++i) {
      lo = std::min(lo, range_data(i, j));
      hi = std::max(hi, range_data(i, j));
    }
    if (hi == lo) warn("smoothgrad: feature " + std::to_string(j + 1) + " has zero range; no noise applied");
    sigma[j] = noise.noise_level * (hi - lo);
  }
  Attribution a = make_attribution(model, X, grid, multiply_input ? "smoothgradxinput" : "smoothgrad");
  a.params = {{"noise_level", noise.noise_level}, {"samples", K}, {"seed", noise.seed}};
  parallel_for(X.rows(), [&](std::size_t i) {
    Rng rng = make_rng(noise.seed, i);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix eps(K, p);
    for (double& e : eps.values()) e = normal(rng);
    auto x = X.row(i);
    const double inv_k = 1.0 / static_cast<double>(K);
    Matrix acc = chunked_gradient_sum(
        model, grid, p, K,
        [&](std::size_t r, std::span<double> row) {
          for (std::size_t j = 0; j < p; ++j) row[j] = x[j] + sigma[j] * eps(r, j);
        },
        [&](std::size_t, std::size_t j) { return (multiply_input ? x[j] : 1.0) * inv_k; });
    a.values.set_slab(i, acc);
  });
  return a;
}

Attribution intgrad_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                      std::span<const double> baseline, std::size_t steps, ReferenceKind kind) {
  check_input(model, X);
  if (steps == 0) throw ConfigError("intgrad needs at least one step");
  if (baseline.size() != X.cols()) throw ShapeError("intgrad baseline has the wrong length");
  const std::size_t p = X.cols();
  Attribution a = make_attribution(model, X, grid, "intgrad");
  a.params = {{"steps", steps}};
  a.reference.kind = kind;
  a.reference.point.assign(baseline.begin(), baseline.end());
  const Matrix ref_curve = model.survival(Matrix::row_vector(baseline), grid);
  set_reference(a, broadcast_rows(ref_curve.row(0), X.rows()));
  parallel_for(X.rows(), [&](std::size_t i) {
    auto x = X.row(i);
    const double inv_m = 1.0 / static_cast<double>(steps);
    Matrix acc = chunked_gradient_sum(
        model, grid, p, steps,
        [&](std::size_t l, std::span<double> row) {
          const double alpha = (static_cast<double>(l) + 0.5) * inv_m;
          for (std::size_t j = 0; j < p; ++j) row[j] = baseline[j] + alpha * (x[j] - baseline[j]);
        },
        [&](std::size_t, std::size_t j) { return (x[j] - baseline[j]) * inv_m; });
    a.values.set_slab(i, acc);
  });
  return a;
}

Attribution gradshap_t(const SurvivalModel& model, const Matrix& X, const TimeGrid& grid,
                       const Matrix& background, const GradShapConfig& cfg) {
  check_input(model, X);
  if (background.rows() == 0) throw ConfigError("gradshap needs a nonempty background");
  if (background.cols() != X.cols()) throw ShapeError("background has the wrong feature count");
  if (cfg.n_int == 0) throw ConfigError("gradshap n_int must be at least 1");
  const std::size_t p = X.cols(), B = background.rows();
  const std::size_t draws = cfg.n_samples == 0 ? B : cfg.n_samples;
  Attribution a = make_attribution(model, X, grid, "gradshap");
  a.params = {{"n_samples", draws}, {"n_int", cfg.n_int}, {"seed", cfg.seed}, {"stratified", cfg.stratified}};
  a.reference.kind = ReferenceKind::background;
  a.reference.background_rows = B;
  a.reference.seed = cfg.seed;
  const std::vector<double> ref = column_means(model.survival(background, grid));
  set_reference(a, broadcast_rows(ref, X.rows()));

  parallel_for(X.rows(), [&](std::size_t i) {
    Rng rng = make_rng(cfg.seed, i);
    // Background rows without replacement: a shuffled order cycled through.
    std::vector<std::size_t> order(B);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t rows = draws * cfg.n_int;
    std::vector<std::size_t> ref_row(rows);
    std::vector<double> alpha(rows);
    for (std::size_t s = 0; s < draws; ++s) {
      for (std::size_t l = 0; l < cfg.n_int; ++l) {
        const std::size_t r = s * cfg.n_int + l;
        ref_row[r] = order[s % B];
        alpha[r] = cfg.stratified ? (static_cast<double>(l) + 0.5) / static_cast<double>(cfg.n_int)
                                  : uniform_open(rng);
      }
    }
    auto x = X.row(i);
    const double inv = 1.0 / static_cast<double>(rows);
    Matrix acc = chunked_gradient_sum(
        model, grid, p, rows,
        [&](std::size_t r, std::span<double> row) {
          auto xb = background.row(ref_row[r]);
          for (std::size_t j = 0; j < p; ++j) row[j] = xb[j] + alpha[r] * (x[j] - xb[j]);
        },
        [&](std::size_t r, std::size_t j) { return (x[j] - background(ref_row[r], j)) * inv; });
    a.values.set_slab(i, acc);
  });
  return a;
}

Tensor3 normalized_contributions(const Tensor3& values, bool warn_on_zero) {
  const std::size_t n = values.dim0(), p = values.dim1(), T = values.dim2();
  Tensor3 out(n, p, T);
  std::size_t zero_slices = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < T; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += std::abs(values(i, j, k));
      if (s == 0.0) {
        ++zero_slices;
        for (std::size_t j = 0; j < p; ++j) out(i, j, k) = 1.0 / static_cast<double>(p);
        continue;
      }
      for (std::size_t j = 0; j < p; ++j) out(i, j, k) = std::abs(values(i, j, k)) / s;
    }
  }
  if (zero_slices > 0 && warn_on_zero) {
    warn(std::to_string(zero_slices) + " all-zero attribution slice(s) normalized to uniform weights");
  }
  return out;
}

Tensor3 normalized_contributions(const Attribution& attr) { return normalized_contributions(attr.values); }

Matrix time_averaged_importance(const Tensor3& normalized) {
  const std::size_t n = normalized.dim0(), p = normalized.dim1(), T = normalized.dim2();
  Matrix out(n, p);
  if (T == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < T; ++k) s += normalized(i, j, k);
      out(i, j) = s / static_cast<double>(T);
    }
  }
  return out;
}

Matrix time_averaged_importance(const Attribution& attr) {
  return time_averaged_importance(normalized_contributions(attr));
}

std::string attribution_to_csv(const Attribution& attr) {
  std::string out = "instance,feature,time,value,method\n";
  for (std::size_t i = 0; i < attr.instances(); ++i) {
    const std::string inst = std::to_string(attr.instance_ids.at(i));
    for (std::size_t j = 0; j < attr.features(); ++j) {
      for (std::size_t k = 0; k < attr.times(); ++k) {
        out += inst;
        out += ',';
        out += attr.feature_names.at(j);
        out += ',';
        out += format_double(attr.grid[k]);
        out += ',';
        out += format_double(attr.values(i, j, k));
        out += ',';
        out += attr.method;
        out += '\n';
      }
    }
  }
  return out;
}

void write_attribution_csv(const Attribution& attr, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << attribution_to_csv(attr);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

nlohmann::json to_json(const Attribution& a) {
  nlohmann::json doc;
  doc["format"] = "survgrad.attribution";
  doc["version"] = 1;
  doc["method"] = a.method;
  doc["params"] = a.params;
  doc["grid"] = std::vector<double>(a.grid.points().begin(), a.grid.points().end());
  doc["feature_names"] = a.feature_names;
  doc["instance_ids"] = a.instance_ids;
  doc["shape"] = {a.instances(), a.features(), a.times()};
  doc["values"] = std::vector<double>(a.values.values().begin(), a.values.values().end());
  doc["pred"] = matrix_json(a.pred);
  doc["reference"] = {{"kind", std::string(to_string(a.reference.kind))},
                      {"point", a.reference.point},
                      {"background_rows", a.reference.background_rows},
                      {"seed", a.reference.seed}};
  if (a.has_reference()) {
    doc["pred_ref"] = matrix_json(a.pred_ref);
    doc["pred_diff"] = matrix_json(a.pred_diff);
  }
  return doc;
}

Attribution attribution_from_json(const nlohmann::json& doc) {
  Attribution a;
  try {
    if (doc.at("format").get<std::string>() != "survgrad.attribution") {
      throw ConfigError("not a survgrad attribution document");
    }
    a.method = doc.at("method").get<std::string>();
    a.params = doc.at("params");
    a.grid = TimeGrid(doc.at("grid").get<std::vector<double>>());
    a.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    a.instance_ids = doc.at("instance_ids").get<std::vector<std::size_t>>();
    const auto shape = doc.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) throw ConfigError("attribution shape must have three entries");
    const auto values = doc.at("values").get<std::vector<double>>();
    if (values.size() != shape[0] * shape[1] * shape[2]) throw ShapeError("attribution values length mismatch");
    a.values = Tensor3(shape[0], shape[1], shape[2]);
    std::copy(values.begin(), values.end(), a.values.values().begin());
    a.pred = matrix_from_json(doc.at("pred"));
    const auto& r = doc.at("reference");
    a.reference.kind = parse_reference_kind(r.at("kind").get<std::string>());
    a.reference.point = r.at("point").get<std::vector<double>>();
    a.reference.background_rows = r.at("background_rows").get<std::size_t>();
    a.reference.seed = r.at("seed").get<std::uint64_t>();
    if (doc.contains("pred_ref")) {
      a.pred_ref = matrix_from_json(doc.at("pred_ref"));
      a.pred_diff = matrix_from_json(doc.at("pred_diff"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed attribution document: ") + e.what());
  }
  a.validate();
  return a;
}

void write_attribution_json(const Attribution& attr, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_json(attr).dump() << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Attribution read_attribution_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return attribution_from_json(doc);
}

Matrix CountingModel::survival(const Matrix& X, const TimeGrid& grid) const {
  survival_rows_ += X.rows();
  return inner_.survival(X, grid);
}

Tensor3 CountingModel::survival_gradient(const Matrix& X, const TimeGrid& grid) const {
  gradient_rows_ += X.rows();
  return inner_.survival_gradient(X, grid);
}

}  // namespace survgrad
