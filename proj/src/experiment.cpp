#include "survgrad/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "survgrad/error.hpp"
#include "survgrad/log.hpp"
#include "survgrad/metrics.hpp"
#include "survgrad/parallel.hpp"
#include "survgrad/rng.hpp"

namespace survgrad {

namespace {

// Seed streams for the pipeline stages.
constexpr std::uint64_t kSplitStream = 11;
constexpr std::uint64_t kBackgroundStream = 12;
constexpr std::uint64_t kMethodStream = 13;
constexpr std::uint64_t kBenchmarkStream = 14;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Typed access to a ConfigMap that remembers which keys were consumed.
class Reader {
 public:
  explicit Reader(const ConfigMap& m) : map_(m) {}

  const std::string* raw(const std::string& key) {
    auto it = map_.find(key);
    if (it == map_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  template <class T>
  void number(const std::string& key, T& out) {
    if (const auto* v = raw(key)) out = parse_number<T>(key, *v);
  }
  template <class T>
  std::optional<T> optional_number(const std::string& key) {
    if (const auto* v = raw(key)) return parse_number<T>(key, *v);
    return std::nullopt;
  }
  template <class T>
  void number_list(const std::string& key, std::vector<T>& out) {
    if (const auto* v = raw(key)) {
      out.clear();
      for (const auto& item : split_list(*v)) out.push_back(parse_number<T>(key, item));
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const auto* v = raw(key)) out = *v;
  }
  void string_list(const std::string& key, std::vector<std::string>& out) {
    if (const auto* v = raw(key)) out = split_list(*v);
  }
  void boolean(const std::string& key, bool& out) {
    if (const auto* v = raw(key)) {
      if (*v == "true" || *v == "1") out = true;
      else if (*v == "false" || *v == "0") out = false;
      else throw ConfigError("'" + key + "' must be true or false, got '" + *v + "'");
    }
  }

  void reject_unused() const {
    for (const auto& [key, value] : map_) {
      if (!used_.count(key)) throw ConfigError("unknown configuration key '" + key + "'");
    }
  }

 private:
  template <class T>
  static T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const std::string s = trim(text);
    const char* end = s.data() + s.size();
    std::from_chars_result r;
    if constexpr (std::is_floating_point_v<T>) {
      r = std::from_chars(s.data(), end, v);
    } else {
      if (!s.empty() && s.front() == '-') {
        throw ConfigError("'" + key + "' must be a nonnegative integer, got '" + s + "'");
      }
      r = std::from_chars(s.data(), end, v);
    }
    if (s.empty() || r.ec != std::errc() || r.ptr != end) {
      throw ConfigError("'" + key + "' has a malformed number '" + text + "'");
    }
    return v;
  }

  const ConfigMap& map_;
  std::set<std::string> used_;
};

void flatten(const nlohmann::json& node, const std::string& prefix, ConfigMap& out) {
  if (node.is_object()) {
    for (const auto& [k, v] : node.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    return;
  }
  auto scalar = [](const nlohmann::json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) return format_double(v.get<double>());
    return v.dump();
  };
  if (node.is_array()) {
    std::string joined;
    for (const auto& item : node) {
      if (item.is_structured()) throw ConfigError("'" + prefix + "': nested arrays are not supported");
      if (!joined.empty()) joined += ",";
      joined += scalar(item);
    }
    out[prefix] = joined;
    return;
  }
  out[prefix] = scalar(node);
}

bool has_reference_output(const std::string& method) {
  return method == "intgrad" || method == "gradshap" || method == "survshap";
}

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"grad",     "gradxinput", "smoothgrad", "smoothgradxinput",
                                          "intgrad",  "gradshap",   "survshap",   "survlime"};
  return m;
}

void write_text(const std::string& body, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << body;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_json(const nlohmann::json& doc, const std::filesystem::path& path) {
  write_text(doc.dump(2) + "\n", path);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

std::filesystem::path dataset_path(const ExperimentConfig& cfg) {
  return cfg.dataset ? *cfg.dataset : cfg.out / "dataset.csv";
}

std::filesystem::path model_path(const ExperimentConfig& cfg, ModelKind kind) {
  return cfg.out / ("model_" + std::string(to_string(kind)) + ".json");
}

// Test-set size: explicit key, then the design sidecar next to the dataset,
// then the preset, then a fifth of the rows.
std::size_t resolve_test_n(const ExperimentConfig& cfg, const std::filesystem::path& data_path,
                           std::size_t rows) {
  if (cfg.test_n) return *cfg.test_n;
  const auto sidecar = data_path.parent_path() / "design.json";
  if (std::filesystem::exists(sidecar)) {
    const auto doc = read_json(sidecar);
    if (doc.contains("test_n") && doc["test_n"].get<std::size_t>() > 0) {
      return doc["test_n"].get<std::size_t>();
    }
  }
  if (cfg.preset && cfg.design.test_n > 0) return cfg.design.test_n;
  return rows / 5;
}

Matrix sample_rows(const Matrix& data, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(data.rows());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, kBackgroundStream);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(count, idx.size()));
  std::sort(idx.begin(), idx.end());
  return data.select_rows(idx);
}

void apply_threads(const ExperimentConfig& cfg) {
  if (cfg.threads) set_thread_budget(*cfg.threads);
}

MetricReport evaluate(const FittedModel& model, const SurvivalDataset& train, const SurvivalDataset& test,
                      std::size_t grid_size) {
  MetricReport report;
  report.model = std::string(to_string(model.kind()));
  report.c_index = concordance_index(test.time, test.event, model.risk_score(test.features));
  const TimeGrid grid = evaluation_grid(test, grid_size);
  report.brier = brier_score(predict_survival(model, test.features, grid), test.time, test.event,
                             censoring_km(train));
  report.ibs = integrated_brier_score(report.brier);
  report.metadata = {{"train_rows", train.size()},
                     {"test_rows", test.size()},
                     {"epochs", model.history().train_loss.size()},
                     {"best_epoch", model.history().best_epoch}};
  return report;
}

}  // namespace

// ---- configuration ----

ConfigMap parse_config_text(std::string_view text) {
  ConfigMap out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out[key] = trim(body.substr(eq + 1));
  }
  return out;
}

ConfigMap parse_config_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("JSON config must be an object");
  ConfigMap out;
  flatten(doc, "", out);
  return out;
}

ConfigMap load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return parse_config_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
  }
  return parse_config_text(text);
}

std::pair<std::string, std::string> parse_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(text) + "'");
  std::string key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + std::string(text) + "'");
  return {key, trim(text.substr(eq + 1))};
}

ExperimentConfig ExperimentConfig::from_map(const ConfigMap& settings) {
  ExperimentConfig cfg;
  Reader r(settings);

  r.number("seed", cfg.seed);
  if (const auto* v = r.raw("preset")) cfg.preset = *v;
  if (const auto* v = r.raw("out")) cfg.out = *v;
  if (const auto* v = r.raw("dataset")) cfg.dataset = std::filesystem::path(*v);
  cfg.test_n = r.optional_number<std::size_t>("test_n");
  cfg.threads = r.optional_number<std::size_t>("threads");
  if (const auto* v = r.raw("models")) {
    cfg.models.clear();
    for (const auto& name : split_list(*v)) {
      const ModelKind kind = parse_model_kind(name);
      if (kind == ModelKind::none || kind == ModelKind::oracle) {
        throw ConfigError("model '" + name + "' cannot be trained (expected deepsurv, coxtime, deephit)");
      }
      cfg.models.push_back(kind);
    }
  }

  if (cfg.preset) cfg.design = design_preset(*cfg.preset);
  SimDesign& d = cfg.design;
  r.number("design.n", d.n);
  r.number("design.lambda", d.lambda);
  r.number("design.gamma", d.gamma);
  r.number_list("design.beta", d.beta);
  r.number("design.tve_coeff", d.tve_coeff);
  r.number("design.censor_time", d.censor_time);
  r.number("design.test_n", d.test_n);
  if (const auto* v = r.raw("design.features")) {
    d.feature_laws.clear();
    for (const auto& name : split_list(*v)) d.feature_laws.push_back(parse_feature_law(name));
  }
  if (d.feature_laws.size() != d.beta.size() && settings.count("design.features") == 0) {
    d.feature_laws.assign(d.beta.size(), FeatureLaw::standard_normal);
  }
  if (!cfg.preset && !d.beta.empty()) d.name = "custom";
  d.seed = cfg.seed;

  TrainConfig& t = cfg.train;
  r.number_list("train.hidden", t.hidden);
  if (const auto* v = r.raw("train.activation")) t.activation = parse_activation(*v);
  r.number("train.dropout", t.dropout);
  r.number("train.batch_size", t.batch_size);
  r.number("train.max_epochs", t.max_epochs);
  r.number("train.patience", t.patience);
  r.number("train.learning_rate", t.learning_rate);
  r.number("train.validation_fraction", t.validation_fraction);
  r.number("train.deephit_alpha", t.deephit_alpha);
  r.number("train.deephit_sigma", t.deephit_sigma);
  r.number("train.deephit_bins", t.deephit_bins);
  r.number("train.coxtime_knots", t.coxtime_knots);
  t.seed = cfg.seed;

  ExplainSettings& e = cfg.explain;
  r.string_list("explain.methods", e.methods);
  r.number_list("explain.instances", e.instances);
  if (const auto* v = r.raw("explain.plots")) {
    e.plots.clear();
    for (const auto& name : split_list(*v)) e.plots.push_back(parse_plot_kind(name));
  }
  r.number("explain.grid_size", e.grid_size);
  r.number("explain.background", e.background);
  r.number("explain.n_int", e.n_int);
  r.number("explain.n_samples", e.n_samples);
  r.number("explain.intgrad_steps", e.intgrad_steps);
  r.string("explain.baseline", e.baseline);
  r.number("explain.permutations", e.permutations);
  r.number("explain.noise", e.noise);
  r.number("explain.noise_samples", e.noise_samples);
  r.number("explain.lime_neighbors", e.lime_neighbors);
  r.number("explain.force_points", e.force_points);

  BenchmarkSettings& b = cfg.benchmark;
  r.number_list("benchmark.p", b.p);
  r.number_list("benchmark.n_int", b.n_int);
  r.number("benchmark.permutations", b.permutations);
  r.number("benchmark.repetitions", b.repetitions);
  r.number("benchmark.instances", b.instances);
  r.number("benchmark.background", b.background);
  r.number("benchmark.grid_size", b.grid_size);
  r.number("benchmark.train_epochs", b.train_epochs);
  if (const auto* v = r.raw("benchmark.model")) b.model = parse_model_kind(*v);

  r.reject_unused();
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (threads && *threads == 0) throw ConfigError("threads must be positive");
  if (models.empty()) throw ConfigError("models list is empty");
  if (out.empty()) throw ConfigError("output directory must not be empty");
  if (!design.beta.empty()) design.validate();
  for (const auto& m : explain.methods) {
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end()) {
      throw ConfigError("unknown explanation method '" + m +
                        "' (expected grad, gradxinput, smoothgrad, smoothgradxinput, intgrad, gradshap, "
                        "survshap, survlime)");
    }
  }
  if (explain.methods.empty()) throw ConfigError("explain.methods is empty");
  for (PlotKind k : explain.plots) {
    if (k != PlotKind::force) continue;
    for (const auto& m : explain.methods) {
      if (!has_reference_output(m) && m != "survlime") {
        throw ConfigError("force plots need a difference-to-reference method; '" + m +
                          "' only gives raw relevance (use intgrad, gradshap or survshap, or drop the force plot)");
      }
    }
  }
  if (explain.baseline != "mean" && explain.baseline != "zeros") {
    throw ConfigError("explain.baseline must be mean or zeros");
  }
  if (explain.grid_size < 2 || benchmark.grid_size < 2) throw ConfigError("grid sizes must be at least 2");
  if (explain.force_points < 2) throw ConfigError("explain.force_points must be at least 2");
  if (explain.background == 0 || benchmark.background == 0) throw ConfigError("background size must be positive");
  if (explain.n_int == 0 || explain.intgrad_steps == 0 || explain.noise_samples == 0) {
    throw ConfigError("explain sample counts must be positive");
  }
  if (explain.permutations == 0 || benchmark.permutations == 0) {
    throw ConfigError("permutation counts must be positive");
  }
  if (benchmark.repetitions == 0 || benchmark.instances == 0) {
    throw ConfigError("benchmark repetitions and instances must be positive");
  }
  for (std::size_t p : benchmark.p) {
    if (p < 2) throw ConfigError("benchmark p values must be at least 2");
  }
  for (std::size_t m : benchmark.n_int) {
    if (m == 0) throw ConfigError("benchmark n_int values must be positive");
  }
  if (benchmark.model == ModelKind::none) throw ConfigError("benchmark.model must be a trainable model or oracle");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json doc;
  doc["preset"] = preset ? nlohmann::json(*preset) : nlohmann::json(nullptr);
  doc["seed"] = seed;
  doc["out"] = out.string();
  std::vector<std::string> names;
  for (ModelKind k : models) names.emplace_back(to_string(k));
  doc["models"] = names;
  doc["train"] = survgrad::to_json(train);
  if (!design.beta.empty()) doc["design"] = survgrad::to_json(design);
  return doc;
}

// ---- subcommands ----

void cmd_simulate(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.design.beta.empty()) {
    throw ConfigError("no simulation design: pass --preset (" +
                      [] {
                        std::string s;
                        for (const auto& n : design_preset_names()) s += (s.empty() ? "" : ", ") + n;
                        return s;
                      }() +
                      ", linear_p<p>) or set design.beta");
  }
  cfg.design.validate();
  apply_threads(cfg);
  const SurvivalDataset data = simulate(cfg.design);
  make_dir(cfg.out);
  const auto path = dataset_path(cfg);
  if (!path.parent_path().empty()) make_dir(path.parent_path());
  write_dataset_csv(data, path);
  write_design_json(cfg.design, path.parent_path() / "design.json");
  const std::size_t events = data.num_events();
  log << "simulate: " << data.size() << " rows, " << data.num_features() << " features, " << events
      << " events (" << fixed(100.0 * static_cast<double>(events) / static_cast<double>(data.size()), 1)
      << "%), " << data.size() - events << " censored -> " << path.string() << "\n";
}

void cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  const auto path = dataset_path(cfg);
  if (!std::filesystem::exists(path)) {
    throw IoError("dataset '" + path.string() + "' does not exist (run simulate first or set dataset)");
  }
  const SurvivalDataset data = read_dataset_csv(path);
  const std::size_t test_n = resolve_test_n(cfg, path, data.size());
  if (test_n == 0 || test_n >= data.size()) {
    throw ConfigError("test_n " + std::to_string(test_n) + " must lie in [1, " +
                      std::to_string(data.size() - 1) + "]");
  }
  apply_threads(cfg);
  auto [train, test] = train_test_split(data, test_n, derive_seed(cfg.seed, kSplitStream));
  make_dir(cfg.out);
  write_dataset_csv(train, cfg.out / "train.csv");
  write_dataset_csv(test, cfg.out / "test.csv");
  for (ModelKind kind : cfg.models) {
    const FittedModel model = fit_model(kind, train, cfg.train);
    save_model(model, model_path(cfg, kind));
    MetricReport report = evaluate(model, train, test, cfg.explain.grid_size);
    write_json(to_json(report), cfg.out / ("metrics_" + std::string(to_string(kind)) + ".json"));
    log << "train: " << to_string(kind) << " C=" << fixed(report.c_index, 4) << " IBS=" << fixed(report.ibs, 4)
        << " epochs=" << model.history().train_loss.size() << " (best " << model.history().best_epoch << ")\n";
  }
}

void cmd_explain(const ExperimentConfig& cfg, std::ostream& log) {
  const auto train_path = cfg.out / "train.csv";
  const auto test_path = cfg.out / "test.csv";
  for (const auto& p : {train_path, test_path}) {
    if (!std::filesystem::exists(p)) throw IoError("'" + p.string() + "' is missing (run train first)");
  }
  for (ModelKind kind : cfg.models) {
    if (!std::filesystem::exists(model_path(cfg, kind))) {
      throw IoError("model file '" + model_path(cfg, kind).string() + "' is missing (run train first)");
    }
  }
  const SurvivalDataset train = read_dataset_csv(train_path);
  const SurvivalDataset test = read_dataset_csv(test_path);
  for (std::size_t i : cfg.explain.instances) {
    if (i >= test.size()) {
      throw ConfigError("instance " + std::to_string(i) + " is out of range (test split has " +
                        std::to_string(test.size()) + " rows)");
    }
  }
  if (cfg.explain.instances.empty()) throw ConfigError("explain.instances is empty");
  std::vector<FittedModel> models;
  for (ModelKind kind : cfg.models) {
    models.push_back(load_model(model_path(cfg, kind)));
    if (models.back().num_features() != test.num_features()) {
      throw ConfigError("model '" + std::string(to_string(kind)) + "' expects " +
                        std::to_string(models.back().num_features()) + " features, data has " +
                        std::to_string(test.num_features()));
    }
  }
  apply_threads(cfg);

  const ExplainSettings& e = cfg.explain;
  const Matrix X = test.features.select_rows(e.instances);
  const TimeGrid grid = evaluation_grid(test, e.grid_size);
  const Matrix background = sample_rows(train.features, e.background, cfg.seed);
  const auto baseline = e.baseline == "zeros" ? zeros_baseline(train.num_features()) : mean_baseline(train.features);
  const std::uint64_t method_seed = derive_seed(cfg.seed, kMethodStream);
  const auto dir = cfg.out / "explain";
  make_dir(dir);

  for (const FittedModel& model : models) {
    const std::string mname(to_string(model.kind()));
    for (const auto& method : e.methods) {
      const std::string stem = mname + "_" + method;
      if (method == "survlime") {
        SurvLimeConfig lc;
        lc.neighbors = e.lime_neighbors;
        lc.seed = method_seed;
        const Matrix W = survlime(model, X, grid, lc, SurvLimeReference::from_training(train));
        nlohmann::json doc;
        doc["format"] = "survgrad.survlime";
        doc["instances"] = e.instances;
        doc["weights"] = nlohmann::json::array();
        for (std::size_t i = 0; i < W.rows(); ++i) doc["weights"].push_back(survlime_to_json(W.row(i), model.feature_names));
        write_json(doc, dir / (stem + ".json"));
        log << "explain: " << stem << " -> " << (dir / (stem + ".json")).string() << "\n";
        continue;
      }
      Attribution attr;
      if (method == "grad") {
        attr = grad_t(model, X, grid);
      } else if (method == "gradxinput") {
        attr = gradxinput_t(model, X, grid);
      } else if (method == "smoothgrad" || method == "smoothgradxinput") {
        attr = smoothgrad_t(model, X, grid, NoiseSpec{e.noise, e.noise_samples, method_seed}, train.features,
                            method == "smoothgradxinput");
      } else if (method == "intgrad") {
        attr = intgrad_t(model, X, grid, baseline, e.intgrad_steps,
                         e.baseline == "zeros" ? ReferenceKind::zeros : ReferenceKind::mean);
      } else if (method == "gradshap") {
        GradShapConfig gc;
        gc.n_samples = e.n_samples;
        gc.n_int = e.n_int;
        gc.seed = method_seed;
        attr = gradshap_t(model, X, grid, background, gc);
      } else if (method == "survshap") {
        ShapleyConfig sc;
        sc.permutations = e.permutations;
        sc.background = background;
        sc.seed = method_seed;
        attr = survshap_t(model, X, grid, sc);
      }
      attr.instance_ids = e.instances;
      write_attribution_csv(attr, dir / (stem + ".csv"));
      write_attribution_json(attr, dir / (stem + ".json"));
      export_plot_data(attr, dir, stem, e.force_points);
      for (PlotKind kind : e.plots) {
        if (kind == PlotKind::force && !attr.has_reference()) continue;
        for (std::size_t id : e.instances) {
          PlotSpec spec;
          spec.kind = kind;
          spec.instance_id = id;
          spec.force_points = e.force_points;
          spec.title = mname + " " + method + ", test row " + std::to_string(id);
          write_svg(render_plot(spec, attr), dir / (stem + "_i" + std::to_string(id) + "_" +
                                                    std::string(to_string(kind)) + ".svg"));
        }
      }
      log << "explain: " << stem << " on " << X.rows() << " instance(s), " << e.plots.size() * X.rows()
          << " plot(s)\n";
    }
  }
}

void cmd_benchmark(const ExperimentConfig& cfg, std::ostream& log) {
  const BenchmarkSettings& b = cfg.benchmark;
  if (b.p.empty() || b.n_int.empty()) throw ConfigError("benchmark.p and benchmark.n_int must be nonempty");
  make_dir(cfg.out);
  apply_threads(cfg);

  std::string timing = "method,p,budget,repetition,seconds,median_seconds\n";
  std::string accuracy = "method,p,budget,time,local_accuracy\n";
  nlohmann::json summary = nlohmann::json::array();

  for (std::size_t p : b.p) {
    SimDesign design = linear_p_design(p);
    design.seed = derive_seed(cfg.seed, kBenchmarkStream + p);
    const SurvivalDataset data = simulate(design);
    auto [train, test] = train_test_split(data, design.test_n, derive_seed(design.seed, kSplitStream));
    FittedModel model;
    if (b.model == ModelKind::oracle) {
      model = FittedModel(design.oracle());
    } else {
      TrainConfig tc = cfg.train;
      if (b.train_epochs > 0) tc.max_epochs = b.train_epochs;
      model = fit_model(b.model, train, tc);
    }
    std::vector<std::size_t> rows(std::min(b.instances, test.size()));
    std::iota(rows.begin(), rows.end(), 0);
    const Matrix X = test.features.select_rows(rows);
    const TimeGrid grid = evaluation_grid(test, b.grid_size);
    const Matrix background = sample_rows(train.features, b.background, design.seed);

    auto record = [&](const std::string& method, std::size_t budget, const std::function<Attribution()>& run) {
      Attribution attr;
      const RuntimeStats stats = measure_runtime([&] { attr = run(); }, b.repetitions, 1);
      for (std::size_t r = 0; r < stats.samples.size(); ++r) {
        timing += method + "," + std::to_string(p) + "," + std::to_string(budget) + "," + std::to_string(r) + "," +
                  format_double(stats.samples[r]) + "," + format_double(stats.median_seconds) + "\n";
      }
      const Curve acc = local_accuracy_t(attr);
      for (std::size_t k = 0; k < acc.times.size(); ++k) {
        accuracy += method + "," + std::to_string(p) + "," + std::to_string(budget) + "," +
                    format_double(acc.times[k]) + "," + format_double(acc.values[k]) + "\n";
      }
      double mean_acc = 0.0;
      for (double v : acc.values) mean_acc += v;
      if (!acc.values.empty()) mean_acc /= static_cast<double>(acc.values.size());
      summary.push_back({{"method", method}, {"p", p}, {"budget", budget},
                         {"mean_local_accuracy", mean_acc}});
      log << "benchmark: p=" << p << " " << method << "(" << budget << ") median "
          << fixed(stats.median_seconds, 3) << " s, mean local accuracy " << fixed(mean_acc, 4) << "\n";
    };
    for (std::size_t n_int : b.n_int) {
      GradShapConfig gc;
      gc.n_int = n_int;
      gc.seed = design.seed;
      record("gradshap", n_int, [&] { return gradshap_t(model, X, grid, background, gc); });
    }
    ShapleyConfig sc;
    sc.permutations = b.permutations;
    sc.background = background;
    sc.seed = design.seed;
    record("survshap", b.permutations, [&] { return survshap_t(model, X, grid, sc); });
  }
  write_text(timing, cfg.out / "benchmark_runtime.csv");
  write_text(accuracy, cfg.out / "benchmark_local_accuracy.csv");
  write_json(summary, cfg.out / "benchmark_summary.json");
}

std::string build_report(const std::filesystem::path& dir) {
  std::string md = "# survgrad report\n\n";
  if (!std::filesystem::is_directory(dir)) {
    md += "No artifacts: directory `" + dir.string() + "` does not exist.\n";
    return md;
  }
  auto sorted_files = [](const std::filesystem::path& d, std::string_view prefix, std::string_view ext) {
    std::vector<std::filesystem::path> found;
    if (!std::filesystem::is_directory(d)) return found;
    for (const auto& entry : std::filesystem::directory_iterator(d)) {
      const auto name = entry.path().filename().string();
      if (entry.is_regular_file() && name.starts_with(prefix) && entry.path().extension() == ext) {
        found.push_back(entry.path());
      }
    }
    std::sort(found.begin(), found.end());
    return found;
  };
  const auto metrics = sorted_files(dir, "metrics_", ".json");
  const auto svgs = sorted_files(dir / "explain", "", ".svg");
  const auto attributions = sorted_files(dir / "explain", "", ".json");
  const bool has_data = std::filesystem::exists(dir / "dataset.csv");
  const bool has_bench = std::filesystem::exists(dir / "benchmark_summary.json");
  if (metrics.empty() && svgs.empty() && attributions.empty() && !has_data && !has_bench) {
    md += "No artifacts found in `" + dir.string() + "`.\n";
    return md;
  }
  std::vector<std::string> missing;

  md += "## Data\n\n";
  if (std::filesystem::exists(dir / "design.json")) {
    const auto design = read_json(dir / "design.json");
    md += "- design: `" + design.value("name", std::string("custom")) + "`, n = " +
          std::to_string(design.value("n", std::size_t{0})) + "\n";
  }
  if (has_data) md += "- dataset: [dataset.csv](dataset.csv)\n";
  else missing.emplace_back("dataset.csv");
  md += "\n## Models\n\n";
  if (metrics.empty()) {
    missing.emplace_back("metrics_<model>.json");
    md += "No trained models.\n";
  } else {
    md += "| model | C-index | IBS | epochs |\n|---|---|---|---|\n";
    for (const auto& path : metrics) {
      const auto doc = read_json(path);
      md += "| " + doc.value("model", std::string("?")) + " | " + fixed(doc.value("c_index", 0.0), 4) + " | " +
            fixed(doc.value("ibs", 0.0), 4) + " | " +
            std::to_string(doc.contains("metadata") ? doc["metadata"].value("epochs", std::size_t{0}) : 0) + " |\n";
    }
  }
  md += "\n## Explanations\n\n";
  if (attributions.empty() && svgs.empty()) {
    missing.emplace_back("explain/");
    md += "No explanations.\n";
  } else {
    for (const auto& path : attributions) {
      md += "- [" + path.filename().string() + "](explain/" + path.filename().string() + ")\n";
    }
    if (!svgs.empty()) md += "\n";
    for (const auto& path : svgs) {
      const auto name = path.filename().string();
      md += "![" + path.stem().string() + "](explain/" + name + ")\n";
    }
  }
  md += "\n## Benchmark\n\n";
  if (!has_bench) {
    missing.emplace_back("benchmark_summary.json");
    md += "No benchmark results.\n";
  } else {
    // Median runtimes from the timing CSV, one line per (method, p, budget).
    std::map<std::tuple<std::size_t, std::string, std::size_t>, std::string> medians;
    if (std::ifstream in(dir / "benchmark_runtime.csv"); in) {
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != 6) continue;
        medians[{std::stoul(f[1]), f[0], std::stoul(f[2])}] = f[5];
      }
    }
    const auto summary = read_json(dir / "benchmark_summary.json");
    md += "| p | method | budget | median seconds | mean local accuracy |\n|---|---|---|---|---|\n";
    std::vector<nlohmann::json> rows(summary.begin(), summary.end());
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return std::tuple(a["p"].template get<std::size_t>(), a["method"].template get<std::string>(),
                        a["budget"].template get<std::size_t>()) <
             std::tuple(b["p"].template get<std::size_t>(), b["method"].template get<std::string>(),
                        b["budget"].template get<std::size_t>());
    });
    for (const auto& row : rows) {
      const std::tuple key{row["p"].get<std::size_t>(), row["method"].get<std::string>(),
                           row["budget"].get<std::size_t>()};
      const auto it = medians.find(key);
      md += "| " + std::to_string(std::get<0>(key)) + " | " + std::get<1>(key) + " | " +
            std::to_string(std::get<2>(key)) + " | " +
            (it == medians.end() ? std::string("n/a") : fixed(std::stod(it->second), 4)) + " | " +
            fixed(row["mean_local_accuracy"].get<double>(), 4) + " |\n";
    }
    md += "\nRaw data: [benchmark_runtime.csv](benchmark_runtime.csv), "
          "[benchmark_local_accuracy.csv](benchmark_local_accuracy.csv)\n";
  }
  if (!missing.empty()) {
    md += "\n## Missing artifacts\n\n";
    for (const auto& m : missing) md += "- " + m + "\n";
  }
  return md;
}

void cmd_report(const ExperimentConfig& cfg, std::ostream& log) {
  const std::string md = build_report(cfg.out);
  if (std::filesystem::is_directory(cfg.out)) {
    write_text(md, cfg.out / "report.md");
    log << "report: " << (cfg.out / "report.md").string() << "\n";
  } else {
    log << md;
  }
}

}  // namespace survgrad
