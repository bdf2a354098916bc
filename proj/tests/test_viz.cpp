#include <cmath>
#include <map>
#include <regex>
#include <vector>

#include "doctest.h"
#include "survgrad/error.hpp"
#include "survgrad/viz.hpp"
#include "test_support.hpp"

using namespace survgrad;
using namespace survgrad::testing;

namespace {

// Single-instance attribution with values f(j, k); reference curves make it complete.
template <class F>
Attribution make_attr(std::size_t p, std::size_t T, F f, bool with_ref = true) {
  Attribution a;
  a.grid = linear_grid(1.0, static_cast<double>(T), T);
  a.values = Tensor3(1, p, T);
  a.method = with_ref ? "intgrad" : "grad";
  a.pred = Matrix(1, T, 0.5);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < T; ++k) a.values(0, j, k) = f(j, k);
  }
  if (with_ref) {
    a.pred_ref = Matrix(1, T);
    a.pred_diff = Matrix(1, T);
    for (std::size_t k = 0; k < T; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += a.values(0, j, k);
      a.pred_diff(0, k) = s;
      a.pred_ref(0, k) = 0.5 - s;
    }
    a.reference.kind = ReferenceKind::custom;
  }
  for (std::size_t j = 0; j < p; ++j) a.feature_names.push_back("x" + std::to_string(j + 1));
  a.instance_ids = {0};
  return a;
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

// Start/end/self-closing tags balance and nest; comments and the prolog are skipped.
bool well_formed(const std::string& doc) {
  std::vector<std::string> stack;
  std::size_t pos = 0;
  bool saw_root = false;
  while ((pos = doc.find('<', pos)) != std::string::npos) {
    if (doc.compare(pos, 4, "<!--") == 0) {
      pos = doc.find("-->", pos);
      if (pos == std::string::npos) return false;
      continue;
    }
    const auto end = doc.find('>', pos);
    if (end == std::string::npos) return false;
    const std::string tag = doc.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
      continue;
    }
    const std::string name = tag.substr(0, tag.find_first_of(" \n/"));
    if (stack.empty()) {
      if (saw_root) return false;
      saw_root = true;
    }
    if (tag.back() != '/') stack.push_back(name);
  }
  return saw_root && stack.empty();
}

std::vector<std::string> attribute_values(const std::string& doc, const std::string& element_prefix,
                                          const std::string& attr) {
  std::vector<std::string> out;
  const std::regex re(element_prefix + "[^>]*?" + attr + "=\"([^\"]*)\"");
  for (auto it = std::sregex_iterator(doc.begin(), doc.end(), re); it != std::sregex_iterator(); ++it) {
    out.push_back((*it)[1]);
  }
  return out;
}

// (x, y) pairs of an SVG path "M x y L x y ... [Z]".
std::vector<std::pair<double, double>> path_points(const std::string& d) {
  std::vector<std::pair<double, double>> pts;
  const std::regex re("[ML]([-0-9.]+) ([-0-9.]+)");
  for (auto it = std::sregex_iterator(d.begin(), d.end(), re); it != std::sregex_iterator(); ++it) {
    pts.emplace_back(std::stod((*it)[1]), std::stod((*it)[2]));
  }
  return pts;
}

std::vector<std::string> feature_paths(const std::string& doc, const std::string& cls) {
  return attribute_values(doc, "<path class=\"" + cls + "\"", " d");
}

}  // namespace

TEST_CASE("relevance curves: one horizontal path per constant feature") {
  const Attribution a = make_attr(3, 20, [](std::size_t j, std::size_t) { return 0.1 * double(j) - 0.05; });
  PlotSpec spec;
  const std::string svg = render_relevance_curves(spec, a);
  CHECK(well_formed(svg));
  CHECK(svg.find("href") == std::string::npos);
  const auto paths = feature_paths(svg, "feature-curve");
  REQUIRE(paths.size() == 3);
  for (const auto& d : paths) {
    const auto pts = path_points(d);
    REQUIRE(pts.size() == 20);
    for (const auto& [x, y] : pts) CHECK(y == pts.front().second);
  }
  CHECK(attribute_values(svg, "<path class=\"feature-curve\"", "data-feature") ==
        std::vector<std::string>{"x1", "x2", "x3"});
  CHECK(attribute_values(svg, "<polyline class=\"overlay\"", "data-series") ==
        std::vector<std::string>{"pred", "pred_ref", "pred_diff"});
  spec.overlay_predictions = false;
  CHECK(count(render_relevance_curves(spec, a), "class=\"overlay\"") == 0);
  spec.instance_id = 5;
  CHECK_THROWS_AS(render_relevance_curves(spec, a), ConfigError);
}

TEST_CASE("relevance curves without reference curves overlay only the prediction") {
  const Attribution a = make_attr(2, 5, [](std::size_t j, std::size_t k) { return double(j) * double(k); }, false);
  const std::string svg = render_relevance_curves(PlotSpec{}, a);
  CHECK(well_formed(svg));
  CHECK(attribute_values(svg, "<polyline class=\"overlay\"", "data-series") == std::vector<std::string>{"pred"});
}

TEST_CASE("contribution plot: equal contributions split the unit interval") {
  const Attribution a = make_attr(2, 8, [](std::size_t j, std::size_t) { return j == 0 ? 0.3 : -0.3; });
  const std::string svg = render_contribution_plot(PlotSpec{}, a);
  CHECK(well_formed(svg));
  const auto bands = feature_paths(svg, "band");
  REQUIRE(bands.size() == 2);
  const auto b0 = path_points(bands[0]), b1 = path_points(bands[1]);
  REQUIRE(b0.size() == 16);
  const double y0 = b0.back().second, y_half = b0.front().second, y1 = b1.front().second;
  CHECK(b1.back().second == y_half);
  CHECK(std::abs(y_half - 0.5 * (y0 + y1)) < 0.01);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(b0[k].second == y_half);
    CHECK(b1[k].second == y1);
  }
}

TEST_CASE("contribution plot: bands stack to one and the side bar follows the averaged importance") {
  const Matrix random = random_matrix(4, 15, 3);
  const Attribution a = make_attr(4, 15, [&](std::size_t j, std::size_t k) { return random(j, k); });
  const std::string svg = render_contribution_plot(PlotSpec{}, a);
  const auto bands = feature_paths(svg, "band");
  REQUIRE(bands.size() == 4);
  // The last band's upper edge is the line y = 1 at every time point.
  const auto top = path_points(bands.back());
  for (std::size_t k = 0; k < 15; ++k) CHECK(top[k].second == top.front().second);

  const Matrix imp = time_averaged_importance(a);
  const auto bar = attribute_values(svg, "<rect class=\"importance\"", "data-value");
  REQUIRE(bar.size() == 4);
  double total = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(std::stod(bar[j]) == doctest::Approx(imp(0, j)).epsilon(1e-5));
    total += imp(0, j);
  }
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("force plot: ten default slots at equidistant times") {
  const TimeGrid grid = linear_grid(0.0, 7.0, 50);
  const auto slots = force_slots(grid, 10);
  REQUIRE(slots.size() == 10);
  CHECK(slots.front() == 0);
  CHECK(slots.back() == 49);
  for (std::size_t s = 0; s < 10; ++s) {
    CHECK(std::abs(grid[slots[s]] - 7.0 * double(s) / 9.0) <= 7.0 / 49.0 / 2.0 + 1e-12);
  }
  CHECK_THROWS_AS(force_slots(grid, 1), ConfigError);

  const Attribution a = make_attr(3, 50, [](std::size_t j, std::size_t k) { return 0.01 * double(j + 1) * double(k); });
  const std::string svg = render_force_plot(PlotSpec{}, a);
  CHECK(well_formed(svg));
  CHECK(count(svg, "<g class=\"slot\"") == 10);
  CHECK(count(svg, "<polyline class=\"pred-diff\"") == 1);
}

TEST_CASE("force plot: positive contributions point up and totals match the difference") {
  const Attribution pos = make_attr(3, 12, [](std::size_t j, std::size_t k) { return 0.05 * double(j + 1) + 0.01 * double(k); });
  const std::string up = render_force_plot(PlotSpec{}, pos);
  CHECK(count(up, "class=\"arrow up\"") == 3 * 10);
  CHECK(count(up, "class=\"arrow down\"") == 0);
  const Attribution neg = make_attr(2, 12, [](std::size_t, std::size_t) { return -0.2; });
  CHECK(count(render_force_plot(PlotSpec{}, neg), "class=\"arrow up\"") == 0);

  // Integrated gradients at 128 steps: bar totals equal pred_diff to label precision.
  const FittedModel oracle(three_feature_oracle());
  const Attribution ig = intgrad_t(oracle, random_matrix(1, 3, 8), linear_grid(0.5, 6.5, 40),
                                   zeros_baseline(3), 128, ReferenceKind::zeros);
  const std::string svg = render_force_plot(PlotSpec{}, ig);
  const auto totals = attribute_values(svg, "<g class=\"slot\"", "data-total");
  const auto diffs = attribute_values(svg, "<g class=\"slot\"", "data-pred-diff");
  REQUIRE(totals.size() == 10);
  for (std::size_t s = 0; s < 10; ++s) CHECK(std::abs(std::stod(totals[s]) - std::stod(diffs[s])) <= 0.0015);
}

TEST_CASE("force plot: sub-pixel bars aggregate into an other marker") {
  const Attribution a = make_attr(6, 10, [](std::size_t j, std::size_t) { return j == 0 ? 1.0 : 1e-6; });
  const std::string svg = render_force_plot(PlotSpec{}, a);
  CHECK(well_formed(svg));
  CHECK(count(svg, "class=\"other-marker\"") == 10);
  CHECK(count(svg, "data-feature=\"x3\"") == 0);
  const Attribution b = make_attr(40, 10, [](std::size_t j, std::size_t) { return j == 0 ? 1.0 : 1e-3; });
  CHECK(count(render_force_plot(PlotSpec{}, b), "class=\"segment other\"") == 10);
}

TEST_CASE("force plot without reference curves is a configuration error") {
  const Attribution a = make_attr(2, 5, [](std::size_t, std::size_t) { return 0.1; }, false);
  PlotSpec spec;
  spec.kind = PlotKind::force;
  CHECK_THROWS_AS(render_plot(spec, a), ConfigError);
  spec.kind = PlotKind::contribution;
  CHECK(render_plot(spec, a) == render_contribution_plot(spec, a));
}

TEST_CASE("plot specs and kinds are validated") {
  PlotSpec spec;
  spec.force_points = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = PlotSpec{};
  spec.style.palette.clear();
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK(parse_plot_kind("relevance") == PlotKind::relevance_curves);
  CHECK(parse_plot_kind("force") == PlotKind::force);
  CHECK(to_string(PlotKind::contribution) == "contribution");
  CHECK_THROWS_AS(parse_plot_kind("pie"), ConfigError);
}

TEST_CASE("rendering and export are deterministic") {
  const Matrix random = random_matrix(3, 30, 4);
  const Attribution a = make_attr(3, 30, [&](std::size_t j, std::size_t k) { return random(j, k); });
  for (PlotKind kind : {PlotKind::relevance_curves, PlotKind::contribution, PlotKind::force}) {
    PlotSpec spec;
    spec.kind = kind;
    CHECK(render_plot(spec, a) == render_plot(spec, a));
  }
  TempDir d1("viz1"), d2("viz2");
  const auto f1 = export_plot_data(a, d1.path());
  const auto f2 = export_plot_data(a, d2.path());
  CHECK(read_file(f1.relevance) == read_file(f2.relevance));
  CHECK(read_file(f1.contribution) == read_file(f2.contribution));
  CHECK(read_file(f1.force) == read_file(f2.force));
}

TEST_CASE("plot data export round trips and keeps its schema") {
  const FittedModel oracle(three_feature_oracle());
  const Matrix X = random_matrix(3, 3, 5);
  Attribution a = gradshap_t(oracle, X, linear_grid(0.5, 6.5, 17), random_matrix(8, 3, 6), GradShapConfig{});
  a.instance_ids = {4, 9, 12};
  TempDir dir("vizexp");
  const PlotDataFiles files = export_plot_data(a, dir.path(), "gs", 5);
  const Attribution back = read_relevance_csv(files.relevance);
  CHECK(max_abs_difference(back.values.values(), a.values.values()) <= 1e-12);
  CHECK(max_abs_difference(back.pred_diff.values(), a.pred_diff.values()) <= 1e-12);
  CHECK(back.instance_ids == a.instance_ids);
  CHECK(back.feature_names == a.feature_names);
  CHECK(back.grid == a.grid);

  const std::string rel = read_file(files.relevance);
  CHECK(rel.rfind("# survgrad.plotdata/relevance v1 method=gradshap\ninstance,feature,time,value,pred,pred_ref,pred_diff\n", 0) == 0);
  CHECK(read_file(files.contribution).find("\ninstance,feature,time,normalized,lower,upper,importance\n") != std::string::npos);
  const std::string force = read_file(files.force);
  CHECK(force.find("\ninstance,slot,time,feature,value,pred_diff\n") != std::string::npos);
  CHECK(count(force, "\n") == 2 + 3 * 5 * 3);

  const Attribution no_ref = grad_t(oracle, X, linear_grid(0.5, 6.5, 4));
  CHECK(export_plot_data(no_ref, dir.path(), "g").force.empty());
}

TEST_CASE("an empty attribution exports header-only files") {
  Attribution a;
  a.grid = linear_grid(1.0, 2.0, 3);
  a.values = Tensor3(0, 2, 3);
  a.pred = Matrix(0, 3);
  a.method = "grad";
  a.feature_names = {"x1", "x2"};
  TempDir dir("vizempty");
  const PlotDataFiles files = export_plot_data(a, dir.path());
  CHECK(read_file(files.relevance) ==
        "# survgrad.plotdata/relevance v1 method=grad\ninstance,feature,time,value,pred,pred_ref,pred_diff\n");
  CHECK(count(read_file(files.contribution), "\n") == 2);
}

TEST_CASE("gradient times input flips the sign of a feature with a negative input") {
  // Time-independent design: x1 lowers survival, x2 raises it.
  const SurvivalDataset data = small_dataset(3000, 21);
  const FittedModel model = fit_deepsurv(data, quick_train_config(30));
  const TimeGrid grid = linear_grid(0.5, 6.5, 25);
  const Matrix X = Matrix::from_rows({{-0.8, -0.7, 0.1}});
  const Attribution gi = gradxinput_t(model, X, grid);
  const Attribution g = grad_t(model, X, grid);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(g.values(0, 0, k) < 0.0);
    CHECK(g.values(0, 1, k) > 0.0);
    CHECK(gi.values(0, 0, k) >= 0.0);
    CHECK(gi.values(0, 1, k) <= 0.0);
  }
  const std::string svg = render_relevance_curves(PlotSpec{}, gi);
  CHECK(count(svg, "<path class=\"feature-curve\"") == 3);
}

TEST_CASE("svg writes surface io failures") {
  CHECK_THROWS_AS(write_svg("<svg/>", "/nonexistent_dir_for_survgrad/x.svg"), IoError);
}
