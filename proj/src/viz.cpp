#include "survgrad/viz.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "survgrad/error.hpp"

namespace survgrad {

namespace {

constexpr double kMarginLeft = 64.0;
constexpr double kMarginRight = 160.0;
constexpr double kMarginTop = 40.0;
constexpr double kMarginBottom = 48.0;
constexpr double kPanelGap = 36.0;
constexpr const char* kOtherColor = "#9e9e9e";

// Fixed-point text with no negative zero.
std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

std::string px(double v) { return fixed(v, 2); }

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape_xml(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

const std::string& color_for(const PlotStyle& style, std::size_t j) {
  return style.palette[j % style.palette.size()];
}

// Round step of 1, 2 or 5 times a power of ten giving about `target` ticks.
std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
  const double range = hi - lo;
  if (!(range > 0.0)) return {lo};
  const double raw = range / target;
  const double magnitude = std::pow(10.0, std::floor(std::log10(raw)));
  const double fraction = raw / magnitude;
  const double step = (fraction < 1.5 ? 1.0 : fraction < 3.5 ? 2.0 : fraction < 7.5 ? 5.0 : 10.0) * magnitude;
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step - 1e-9) * step; t <= hi + step * 1e-9; t += step) {
    ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
  }
  return ticks;
}

struct Range {
  double lo = 0.0, hi = 0.0;

  void include(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  // Padded by 5% on both sides; degenerate ranges widen to +-1.
  Range padded() const {
    if (!(hi > lo)) return {lo - 1.0, hi + 1.0};
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
  }
};

struct Frame {
  double left, top, width, height;
  double x0, x1;
  Range y;

  double x(double v) const { return x1 > x0 ? left + (v - x0) / (x1 - x0) * width : left + width / 2; }
  double yv(double v) const { return top + (y.hi - v) / (y.hi - y.lo) * height; }
  double bottom() const { return top + height; }
  double right() const { return left + width; }
};

void open_document(std::string& out, const PlotStyle& style, std::string_view kind) {
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + px(style.width) +
         "\" height=\"" + px(style.height) + "\" viewBox=\"0 0 " + px(style.width) + " " +
         px(style.height) + "\" font-family=\"sans-serif\" font-size=\"" + px(style.font_size) +
         "\" data-kind=\"" + std::string(kind) + "\">\n";
  out += "<rect x=\"0\" y=\"0\" width=\"" + px(style.width) + "\" height=\"" + px(style.height) +
         "\" fill=\"#ffffff\"/>\n";
}

void close_document(std::string& out) { out += "</svg>\n"; }

void text(std::string& out, double x, double y, std::string_view anchor, std::string_view body,
          std::string_view extra = {}) {
  out += "<text x=\"" + px(x) + "\" y=\"" + px(y) + "\" text-anchor=\"" + std::string(anchor) + "\"";
  if (!extra.empty()) out += " " + std::string(extra);
  out += ">" + escape_xml(body) + "</text>\n";
}

void line(std::string& out, double x1, double y1, double x2, double y2, std::string_view cls,
          std::string_view stroke, std::string_view extra = {}) {
  out += "<line class=\"" + std::string(cls) + "\" x1=\"" + px(x1) + "\" y1=\"" + px(y1) +
         "\" x2=\"" + px(x2) + "\" y2=\"" + px(y2) + "\" stroke=\"" + std::string(stroke) + "\"";
  if (!extra.empty()) out += " " + std::string(extra);
  out += "/>\n";
}

void axes(std::string& out, const Frame& f, const PlotStyle& style, std::string_view ylabel,
          bool x_labels = true) {
  line(out, f.left, f.bottom(), f.right(), f.bottom(), "axis", "#333333");
  line(out, f.left, f.top, f.left, f.bottom(), "axis", "#333333");
  for (double t : nice_ticks(f.y.lo, f.y.hi)) {
    const double y = f.yv(t);
    line(out, f.left - 4, y, f.left, y, "tick", "#333333");
    text(out, f.left - 7, y + style.font_size / 3, "end", short_number(t));
  }
  if (x_labels) {
    for (double t : nice_ticks(f.x0, f.x1)) {
      const double x = f.x(t);
      line(out, x, f.bottom(), x, f.bottom() + 4, "tick", "#333333");
      text(out, x, f.bottom() + 6 + style.font_size, "middle", short_number(t));
    }
  }
  const double cy = f.top + f.height / 2;
  text(out, 16, cy, "middle", ylabel, "transform=\"rotate(-90 16 " + px(cy) + ")\"");
}

void zero_line(std::string& out, const Frame& f) {
  if (f.y.lo <= 0.0 && f.y.hi >= 0.0) {
    line(out, f.left, f.yv(0.0), f.right(), f.yv(0.0), "zero-line", "#777777",
         "stroke-dasharray=\"4 3\"");
  }
}

void legend_entry(std::string& out, const PlotStyle& style, double x, double y, const std::string& color,
                  std::string_view label) {
  out += "<rect class=\"legend-swatch\" x=\"" + px(x) + "\" y=\"" + px(y - style.font_size + 2) +
         "\" width=\"12\" height=\"" + px(style.font_size - 2) + "\" fill=\"" + color + "\"/>\n";
  text(out, x + 18, y, "start", label);
}

std::string default_title(const PlotSpec& spec, const Attribution& attr, std::string_view what) {
  if (!spec.title.empty()) return spec.title;
  return std::string(what) + ": " + attr.method + ", instance " + std::to_string(spec.instance_id);
}

std::size_t prepare(const PlotSpec& spec, const Attribution& attr) {
  spec.validate();
  attr.validate();
  if (attr.times() == 0) throw ConfigError("cannot plot an attribution with an empty time grid");
  return attr.locate(spec.instance_id);
}

// Normalized contributions of one instance, p x T; all-zero slices become
// uniform without a warning.
Matrix instance_normalized(const Attribution& attr, std::size_t row) {
  Tensor3 one(1, attr.features(), attr.times());
  one.set_slab(0, attr.instance(row));
  return normalized_contributions(one, false).slab_matrix(0);
}

std::string polyline_points(const Frame& f, std::span<const double> xs, std::span<const double> ys) {
  std::string pts;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (k > 0) pts += ' ';
    pts += px(f.x(xs[k])) + "," + px(f.yv(ys[k]));
  }
  return pts;
}

void check_csv_name(const std::string& name) {
  if (name.find_first_of(",\n\r") != std::string::npos) {
    throw ConfigError("feature name '" + name + "' cannot be written to CSV");
  }
}

void write_text(const std::string& body, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << body;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_field(const std::string& s, const std::filesystem::path& path, std::size_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError("'" + path.string() + "' line " + std::to_string(line_no) + ": cannot parse '" + s + "'");
  }
  return v;
}

}  // namespace

std::string_view to_string(PlotKind kind) {
  switch (kind) {
    case PlotKind::relevance_curves: return "relevance_curves";
    case PlotKind::contribution: return "contribution";
    case PlotKind::force: return "force";
  }
  return "unknown";
}

PlotKind parse_plot_kind(std::string_view name) {
  if (name == "relevance_curves" || name == "relevance") return PlotKind::relevance_curves;
  if (name == "contribution") return PlotKind::contribution;
  if (name == "force") return PlotKind::force;
  throw ConfigError("unknown plot kind '" + std::string(name) +
                    "' (expected relevance_curves, contribution or force)");
}

const std::vector<std::string>& default_palette() {
  static const std::vector<std::string> palette{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                                "#bcbd22", "#17becf"};
  return palette;
}

void PlotSpec::validate() const {
  if (force_points < 2) throw ConfigError("force_points must be at least 2");
  if (style.palette.empty()) throw ConfigError("plot palette must not be empty");
  if (!(style.width > kMarginLeft + kMarginRight + 40.0) ||
      !(style.height > kMarginTop + kMarginBottom + 2 * kPanelGap + 40.0)) {
    throw ConfigError("plot size is too small");
  }
  if (!(style.font_size > 0.0)) throw ConfigError("font size must be positive");
}

std::vector<std::size_t> force_slots(const TimeGrid& grid, std::size_t count) {
  if (count < 2) throw ConfigError("force_points must be at least 2");
  if (grid.size() == 0) throw ConfigError("force slots need a nonempty grid");
  const auto pts = grid.points();
  std::vector<std::size_t> slots;
  slots.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const double target = grid.front() + (grid.back() - grid.front()) * static_cast<double>(s) /
                                              static_cast<double>(count - 1);
    auto it = std::lower_bound(pts.begin(), pts.end(), target);
    std::size_t k = static_cast<std::size_t>(it - pts.begin());
    if (k == pts.size()) {
      k = pts.size() - 1;
    } else if (k > 0 && target - pts[k - 1] <= pts[k] - target) {
      --k;
    }
    slots.push_back(k);
  }
  return slots;
}

std::string render_relevance_curves(const PlotSpec& spec, const Attribution& attr) {
  const std::size_t row = prepare(spec, attr);
  const PlotStyle& style = spec.style;
  const std::size_t p = attr.features(), T = attr.times();
  const auto times = attr.grid.points();
  const Matrix R = attr.instance(row);
  const bool overlay = spec.overlay_predictions && !attr.pred.empty();

  const double plot_w = style.width - kMarginLeft - kMarginRight;
  const double avail = style.height - kMarginTop - kMarginBottom;
  const double main_h = overlay ? (avail - kPanelGap) * 0.65 : avail;

  Range yr;
  for (double v : R.values()) yr.include(v);
  Frame f{kMarginLeft, kMarginTop, plot_w, main_h, attr.grid.front(), attr.grid.back(), yr.padded()};

  std::string out;
  open_document(out, style, "relevance_curves");
  text(out, style.width / 2 - kMarginRight / 2 + kMarginLeft / 2, 22, "middle",
       default_title(spec, attr, "Relevance"), "font-weight=\"bold\"");
  axes(out, f, style, "relevance", !overlay);
  zero_line(out, f);
  std::vector<double> ys(T);
  for (std::size_t j = 0; j < p; ++j) {
    std::string d;
    for (std::size_t k = 0; k < T; ++k) {
      d += (k == 0 ? "M" : " L") + px(f.x(times[k])) + " " + px(f.yv(R(j, k)));
    }
    out += "<path class=\"feature-curve\" data-feature=\"" + escape_xml(attr.feature_names[j]) +
           "\" fill=\"none\" stroke=\"" + color_for(style, j) + "\" stroke-width=\"2\" d=\"" + d +
           "\"/>\n";
  }
  double ly = kMarginTop + style.font_size;
  const double lx = f.right() + 16;
  for (std::size_t j = 0; j < p; ++j) {
    legend_entry(out, style, lx, ly, color_for(style, j), attr.feature_names[j]);
    ly += style.font_size + 6;
  }

  if (overlay) {
    Range pr;
    auto pred = attr.pred.row(row);
    for (double v : pred) pr.include(v);
    if (attr.has_reference()) {
      for (double v : attr.pred_ref.row(row)) pr.include(v);
      for (double v : attr.pred_diff.row(row)) pr.include(v);
    }
    Frame g{kMarginLeft, f.bottom() + kPanelGap, plot_w, avail - kPanelGap - main_h, f.x0, f.x1,
            pr.padded()};
    axes(out, g, style, "prediction");
    zero_line(out, g);
    struct Series {
      const char* name;
      std::span<const double> values;
      const char* stroke;
      const char* dash;
    };
    std::vector<Series> series{{"pred", pred, "#1f3b73", ""}};
    if (attr.has_reference()) {
      series.push_back({"pred_ref", attr.pred_ref.row(row), "#1f3b73", " stroke-dasharray=\"6 4\""});
      series.push_back({"pred_diff", attr.pred_diff.row(row), "#000000", ""});
    }
    double sy = g.top + style.font_size;
    for (const auto& s : series) {
      out += "<polyline class=\"overlay\" data-series=\"" + std::string(s.name) +
             "\" fill=\"none\" stroke=\"" + s.stroke + "\" stroke-width=\"1.5\"" + s.dash +
             " points=\"" + polyline_points(g, times, s.values) + "\"/>\n";
      line(out, lx, sy - style.font_size / 3, lx + 12, sy - style.font_size / 3, "legend-line",
           s.stroke, std::string("stroke-width=\"1.5\"") + s.dash);
      text(out, lx + 18, sy, "start", s.name);
      sy += style.font_size + 6;
    }
  }
  text(out, kMarginLeft + plot_w / 2, style.height - 10, "middle", "time");
  close_document(out);
  return out;
}

std::string render_contribution_plot(const PlotSpec& spec, const Attribution& attr) {
  const std::size_t row = prepare(spec, attr);
  const PlotStyle& style = spec.style;
  const std::size_t p = attr.features(), T = attr.times();
  const auto times = attr.grid.points();
  const Matrix norm = instance_normalized(attr, row);
  std::vector<double> importance(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < T; ++k) importance[j] += norm(j, k);
    importance[j] /= static_cast<double>(T);
  }

  const double bar_w = 28.0;
  const double plot_w = style.width - kMarginLeft - kMarginRight - bar_w - 24.0;
  Frame f{kMarginLeft, kMarginTop, plot_w, style.height - kMarginTop - kMarginBottom,
          attr.grid.front(), attr.grid.back(), Range{0.0, 1.0}};

  std::string out;
  open_document(out, style, "contribution");
  text(out, kMarginLeft + (style.width - kMarginLeft - kMarginRight) / 2, 22, "middle",
       default_title(spec, attr, "Contribution"), "font-weight=\"bold\"");
  axes(out, f, style, "normalized contribution");

  // Bands in fixed feature order: band j spans [sum_{l<j}, sum_{l<=j}].
  std::vector<double> lower(T, 0.0), upper(T, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < T; ++k) upper[k] = lower[k] + norm(j, k);
    std::string d;
    for (std::size_t k = 0; k < T; ++k) {
      d += (k == 0 ? "M" : " L") + px(f.x(times[k])) + " " + px(f.yv(upper[k]));
    }
    if (T == 1) d += " L" + px(f.right()) + " " + px(f.yv(upper[0]));
    if (T == 1) d += " L" + px(f.right()) + " " + px(f.yv(lower[0]));
    for (std::size_t k = T; k-- > 0;) d += " L" + px(f.x(times[k])) + " " + px(f.yv(lower[k]));
    d += " Z";
    out += "<path class=\"band\" data-feature=\"" + escape_xml(attr.feature_names[j]) + "\" fill=\"" +
           color_for(style, j) + "\" fill-opacity=\"0.85\" stroke=\"none\" d=\"" + d + "\"/>\n";
    lower = upper;
  }

  // Time-averaged importance as a stacked bar in the same order.
  const double bx = f.right() + 16.0;
  double acc = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    const double y_top = f.yv(acc + importance[j]);
    const double y_bot = f.yv(acc);
    out += "<rect class=\"importance\" data-feature=\"" + escape_xml(attr.feature_names[j]) +
           "\" data-value=\"" + fixed(importance[j], 6) + "\" x=\"" + px(bx) + "\" y=\"" + px(y_top) +
           "\" width=\"" + px(bar_w) + "\" height=\"" + px(y_bot - y_top) + "\" fill=\"" +
           color_for(style, j) + "\"><title>" + escape_xml(attr.feature_names[j]) + ": " +
           fixed(importance[j], 3) + "</title></rect>\n";
    acc += importance[j];
  }
  text(out, bx + bar_w / 2, f.bottom() + 6 + style.font_size, "middle", "mean");

  double ly = kMarginTop + style.font_size;
  const double lx = bx + bar_w + 14;
  for (std::size_t j = 0; j < p; ++j) {
    legend_entry(out, style, lx, ly, color_for(style, j),
                 attr.feature_names[j] + " (" + fixed(100.0 * importance[j], 1) + "%)");
    ly += style.font_size + 6;
  }
  text(out, kMarginLeft + plot_w / 2, style.height - 10, "middle", "time");
  close_document(out);
  return out;
}

std::string render_force_plot(const PlotSpec& spec, const Attribution& attr) {
  if (!attr.has_reference()) {
    throw ConfigError("force plots need prediction-to-reference differences; method '" + attr.method +
                      "' has none (use intgrad or gradshap)");
  }
  const std::size_t row = prepare(spec, attr);
  const PlotStyle& style = spec.style;
  const std::size_t p = attr.features();
  const Matrix R = attr.instance(row);
  const auto diff = attr.pred_diff.row(row);
  const auto slots = force_slots(attr.grid, spec.force_points);
  const std::size_t F = slots.size();

  Range yr;
  for (std::size_t k : slots) {
    double pos = 0.0, neg = 0.0;
    for (std::size_t j = 0; j < p; ++j) (R(j, k) > 0.0 ? pos : neg) += R(j, k);
    yr.include(pos);
    yr.include(neg);
    yr.include(diff[k]);
  }
  const double plot_w = style.width - kMarginLeft - kMarginRight;
  Frame f{kMarginLeft, kMarginTop, plot_w, style.height - kMarginTop - kMarginBottom,
          -0.5, static_cast<double>(F) - 0.5, yr.padded()};
  const double unit = f.height / (f.y.hi - f.y.lo);  // pixels per unit of relevance
  const double bar_w = std::min(40.0, plot_w / static_cast<double>(F) * 0.6);

  std::string out;
  open_document(out, style, "force");
  text(out, style.width / 2 - kMarginRight / 2 + kMarginLeft / 2, 22, "middle",
       default_title(spec, attr, "Force"), "font-weight=\"bold\"");
  axes(out, f, style, "contribution to S(t|x) - S(t|ref)", false);
  zero_line(out, f);

  for (std::size_t s = 0; s < F; ++s) {
    const std::size_t k = slots[s];
    const double cx = f.x(static_cast<double>(s));
    const double x0 = cx - bar_w / 2;
    double total = 0.0;
    for (std::size_t j = 0; j < p; ++j) total += R(j, k);
    out += "<g class=\"slot\" data-time=\"" + exact(attr.grid[k]) + "\" data-total=\"" +
           fixed(total, 3) + "\" data-pred-diff=\"" + fixed(diff[k], 3) + "\">\n";
    line(out, cx, f.bottom(), cx, f.bottom() + 4, "tick", "#333333");
    text(out, cx, f.bottom() + 6 + style.font_size, "middle", short_number(attr.grid[k]));

    double other_pos = 0.0, other_neg = 0.0;
    std::size_t other_count = 0;
    double pos = 0.0, neg = 0.0;
    auto segment = [&](double value, double base, const std::string& cls, const std::string& name,
                       const std::string& color) {
      const bool up = value > 0.0;
      const double y_a = f.yv(base), y_b = f.yv(base + value);
      const double top = std::min(y_a, y_b), h = std::abs(y_b - y_a);
      const std::string label = fixed(value, 3);
      out += "<rect class=\"" + cls + "\" data-feature=\"" + escape_xml(name) + "\" data-value=\"" +
             label + "\" x=\"" + px(x0) + "\" y=\"" + px(top) + "\" width=\"" + px(bar_w) +
             "\" height=\"" + px(h) + "\" fill=\"" + color + "\" stroke=\"#ffffff\" stroke-width=\"0.5\"><title>" +
             escape_xml(name) + ": " + label + "</title></rect>\n";
      // Direction arrow at the outer end of the segment.
      const double ah = std::min(6.0, h);
      const double tip = up ? top : top + h;
      const double back = up ? tip + ah : tip - ah;
      out += "<path class=\"arrow " + std::string(up ? "up" : "down") + "\" data-feature=\"" +
             escape_xml(name) + "\" d=\"M" + px(x0 + 2) + " " + px(back) + " L" + px(cx) + " " +
             px(tip) + " L" + px(x0 + bar_w - 2) + " " + px(back) + " Z\" fill=\"#ffffff\" fill-opacity=\"0.8\"/>\n";
      if (h >= style.font_size + 2) {
        text(out, cx, top + h / 2 + style.font_size / 3, "middle", label,
             "class=\"value-label\" font-size=\"" + px(style.font_size * 0.8) + "\"");
      }
    };
    for (std::size_t j = 0; j < p; ++j) {
      const double v = R(j, k);
      if (v == 0.0) continue;
      if (std::abs(v) * unit < 1.0) {
        (v > 0.0 ? other_pos : other_neg) += v;
        ++other_count;
        continue;
      }
      double& base = v > 0.0 ? pos : neg;
      segment(v, base, "segment", attr.feature_names[j], color_for(style, j));
      base += v;
    }
    for (double v : {other_pos, other_neg}) {
      if (v == 0.0) continue;
      double& base = v > 0.0 ? pos : neg;
      if (std::abs(v) * unit >= 1.0) {
        segment(v, base, "segment other", "other", kOtherColor);
      } else {
        out += "<circle class=\"other-marker\" data-value=\"" + fixed(v, 3) + "\" cx=\"" + px(cx) +
               "\" cy=\"" + px(f.yv(base)) + "\" r=\"2.5\" fill=\"" + kOtherColor + "\"><title>other (" +
               std::to_string(other_count) + " features): " + fixed(v, 3) + "</title></circle>\n";
      }
      base += v;
    }
    out += "</g>\n";
  }

  std::string pts;
  for (std::size_t s = 0; s < F; ++s) {
    if (s > 0) pts += ' ';
    pts += px(f.x(static_cast<double>(s))) + "," + px(f.yv(diff[slots[s]]));
  }
  out += "<polyline class=\"pred-diff\" fill=\"none\" stroke=\"#000000\" stroke-width=\"2\" points=\"" +
         pts + "\"/>\n";
  for (std::size_t s = 0; s < F; ++s) {
    out += "<circle class=\"pred-diff-point\" cx=\"" + px(f.x(static_cast<double>(s))) + "\" cy=\"" +
           px(f.yv(diff[slots[s]])) + "\" r=\"3\" fill=\"#000000\"/>\n";
  }

  double ly = kMarginTop + style.font_size;
  const double lx = f.right() + 16;
  for (std::size_t j = 0; j < p; ++j) {
    legend_entry(out, style, lx, ly, color_for(style, j), attr.feature_names[j]);
    ly += style.font_size + 6;
  }
  legend_entry(out, style, lx, ly, kOtherColor, "other");
  ly += style.font_size + 6;
  line(out, lx, ly - style.font_size / 3, lx + 12, ly - style.font_size / 3, "legend-line", "#000000",
       "stroke-width=\"2\"");
  text(out, lx + 18, ly, "start", "pred_diff");
  text(out, kMarginLeft + plot_w / 2, style.height - 10, "middle", "time");
  close_document(out);
  return out;
}

std::string render_plot(const PlotSpec& spec, const Attribution& attr) {
  switch (spec.kind) {
    case PlotKind::relevance_curves: return render_relevance_curves(spec, attr);
    case PlotKind::contribution: return render_contribution_plot(spec, attr);
    case PlotKind::force: return render_force_plot(spec, attr);
  }
  throw ConfigError("unknown plot kind");
}

void write_svg(const std::string& document, const std::filesystem::path& path) {
  write_text(document, path);
}

PlotDataFiles export_plot_data(const Attribution& attr, const std::filesystem::path& dir,
                               std::string_view stem, std::size_t force_points) {
  attr.validate();
  for (const auto& name : attr.feature_names) check_csv_name(name);
  check_csv_name(attr.method);
  const std::size_t n = attr.instances(), p = attr.features(), T = attr.times();
  const bool ref = attr.has_reference();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  PlotDataFiles files;
  const std::string base(stem);
  files.relevance = dir / (base + "_relevance.csv");
  files.contribution = dir / (base + "_contribution.csv");

  std::string rel = "# survgrad.plotdata/relevance v1 method=" + attr.method + "\n";
  rel += "instance,feature,time,value,pred,pred_ref,pred_diff\n";
  for (std::size_t i = 0; i < n; ++i) {
    const std::string inst = std::to_string(attr.instance_ids[i]);
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t k = 0; k < T; ++k) {
        rel += inst + "," + attr.feature_names[j] + "," + exact(attr.grid[k]) + "," +
               exact(attr.values(i, j, k)) + "," + exact(attr.pred(i, k)) + ",";
        if (ref) rel += exact(attr.pred_ref(i, k)) + "," + exact(attr.pred_diff(i, k));
        else rel += ",";
        rel += "\n";
      }
    }
  }
  write_text(rel, files.relevance);

  const Tensor3 norm = normalized_contributions(attr.values, false);
  const Matrix importance = time_averaged_importance(norm);
  std::string con = "# survgrad.plotdata/contribution v1 method=" + attr.method + "\n";
  con += "instance,feature,time,normalized,lower,upper,importance\n";
  for (std::size_t i = 0; i < n; ++i) {
    const std::string inst = std::to_string(attr.instance_ids[i]);
    std::vector<double> lower(T, 0.0);
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t k = 0; k < T; ++k) {
        const double upper = lower[k] + norm(i, j, k);
        con += inst + "," + attr.feature_names[j] + "," + exact(attr.grid[k]) + "," +
               exact(norm(i, j, k)) + "," + exact(lower[k]) + "," + exact(upper) + "," +
               exact(importance(i, j)) + "\n";
        lower[k] = upper;
      }
    }
  }
  write_text(con, files.contribution);

  if (ref) {
    files.force = dir / (base + "_force.csv");
    std::string frc = "# survgrad.plotdata/force v1 method=" + attr.method + "\n";
    frc += "instance,slot,time,feature,value,pred_diff\n";
    if (T > 0) {
      const auto slots = force_slots(attr.grid, force_points);
      for (std::size_t i = 0; i < n; ++i) {
        const std::string inst = std::to_string(attr.instance_ids[i]);
        for (std::size_t s = 0; s < slots.size(); ++s) {
          const std::size_t k = slots[s];
          for (std::size_t j = 0; j < p; ++j) {
            frc += inst + "," + std::to_string(s) + "," + exact(attr.grid[k]) + "," +
                   attr.feature_names[j] + "," + exact(attr.values(i, j, k)) + "," +
                   exact(attr.pred_diff(i, k)) + "\n";
          }
        }
      }
    }
    write_text(frc, files.force);
  }
  return files;
}

Attribution read_relevance_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  Attribution attr;
  bool header = false;

  struct Cell {
    double value, pred, pred_ref, pred_diff;
    bool has_ref;
  };
  std::vector<std::size_t> ids;
  std::vector<std::string> names;
  std::vector<double> times;
  std::map<std::size_t, std::size_t> id_index;
  std::map<std::string, std::size_t> name_index;
  std::map<double, std::size_t> time_index;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, Cell> cells;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto pos = line.find("method=");
      if (pos != std::string::npos) attr.method = line.substr(pos + 7);
      continue;
    }
    if (!header) {
      if (line != "instance,feature,time,value,pred,pred_ref,pred_diff") {
        throw IoError("'" + path.string() + "' is not a relevance plot-data file");
      }
      header = true;
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() != 7) {
      throw IoError("'" + path.string() + "' line " + std::to_string(line_no) + ": expected 7 fields");
    }
    const auto id = static_cast<std::size_t>(parse_field(f[0], path, line_no));
    const double t = parse_field(f[2], path, line_no);
    auto [ii, new_id] = id_index.try_emplace(id, ids.size());
    if (new_id) ids.push_back(id);
    auto [jj, new_name] = name_index.try_emplace(f[1], names.size());
    if (new_name) names.push_back(f[1]);
    auto [kk, new_time] = time_index.try_emplace(t, times.size());
    if (new_time) times.push_back(t);
    const bool has_ref = !f[5].empty();
    Cell c{parse_field(f[3], path, line_no), parse_field(f[4], path, line_no),
           has_ref ? parse_field(f[5], path, line_no) : 0.0,
           has_ref ? parse_field(f[6], path, line_no) : 0.0, has_ref};
    cells[{ii->second, jj->second, kk->second}] = c;
  }
  if (!header) throw IoError("'" + path.string() + "' has no header");

  const std::size_t n = ids.size(), p = names.size(), T = times.size();
  if (cells.size() != n * p * T) throw IoError("'" + path.string() + "' does not hold a full tensor");
  attr.values = Tensor3(n, p, T);
  attr.pred = Matrix(n, T);
  const bool has_ref = !cells.empty() && cells.begin()->second.has_ref;
  if (has_ref) {
    attr.pred_ref = Matrix(n, T);
    attr.pred_diff = Matrix(n, T);
  }
  for (const auto& [key, c] : cells) {
    const auto [i, j, k] = key;
    attr.values(i, j, k) = c.value;
    attr.pred(i, k) = c.pred;
    if (has_ref) {
      attr.pred_ref(i, k) = c.pred_ref;
      attr.pred_diff(i, k) = c.pred_diff;
    }
  }
  if (T > 0) attr.grid = TimeGrid(times);
  attr.feature_names = names;
  attr.instance_ids = ids;
  return attr;
}

}  // namespace survgrad
