#include "survgrad/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace survgrad {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && *begin == ' ') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) {
    throw IoError("line " + std::to_string(line_no) + ": cannot parse number '" + s + "'");
  }
  return v;
}

}  // namespace

std::size_t SurvivalDataset::num_events() const {
  return static_cast<std::size_t>(std::count(event.begin(), event.end(), 1));
}

void SurvivalDataset::validate() const {
  const std::size_t n = time.size();
  if (event.size() != n || features.rows() != n) {
    throw ShapeError("dataset columns disagree in length (time " + std::to_string(n) +
                     ", event " + std::to_string(event.size()) + ", features " +
                     std::to_string(features.rows()) + ")");
  }
  if (!feature_names.empty() && feature_names.size() != features.cols()) {
    throw ShapeError("feature_names length does not match feature columns");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(time[i]) || time[i] < 0.0) {
      throw ConfigError("row " + std::to_string(i) + ": time must be finite and >= 0");
    }
    if (event[i] != 0 && event[i] != 1) {
      throw ConfigError("row " + std::to_string(i) + ": event must be 0 or 1");
    }
  }
  if (!features.all_finite()) throw ConfigError("features contain non-finite values");
}

SurvivalDataset SurvivalDataset::subset(std::span<const std::size_t> indices) const {
  SurvivalDataset out;
  out.features = features.select_rows(indices);
  out.time.reserve(indices.size());
  out.event.reserve(indices.size());
  for (std::size_t i : indices) {
    out.time.push_back(time.at(i));
    out.event.push_back(event.at(i));
  }
  out.feature_names = feature_names;
  return out;
}

std::vector<std::string> default_feature_names(std::size_t p) {
  std::vector<std::string> names;
  names.reserve(p);
  for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  return names;
}

TimeGrid::TimeGrid(std::vector<double> points) : points_(std::move(points)) {
  if (points_.empty()) throw ConfigError("time grid must not be empty");
  for (std::size_t k = 0; k < points_.size(); ++k) {
    if (!std::isfinite(points_[k]) || points_[k] < 0.0) {
      throw ConfigError("time grid points must be finite and nonnegative");
    }
    if (k > 0 && !(points_[k] > points_[k - 1])) {
      throw ConfigError("time grid must be strictly increasing");
    }
  }
}

Matrix monotonize_survival(const Matrix& curves) {
  Matrix out = curves;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double running = 1.0;
    for (double& v : out.row(i)) {
      v = std::clamp(v, 0.0, 1.0);
      running = std::min(running, v);
      v = running;
    }
  }
  return out;
}

std::string dataset_to_csv(const SurvivalDataset& data) {
  data.validate();
  const auto names =
      data.feature_names.empty() ? default_feature_names(data.num_features()) : data.feature_names;
  std::string out = "time,event";
  for (const auto& name : names) out += "," + name;
  out += "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out += format_double(data.time[i]);
    out += data.event[i] ? ",1" : ",0";
    for (double v : data.features.row(i)) {
      out += ",";
      out += format_double(v);
    }
    out += "\n";
  }
  return out;
}

void write_dataset_csv(const SurvivalDataset& data, const std::filesystem::path& path) {
  const std::string text = dataset_to_csv(data);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

SurvivalDataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");
  auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "time" || header[1] != "event") {
    throw IoError("'" + path.string() + "': header must start with time,event");
  }
  SurvivalDataset data;
  data.feature_names.assign(header.begin() + 2, header.end());
  const std::size_t p = data.feature_names.size();
  std::vector<double> features;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != p + 2) {
      throw IoError("'" + path.string() + "' line " + std::to_string(line_no) + ": expected " +
                    std::to_string(p + 2) + " fields, got " + std::to_string(cells.size()));
    }
    data.time.push_back(parse_double(cells[0], line_no));
    const double ev = parse_double(cells[1], line_no);
    if (ev != 0.0 && ev != 1.0) {
      throw IoError("line " + std::to_string(line_no) + ": event must be 0 or 1");
    }
    data.event.push_back(static_cast<int>(ev));
    for (std::size_t j = 0; j < p; ++j) features.push_back(parse_double(cells[j + 2], line_no));
  }
  data.features = Matrix(data.time.size(), p, std::move(features));
  data.validate();
  return data;
}

double step_value(std::span<const double> knots, std::span<const double> levels, double t,
                  double initial) {
  auto it = std::upper_bound(knots.begin(), knots.end(), t);
  if (it == knots.begin()) return initial;
  return levels[static_cast<std::size_t>(it - knots.begin()) - 1];
}

KaplanMeier KaplanMeier::fit(std::span<const double> time, std::span<const int> event,
                             bool censoring) {
  if (time.size() != event.size()) throw ShapeError("KaplanMeier: time/event length mismatch");
  std::vector<std::size_t> order(time.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return time[a] < time[b]; });
  KaplanMeier km;
  double s = 1.0;
  std::size_t at_risk = time.size();
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = time[order[i]];
    std::size_t d = 0, total = 0;
    while (i < order.size() && time[order[i]] == t) {
      const bool is_event = censoring ? event[order[i]] == 0 : event[order[i]] == 1;
      d += is_event ? 1 : 0;
      ++total;
      ++i;
    }
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      km.times.push_back(t);
      km.survival.push_back(s);
    }
    at_risk -= total;
  }
  return km;
}

double KaplanMeier::operator()(double t) const { return step_value(times, survival, t, 1.0); }

double KaplanMeier::left_limit(double t) const {
  auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

double KaplanMeier::median() const {
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (survival[k] <= 0.5) return times[k];
  }
  return std::numeric_limits<double>::infinity();
}

NelsonAalen NelsonAalen::fit(std::span<const double> time, std::span<const int> event) {
  if (time.size() != event.size()) throw ShapeError("NelsonAalen: time/event length mismatch");
  std::vector<std::size_t> order(time.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return time[a] < time[b]; });
  NelsonAalen na;
  double h = 0.0;
  std::size_t at_risk = time.size();
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = time[order[i]];
    std::size_t d = 0, total = 0;
    while (i < order.size() && time[order[i]] == t) {
      d += event[order[i]] == 1 ? 1 : 0;
      ++total;
      ++i;
    }
    if (d > 0) {
      h += static_cast<double>(d) / static_cast<double>(at_risk);
      na.times.push_back(t);
      na.cumulative_hazard.push_back(h);
    }
    at_risk -= total;
  }
  return na;
}

double NelsonAalen::operator()(double t) const {
  return step_value(times, cumulative_hazard, t, 0.0);
}

}  // namespace survgrad
