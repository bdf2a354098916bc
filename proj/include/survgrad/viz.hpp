#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "survgrad/attribution.hpp"

namespace survgrad {

enum class PlotKind { relevance_curves, contribution, force };

std::string_view to_string(PlotKind kind);
PlotKind parse_plot_kind(std::string_view name);

// Categorical colors indexed by feature position, cycled when p exceeds the list.
const std::vector<std::string>& default_palette();

struct PlotStyle {
  std::vector<std::string> palette = default_palette();
  double width = 720.0;
  double height = 440.0;
  double font_size = 12.0;
};

struct PlotSpec {
  PlotKind kind = PlotKind::relevance_curves;
  std::size_t instance_id = 0;  // label from Attribution::instance_ids
  PlotStyle style;
  std::size_t force_points = 10;
  bool overlay_predictions = true;  // relevance curves only
  std::string title;                // empty: "<method>, instance <id>"

  void validate() const;
};

// Grid indices nearest to `count` equidistant times spanning the grid.
std::vector<std::size_t> force_slots(const TimeGrid& grid, std::size_t count);

// Standalone SVG 1.1 documents. Output depends only on (spec, attr).
std::string render_relevance_curves(const PlotSpec& spec, const Attribution& attr);
std::string render_contribution_plot(const PlotSpec& spec, const Attribution& attr);
// Requires pred_diff; throws ConfigError otherwise.
std::string render_force_plot(const PlotSpec& spec, const Attribution& attr);
std::string render_plot(const PlotSpec& spec, const Attribution& attr);
void write_svg(const std::string& document, const std::filesystem::path& path);

struct PlotDataFiles {
  std::filesystem::path relevance;
  std::filesystem::path contribution;
  std::filesystem::path force;  // empty when the attribution has no reference
};

// Long-format CSVs, each opened by a "# survgrad.plotdata/<family> v1" line:
//   <stem>_relevance.csv     instance,feature,time,value,pred,pred_ref,pred_diff
//   <stem>_contribution.csv  instance,feature,time,normalized,lower,upper,importance
//   <stem>_force.csv         instance,slot,time,feature,value,pred_diff
// pred columns are empty when the attribution does not carry them.
PlotDataFiles export_plot_data(const Attribution& attr, const std::filesystem::path& dir,
                               std::string_view stem = "plot", std::size_t force_points = 10);

// Rebuilds values, grid, feature names, instance ids and curves from a
// relevance CSV.
Attribution read_relevance_csv(const std::filesystem::path& path);

}  // namespace survgrad
