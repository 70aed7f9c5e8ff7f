#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csdn/evaluation.hpp"
#include "csdn/trainer.hpp"

namespace csdn::report {

struct Series {
  std::string name;
  std::vector<double> values;
};

// Polyline chart with x = 1..n, y in [0, 1] shown as percent.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::vector<Series>& series);

// Grouped bars: one group per category, one bar per series, y in [0, 1].
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<Series>& series);

// CMC curves of several reports on one chart.
std::string cmc_svg(const std::string& title, const std::vector<std::pair<std::string, eval::RetrievalReport>>& rows);

nlohmann::json to_json(const train::EpochRecord& r);

// Labelled evaluation rows as a flat table (header plus one line per row).
std::string flat_table(const std::vector<std::pair<std::string, eval::RetrievalReport>>& rows);

// Writes through a temporary file and renames, creating parent directories.
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace csdn::report
