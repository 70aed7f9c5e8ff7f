#include "csdn/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "csdn/errors.hpp"

namespace csdn::report {

namespace {

constexpr double kWidth = 780, kHeight = 400;
constexpr double kLeft = 60, kRight = 250, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

const char* colour(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

double plot_w() { return kWidth - kLeft - kRight; }
double plot_h() { return kHeight - kTop - kBottom; }
double y_of(double v) { return kTop + plot_h() * (1.0 - std::clamp(v, 0.0, 1.0)); }

void open_svg(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0, y = y_of(v);
    os << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + plot_w() << "\" y1=\"" << num(y) << "\" y2=\"" << num(y)
       << "\" stroke=\"#ddd\"/>\n"
       << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << t * 20 << "</text>\n";
  }
  os << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft << "\" y1=\"" << kTop << "\" y2=\"" << kTop + plot_h()
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + plot_w() << "\" y1=\"" << kTop + plot_h() << "\" y2=\""
     << kTop + plot_h() << "\" stroke=\"black\"/>\n"
     << "<text transform=\"translate(18," << kTop + plot_h() / 2 << ") rotate(-90)\" text-anchor=\"middle\">%</text>\n";
}

void legend(std::ostringstream& os, const std::vector<Series>& series) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = kTop + 10 + 18 * static_cast<double>(i);
    os << "<rect x=\"" << kWidth - kRight + 12 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\""
       << colour(i) << "\"/>\n"
       << "<text x=\"" << kWidth - kRight + 30 << "\" y=\"" << y + 1 << "\">" << escape(series[i].name)
       << "</text>\n";
  }
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::vector<Series>& series) {
  std::ostringstream os;
  open_svg(os, title);
  std::size_t n = 1;
  for (const auto& s : series) n = std::max(n, s.values.size());
  auto x_of = [&](std::size_t i) { return kLeft + (n == 1 ? 0.5 : static_cast<double>(i) / (n - 1)) * plot_w(); };
  for (std::size_t i = 0; i < n; ++i) {
    if (i != 0 && (i + 1) % 5 != 0 && i + 1 != n) continue;
    os << "<text x=\"" << num(x_of(i)) << "\" y=\"" << kTop + plot_h() + 16 << "\" text-anchor=\"middle\">" << i + 1
       << "</text>\n";
  }
  os << "<text x=\"" << kLeft + plot_w() / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
     << escape(x_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    os << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << colour(k) << "\" points=\"";
    for (std::size_t i = 0; i < series[k].values.size(); ++i)
      os << (i ? " " : "") << num(x_of(i)) << "," << num(y_of(series[k].values[i]));
    os << "\"/>\n";
  }
  legend(os, series);
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<Series>& series) {
  std::ostringstream os;
  open_svg(os, title);
  const double group = plot_w() / std::max<std::size_t>(1, categories.size());
  const double bar = group * 0.8 / std::max<std::size_t>(1, series.size());
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double x0 = kLeft + group * static_cast<double>(c) + group * 0.1;
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double v = c < series[k].values.size() ? series[k].values[c] : 0.0;
      const double y = y_of(v);
      os << "<rect x=\"" << num(x0 + bar * static_cast<double>(k)) << "\" y=\"" << num(y) << "\" width=\""
         << num(bar * 0.9) << "\" height=\"" << num(kTop + plot_h() - y) << "\" fill=\"" << colour(k) << "\"/>\n";
    }
    os << "<text x=\"" << num(x0 + group * 0.4) << "\" y=\"" << kTop + plot_h() + 16 << "\" text-anchor=\"middle\">"
       << escape(categories[c]) << "</text>\n";
  }
  legend(os, series);
  os << "</svg>\n";
  return os.str();
}

std::string cmc_svg(const std::string& title, const std::vector<std::pair<std::string, eval::RetrievalReport>>& rows) {
  std::vector<Series> series;
  for (const auto& [label, r] : rows) series.push_back({label, r.cmc});
  return line_chart_svg(title, "rank", series);
}

nlohmann::json to_json(const train::EpochRecord& r) {
  return {{"stage", std::string(train::to_string(r.stage))},
          {"epoch", r.epoch},
          {"lr", r.lr},
          {"loss", r.loss},
          {"components", r.components}};
}

std::string flat_table(const std::vector<std::pair<std::string, eval::RetrievalReport>>& rows) {
  std::string out = eval::flat_row_header() + "\n";
  for (const auto& [label, r] : rows) out += eval::flat_row(label, r) + "\n";
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw DataError("cannot write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace csdn::report
