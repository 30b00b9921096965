#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpfm/errors.hpp"
#include "lpfm/geometry.hpp"
#include "lpfm/train.hpp"

namespace lpfm {

namespace fs = std::filesystem;

/// Shortest decimal text that round-trips a double.
inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("short write to " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::ordered_json anova_json(const AnovaDecomposition& a) {
  return {{"within_seq", a.within_seq},
          {"within_class", a.within_class},
          {"between_class", a.between_class},
          {"total", a.total},
          {"within_seq_fraction", a.within_seq_fraction},
          {"within_class_fraction", a.within_class_fraction},
          {"between_class_fraction", a.between_class_fraction}};
}

inline nlohmann::ordered_json nc_json(const NcMetrics& n) {
  return {{"equinorm_cov_means", n.equinorm_cov_means},
          {"equinorm_cov_weights", n.equinorm_cov_weights},
          {"equiangularity_means", n.equiangularity_means},
          {"equiangularity_weights", n.equiangularity_weights},
          {"self_duality", n.self_duality},
          {"ncc_mismatch", n.ncc_mismatch}};
}

template <class S>
nlohmann::ordered_json report_to_json(const GeometryReport<S>& r) {
  nlohmann::ordered_json j;
  j["cossim"] = r.cossim;
  j["snr"] = r.snr;
  j["anova"] = anova_json(r.anova);
  j["anova_weighted"] = anova_json(r.anova_weighted);
  j["nc"] = nc_json(r.ntc.nc);
  j["ntc"] = {{"within_seq_var", r.ntc.within_seq_var},
              {"within_class_var", r.ntc.within_class_var},
              {"between_class_fraction", r.ntc.between_class_fraction}};
  j["accuracy"] = r.accuracy;
  j["pca_classes"] = r.pca_classes;
  j["pca_points"] = r.pca_coords.rows();
  j["simplex_classes"] = r.simplex_classes;
  j["simplex_points"] = r.simplex_coords.rows();
  return j;
}

inline std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string s = "epoch,lr,train_loss,train_acc,test_loss,test_acc\n";
  for (const auto& m : history)
    s += std::to_string(m.epoch) + "," + fmt_real(m.lr) + "," + fmt_real(m.train_loss) + "," + fmt_real(m.train_acc) +
         "," + fmt_real(m.test_loss) + "," + fmt_real(m.test_acc) + "\n";
  return s;
}

inline std::string per_layer_csv(const char* column, const std::vector<double>& values) {
  std::string s = std::string("layer,") + column + "\n";
  for (std::size_t l = 0; l < values.size(); ++l) s += std::to_string(l) + "," + fmt_real(values[l]) + "\n";
  return s;
}

template <class S>
std::string projection_csv(const Matrix<S>& coords, const std::vector<int>& labels) {
  std::string s = "x,y,class\n";
  for (std::size_t i = 0; i < coords.rows(); ++i)
    s += fmt_real(static_cast<double>(coords(i, 0))) + "," + fmt_real(static_cast<double>(coords(i, 1))) + "," +
         std::to_string(labels[i]) + "\n";
  return s;
}

struct ProjectionPoint {
  double x = 0, y = 0;
  int cls = 0;
};

inline std::vector<ProjectionPoint> parse_projection_csv(const std::string& text) {
  std::vector<ProjectionPoint> pts;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "x,y,class") throw FormatError("projection CSV header mismatch", 0);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ProjectionPoint p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%d", &p.x, &p.y, &p.cls) != 3)
      throw FormatError("malformed projection CSV row: " + line, 0);
    pts.push_back(p);
  }
  return pts;
}

/// Colour for class c, cycling through a 10-colour palette.
inline const char* class_color(std::size_t c) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[c % 10];
}

inline std::string legend_csv(std::size_t num_classes) {
  std::string s = "class,color\n";
  for (std::size_t c = 0; c < num_classes; ++c) s += std::to_string(c) + "," + class_color(c) + "\n";
  return s;
}

/// One circle per point on a 480×480 canvas.
template <class S>
std::string scatter_svg(const Matrix<S>& coords, const std::vector<int>& labels, const std::string& title) {
  constexpr double size = 480, margin = 30;
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  for (std::size_t i = 0; i < coords.rows(); ++i) {
    const double x = static_cast<double>(coords(i, 0)), y = static_cast<double>(coords(i, 1));
    if (i == 0) {
      xmin = xmax = x;
      ymin = ymax = y;
    }
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-12});
  auto px = [&](double x) { return margin + (x - xmin) / span * (size - 2 * margin); };
  auto py = [&](double y) { return size - margin - (y - ymin) / span * (size - 2 * margin); };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" viewBox=\"0 0 480 480\">\n";
  s += "<rect width=\"480\" height=\"480\" fill=\"white\"/>\n";
  s += "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
  char buf[160];
  for (std::size_t i = 0; i < coords.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2\" fill=\"%s\" fill-opacity=\"0.6\"/>\n",
                  px(static_cast<double>(coords(i, 0))), py(static_cast<double>(coords(i, 1))),
                  class_color(static_cast<std::size_t>(labels[i])));
    s += buf;
  }
  return s + "</svg>\n";
}

/// Writes the report in the requested formats; returns the file names written.
template <class S>
std::vector<std::string> emit_report(const fs::path& run_dir, const GeometryReport<S>& r,
                                     const std::vector<std::string>& formats, std::size_t num_classes) {
  if (r.cossim.empty() && r.snr.empty()) throw DataError("emit_report: report has no layer captures");
  fs::create_directories(run_dir);
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& text) {
    write_text(run_dir / name, text);
    written.push_back(name);
  };
  auto wants = [&](const char* f) { return std::find(formats.begin(), formats.end(), f) != formats.end(); };
  if (wants("json")) put("report.json", report_to_json(r).dump(2) + "\n");
  if (wants("csv")) {
    put("cossim.csv", per_layer_csv("cossim", r.cossim));
    put("snr.csv", per_layer_csv("snr", r.snr));
    put("pca.csv", projection_csv(r.pca_coords, r.pca_labels));
    if (r.simplex_coords.rows() > 0) put("simplex.csv", projection_csv(r.simplex_coords, r.simplex_labels));
  }
  if (wants("svg")) {
    put("pca.svg", scatter_svg(r.pca_coords, r.pca_labels, "PCA of final-layer tokens"));
    if (r.simplex_coords.rows() > 0)
      put("simplex.svg", scatter_svg(r.simplex_coords, r.simplex_labels, "Simplex projection of final-layer tokens"));
    put("legend.csv", legend_csv(num_classes));
  }
  return written;
}

}  // namespace lpfm
