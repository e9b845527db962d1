#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "inrank/data.hpp"
#include "inrank/errors.hpp"
#include "inrank/inrank.hpp"
#include "inrank/spectrum.hpp"

namespace inrank {

/// Shortest decimal form that round-trips a double.
inline std::string format_number(double v) { return detail::format_double(v); }

/// CSV file written one complete line at a time. Each row is flushed, so a
/// run that dies midway leaves only whole rows behind.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : path_(path), columns_(header.size()) {
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot write '" + path + "'");
    write_line(header);
  }

  void row(const std::vector<std::string>& fields) {
    if (fields.size() != columns_) {
      throw UsageError("csv row has " + std::to_string(fields.size()) + " fields, header has " +
                       std::to_string(columns_));
    }
    write_line(fields);
  }

  const std::string& path() const noexcept { return path_; }

 private:
  void write_line(const std::vector<std::string>& fields) {
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) line += ',';
      line += fields[i];
    }
    line += '\n';
    out_ << line;
    out_.flush();
    if (!out_) throw IoError("write failed for '" + path_ + "'");
  }

  std::string path_;
  std::size_t columns_;
  std::ofstream out_;
};

/// metrics.csv: iter,loss[,accuracy],layer0_rank,...
class MetricsCsv {
 public:
  MetricsCsv(const std::string& path, std::size_t layers, bool with_accuracy)
      : with_accuracy_(with_accuracy), layers_(layers), csv_(path, header(layers, with_accuracy)) {}

  void write(const MetricsRow& r) {
    std::vector<std::string> f{std::to_string(r.iteration), format_number(r.loss)};
    if (with_accuracy_) f.push_back(r.accuracy ? format_number(*r.accuracy) : "");
    for (std::size_t l = 0; l < layers_; ++l) f.push_back(l < r.ranks.size() ? std::to_string(r.ranks[l]) : "");
    csv_.row(f);
  }

 private:
  static std::vector<std::string> header(std::size_t layers, bool with_accuracy) {
    std::vector<std::string> h{"iter", "loss"};
    if (with_accuracy) h.push_back("accuracy");
    for (std::size_t l = 0; l < layers; ++l) h.push_back("layer" + std::to_string(l) + "_rank");
    return h;
  }

  bool with_accuracy_;
  std::size_t layers_;
  CsvWriter csv_;
};

/// σ / Σσ for one snapshot; all zeros when the snapshot is zero.
inline std::vector<double> normalize_by_total(std::span<const double> values) {
  double total = 0.0;
  for (double v : values) total += v;
  std::vector<double> out(values.size(), 0.0);
  if (total > 0.0)
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] / total;
  return out;
}

/// spectrum.csv rows for every snapshot of `trace`. `layer_offset` shifts
/// the layer column so several traces can share one file.
inline void append_spectrum_rows(CsvWriter& csv, const SpectrumTrace& trace, std::size_t layer_offset = 0) {
  for (std::size_t l = 0; l < trace.layer_count(); ++l) {
    for (const auto& snap : trace.layer(l)) {
      const auto norm = normalize_by_total(snap.values);
      for (std::size_t i = 0; i < snap.values.size(); ++i) {
        csv.row({std::to_string(snap.iteration), std::to_string(l + layer_offset), std::to_string(i),
                 format_number(snap.values[i]), format_number(norm[i])});
      }
    }
  }
}

inline const std::vector<std::string>& spectrum_header() {
  static const std::vector<std::string> h{"iter", "layer", "index", "sigma", "sigma_normalized"};
  return h;
}

inline void write_spectrum_csv(const SpectrumTrace& trace, const std::string& path) {
  if (trace.empty()) throw UsageError("spectrum history is empty");
  CsvWriter csv(path, spectrum_header());
  append_spectrum_rows(csv, trace);
}

inline void write_rank_schedule_csv(const RankSchedule& schedule, const std::string& path) {
  if (schedule.layer_count() == 0) throw UsageError("rank schedule is empty");
  CsvWriter csv(path, {"iter", "layer", "rank"});
  for (std::size_t l = 0; l < schedule.layer_count(); ++l)
    for (const auto& e : schedule.layer(l))
      csv.row({std::to_string(e.iteration), std::to_string(l), std::to_string(e.rank)});
}

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotOptions {
  std::string title;
  std::string x_label = "iteration";
  std::string y_label;
  bool log_y = false;
  int width = 720;
  int height = 440;
};

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
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

inline std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

}  // namespace detail

/// SVG 1.1 line chart with one polyline per series. Output depends only on
/// the inputs.
inline std::string render_svg(const std::vector<PlotSeries>& series, const PlotOptions& opt) {
  if (series.empty()) throw UsageError("plot has no series");
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  const auto ty = [&](double y) { return opt.log_y ? std::log10(y) : y; };
  const auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!opt.log_y || y > 0.0); };
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw UsageError("plot series '" + s.name + "' has mismatched lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!(x0 <= x1)) throw UsageError("plot has no finite points");
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;

  const double left = 70, right = 150, top = 40, bottom = 50;
  const double pw = opt.width - left - right, ph = opt.height - top - bottom;
  const auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return top + ph - (ty(y) - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << opt.width << "\" height=\""
     << opt.height << "\" viewBox=\"0 0 " << opt.width << ' ' << opt.height << "\">\n"
     << "<title>" << detail::xml_escape(opt.title) << "</title>\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << opt.width << "\" height=\"" << opt.height << "\" fill=\"#ffffff\"/>\n"
     << "<g font-family=\"sans-serif\" font-size=\"12\" fill=\"#000000\">\n"
     << "<text x=\"" << detail::fixed3(left + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
     << detail::xml_escape(opt.title) << "</text>\n"
     << "<text x=\"" << detail::fixed3(left + pw / 2) << "\" y=\"" << opt.height - 12
     << "\" text-anchor=\"middle\">" << detail::xml_escape(opt.x_label) << "</text>\n"
     << "<text x=\"16\" y=\"" << detail::fixed3(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << detail::fixed3(top + ph / 2) << ")\">" << detail::xml_escape(opt.y_label + (opt.log_y ? " (log10)" : ""))
     << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0;
    const double yv = y0 + (y1 - y0) * k / 4.0;
    const double yp = top + ph - ph * k / 4.0;
    os << "<text x=\"" << detail::fixed3(px(xv)) << "\" y=\"" << detail::fixed3(top + ph + 16)
       << "\" text-anchor=\"middle\">" << detail::tick_label(xv) << "</text>\n"
       << "<text x=\"" << detail::fixed3(left - 6) << "\" y=\"" << detail::fixed3(yp + 4) << "\" text-anchor=\"end\">"
       << detail::tick_label(opt.log_y ? std::pow(10.0, yv) : yv) << "</text>\n";
  }
  os << "</g>\n"
     << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << detail::fixed3(pw) << "\" height=\""
     << detail::fixed3(ph) << "\" fill=\"none\" stroke=\"#000000\"/>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    os << "<polyline fill=\"none\" stroke=\"" << detail::palette(i) << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!usable(s.x[k], s.y[k])) continue;
      if (!first) os << ' ';
      os << detail::fixed3(px(s.x[k])) << ',' << detail::fixed3(py(s.y[k]));
      first = false;
    }
    os << "\"><title>" << detail::xml_escape(s.name) << "</title></polyline>\n";
  }
  const std::size_t shown = std::min<std::size_t>(series.size(), 20);
  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t i = 0; i < shown; ++i) {
    const double y = top + 12 + 15.0 * static_cast<double>(i);
    os << "<line x1=\"" << detail::fixed3(left + pw + 10) << "\" y1=\"" << detail::fixed3(y - 4) << "\" x2=\""
       << detail::fixed3(left + pw + 30) << "\" y2=\"" << detail::fixed3(y - 4) << "\" stroke=\""
       << detail::palette(i) << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << detail::fixed3(left + pw + 35) << "\" y=\"" << detail::fixed3(y) << "\">"
       << detail::xml_escape(series[i].name) << "</text>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

/// One polyline per singular-value index of layer `layer`, each snapshot
/// normalized by its total strength.
inline std::string render_spectrum_svg(const SpectrumTrace& trace, std::size_t layer, const std::string& title,
                                       std::size_t max_modes = 10, double time_per_iteration = 0.0) {
  if (layer >= trace.layer_count() || trace.layer(layer).empty()) throw UsageError("spectrum history is empty");
  const auto& snaps = trace.layer(layer);
  std::size_t modes = 0;
  for (const auto& s : snaps) modes = std::max(modes, s.values.size());
  modes = std::min(modes, max_modes);
  if (modes == 0) throw UsageError("spectrum history has no singular values");
  std::vector<PlotSeries> series(modes);
  for (std::size_t i = 0; i < modes; ++i) series[i].name = "sigma_" + std::to_string(i + 1);
  for (const auto& s : snaps) {
    const auto norm = normalize_by_total(s.values);
    const double x = time_per_iteration > 0.0 ? static_cast<double>(s.iteration) * time_per_iteration
                                              : static_cast<double>(s.iteration);
    for (std::size_t i = 0; i < modes; ++i) {
      series[i].x.push_back(x);
      series[i].y.push_back(i < norm.size() ? norm[i] : 0.0);
    }
  }
  PlotOptions opt;
  opt.title = title;
  opt.x_label = time_per_iteration > 0.0 ? "time" : "iteration";
  opt.y_label = "normalized singular value";
  return render_svg(series, opt);
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out.flush()) throw IoError("write failed for '" + path + "'");
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace inrank
