#pragma once

// Standalone SVG plots from report JSON. Output is a pure function of the
// report: fixed canvas, fixed palette, printf float formatting, no
// timestamps, so identical reports give identical bytes.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "rewardlens/common.hpp"

namespace rewardlens {

namespace svgdetail {

inline std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> colors = {
      "#1f6fb2", "#d1495b", "#2e8b57", "#b8860b", "#6a4fa3", "#3a8ca8"};
  return colors;
}

struct Frame {
  double width = 640, height = 400;
  double left = 60, right = 20, top = 28, bottom = 44;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;

  double px(double x) const {
    const double span = x_max - x_min;
    return left + (span == 0 ? 0.5 : (x - x_min) / span) * (width - left - right);
  }
  double py(double y) const {
    const double span = y_max - y_min;
    return height - bottom -
           (span == 0 ? 0.5 : (y - y_min) / span) * (height - top - bottom);
  }
};

class Builder {
 public:
  explicit Builder(const Frame& frame) : f_(frame) {
    out_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
            num(f_.width) + "\" height=\"" + num(f_.height) + "\">\n";
    out_ += "<rect width=\"" + num(f_.width) + "\" height=\"" + num(f_.height) +
            "\" fill=\"white\"/>\n";
  }

  void axes(const std::string& x_label, const std::string& y_label) {
    line(f_.left, f_.height - f_.bottom, f_.width - f_.right,
         f_.height - f_.bottom, "#333333", 1.0);
    line(f_.left, f_.top, f_.left, f_.height - f_.bottom, "#333333", 1.0);
    text(0.5 * (f_.left + f_.width - f_.right), f_.height - 10, x_label,
         "middle", 12);
    out_ += "<text x=\"16\" y=\"" + num(0.5 * f_.height) +
            "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 "
            "16 " + num(0.5 * f_.height) + ")\" fill=\"#333333\">" +
            escape(y_label) + "</text>\n";
    // extreme tick labels
    text(f_.left, f_.height - f_.bottom + 16, num(f_.x_min), "middle", 10);
    text(f_.width - f_.right, f_.height - f_.bottom + 16, num(f_.x_max),
         "middle", 10);
    text(f_.left - 6, f_.height - f_.bottom + 4, num(f_.y_min), "end", 10);
    text(f_.left - 6, f_.top + 4, num(f_.y_max), "end", 10);
  }

  void title(const std::string& s) {
    text(0.5 * f_.width, 18, s, "middle", 13);
  }

  void line(double x1, double y1, double x2, double y2,
            const std::string& color, double width,
            const std::string& cls = "") {
    out_ += "<line";
    if (!cls.empty()) out_ += " class=\"" + cls + "\"";
    out_ += " x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) +
            "\" y2=\"" + num(y2) + "\" stroke=\"" + color + "\" stroke-width=\"" +
            num(width) + "\"/>\n";
  }

  void data_line(double x1, double y1, double x2, double y2,
                 const std::string& color, double width,
                 const std::string& cls = "") {
    line(f_.px(x1), f_.py(y1), f_.px(x2), f_.py(y2), color, width, cls);
  }

  void polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                const std::string& color) {
    out_ += "<polyline fill=\"none\" stroke=\"" + color +
            "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) out_ += " ";
      out_ += num(f_.px(xs[i])) + "," + num(f_.py(ys[i]));
    }
    out_ += "\"/>\n";
  }

  void circle(double x, double y, double r, const std::string& color) {
    out_ += "<circle cx=\"" + num(f_.px(x)) + "\" cy=\"" + num(f_.py(y)) +
            "\" r=\"" + num(r) + "\" fill=\"" + color + "\"/>\n";
  }

  void rect_raw(double x, double y, double w, double h,
                const std::string& fill) {
    out_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
            "\" height=\"" + num(h) + "\" fill=\"" + fill + "\"/>\n";
  }

  void text(double x, double y, const std::string& s,
            const std::string& anchor, int size) {
    out_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" +
            std::to_string(size) + "\" text-anchor=\"" + anchor +
            "\" fill=\"#333333\">" + escape(s) + "</text>\n";
  }

  const Frame& frame() const { return f_; }

  std::string finish() {
    out_ += "</svg>\n";
    return std::move(out_);
  }

  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '&') out += "&amp;";
      else if (c == '<') out += "&lt;";
      else if (c == '>') out += "&gt;";
      else out += c;
    }
    return out;
  }

 private:
  Frame f_;
  std::string out_;
};

inline void span_of(const std::vector<double>& xs, double& lo, double& hi) {
  for (double x : xs) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
}

inline std::vector<double> json_doubles(const nlohmann::ordered_json& arr) {
  std::vector<double> out;
  for (const auto& v : arr)
    out.push_back(v.is_null() ? 0.0 : v.get<double>());
  return out;
}

inline std::string heat_color(double v, double max_abs) {
  // symmetric blue-white-red scale
  const double t = max_abs == 0.0 ? 0.0 : std::clamp(v / max_abs, -1.0, 1.0);
  const int r = static_cast<int>(255 * (t > 0 ? 1.0 : 1.0 + t));
  const int b = static_cast<int>(255 * (t < 0 ? 1.0 : 1.0 - t));
  const int g = static_cast<int>(255 * (1.0 - std::fabs(t)));
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace svgdetail

enum class PlotKind { trajectory, topk_bar, heatmap, dose_response, overlay };

inline PlotKind parse_plot_kind(const std::string& s) {
  if (s == "trajectory") return PlotKind::trajectory;
  if (s == "topk-bar") return PlotKind::topk_bar;
  if (s == "heatmap") return PlotKind::heatmap;
  if (s == "dose-response") return PlotKind::dose_response;
  if (s == "overlay") return PlotKind::overlay;
  fail(ErrorKind::argument, "unknown plot kind '" + s + "'");
}

namespace svgdetail {

inline void require_fields(const nlohmann::ordered_json& report,
                           std::initializer_list<const char*> fields,
                           const char* kind) {
  for (const char* f : fields)
    require(report.contains(f), ErrorKind::argument,
            std::string("report does not match plot kind '") + kind +
                "': missing field '" + f + "'");
}

inline std::string emit_trajectory(const nlohmann::ordered_json& report) {
  require_fields(report, {"layers", "differential"}, "trajectory");
  const auto layers = json_doubles(report["layers"]);
  const auto diff = json_doubles(report["differential"]);

  Frame f;
  f.x_min = layers.empty() ? 0 : layers.front();
  f.x_max = layers.empty() ? 1 : layers.back();
  if (!(f.x_max > f.x_min)) f.x_max = f.x_min + 1;
  double lo = 0.0, hi = 0.0;
  span_of(diff, lo, hi);
  f.y_min = lo;
  f.y_max = hi;

  Builder b(f);
  b.title("reward lens differential");
  b.axes("layer", "differential");
  if (f.y_min < 0.0 && f.y_max > 0.0)
    b.data_line(f.x_min, 0.0, f.x_max, 0.0, "#bbbbbb", 0.75);
  if (!layers.empty()) {
    b.polyline(layers, diff, palette()[0]);
    for (std::size_t i = 0; i < layers.size(); ++i)
      b.circle(layers[i], diff[i], 2.0, palette()[0]);
  }
  if (report.contains("crystallisation_depth") &&
      !report["crystallisation_depth"].is_null()) {
    // the depth grid is (l+1)/(L+1); invert to the layer axis
    const double depth = report["crystallisation_depth"].get<double>();
    const double layer = depth * (static_cast<double>(layers.size())) - 1.0;
    b.data_line(layer, f.y_min, layer, f.y_max, "#d1495b", 1.25,
                "crystallisation");
  }
  return b.finish();
}

inline std::string emit_topk_bar(const nlohmann::ordered_json& report) {
  require_fields(report, {"component_names"}, "topk-bar");
  const bool is_patch = report.contains("patch_effects");
  require(is_patch || report.contains("differential_contributions"),
          ErrorKind::argument,
          "report does not match plot kind 'topk-bar': no effect field");
  std::vector<std::string> names;
  for (const auto& n : report["component_names"]) names.push_back(n);
  const auto values = json_doubles(
      is_patch ? report["patch_effects"] : report["differential_contributions"]);

  // order by |value| descending, ties to lower index, at most 12 bars
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::fabs(values[a]) > std::fabs(values[b]);
  });
  const std::size_t n = std::min<std::size_t>(order.size(), 12);

  Frame f;
  double lo = 0.0, hi = 0.0;
  span_of(values, lo, hi);
  f.y_min = std::min(lo, 0.0);
  f.y_max = std::max(hi, 0.0);
  f.x_min = 0;
  f.x_max = static_cast<double>(std::max<std::size_t>(n, 1));

  Builder b(f);
  b.title(is_patch ? "top patch effects" : "top attribution components");
  b.axes("component", is_patch ? "effect" : "contribution");
  for (std::size_t i = 0; i < n; ++i) {
    const double v = values[order[i]];
    const double x0 = f.px(static_cast<double>(i) + 0.15);
    const double x1 = f.px(static_cast<double>(i) + 0.85);
    const double y0 = f.py(std::max(0.0, v));
    const double y1 = f.py(std::min(0.0, v));
    b.rect_raw(x0, y0, x1 - x0, std::max(0.5, y1 - y0),
               v >= 0 ? palette()[0] : palette()[1]);
    b.text(0.5 * (x0 + x1), f.height - f.bottom + 28, names[order[i]],
           "middle", 9);
  }
  return b.finish();
}

inline std::string emit_heatmap(const nlohmann::ordered_json& report) {
  require_fields(report, {"heatmap_differential"}, "heatmap");
  const auto& rows = report["heatmap_differential"];
  require(rows.is_array() && rows.size() == 2, ErrorKind::argument,
          "heatmap: expected two rows");
  std::vector<std::vector<double>> heat;
  for (const auto& row : rows) heat.push_back(json_doubles(row));
  double max_abs = 0.0;
  for (const auto& row : heat)
    for (double v : row) max_abs = std::max(max_abs, std::fabs(v));

  Frame f;
  Builder b(f);
  b.title("attribution heat map");
  const double cols = static_cast<double>(heat[0].size());
  const double cw = (f.width - f.left - f.right) / std::max(cols, 1.0);
  const double ch = (f.height - f.top - f.bottom) / 2.0;
  const char* row_names[2] = {"attn", "mlp"};
  for (int r = 0; r < 2; ++r) {
    b.text(f.left - 8, f.top + ch * r + ch / 2 + 4, row_names[r], "end", 11);
    for (std::size_t c = 0; c < heat[static_cast<std::size_t>(r)].size(); ++c) {
      b.rect_raw(f.left + cw * static_cast<double>(c), f.top + ch * r,
                 cw - 1.0, ch - 1.0,
                 heat_color(heat[static_cast<std::size_t>(r)][c], max_abs));
    }
  }
  b.text(f.left, f.height - 14, "embed", "middle", 9);
  b.text(f.width - f.right, f.height - 14,
         "L" + std::to_string(static_cast<int>(cols) - 2), "middle", 9);
  return b.finish();
}

inline std::string emit_dose_response(const nlohmann::ordered_json& report) {
  require_fields(report, {"alphas", "deltas", "causal_slope"}, "dose-response");
  const auto alphas = json_doubles(report["alphas"]);
  const auto deltas = json_doubles(report["deltas"]);

  Frame f;
  double lo = 0.0, hi = 0.0;
  span_of(alphas, lo, hi);
  f.x_min = lo;
  f.x_max = hi;
  lo = hi = 0.0;
  span_of(deltas, lo, hi);
  f.y_min = lo;
  f.y_max = hi;

  Builder b(f);
  b.title("dose response");
  b.axes("alpha", "reward delta");
  const double slope = report["causal_slope"].get<double>();
  b.data_line(f.x_min, slope * f.x_min, f.x_max, slope * f.x_max,
              "#999999", 1.0, "fit");
  for (std::size_t i = 0; i < alphas.size(); ++i)
    b.circle(alphas[i], deltas[i], 3.0, palette()[1]);
  return b.finish();
}

inline std::string emit_overlay(const nlohmann::ordered_json& report) {
  require_fields(report, {"depth_grid", "curves", "model_names"}, "overlay");
  const auto grid = json_doubles(report["depth_grid"]);
  std::vector<std::vector<double>> curves;
  for (const auto& row : report["curves"]) curves.push_back(json_doubles(row));
  std::vector<std::string> names;
  for (const auto& n : report["model_names"]) names.push_back(n);

  Frame f;
  f.x_min = 0.0;
  f.x_max = 1.0;
  double lo = 0.0, hi = 0.0;
  for (const auto& c : curves) span_of(c, lo, hi);
  if (curves.empty()) hi = 1.0;
  f.y_min = lo;
  f.y_max = hi;

  Builder b(f);
  b.title("cross-model formation overlay");
  b.axes("fractional depth", "differential");
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& color = palette()[i % palette().size()];
    b.polyline(grid, curves[i], color);
    b.text(f.width - f.right - 4,
           f.top + 14.0 * static_cast<double>(i + 1),
           i < names.size() ? names[i] : "model", "end", 10);
  }
  return b.finish();
}

}  // namespace svgdetail

inline std::string emit_svg(const nlohmann::ordered_json& report,
                            PlotKind kind) {
  switch (kind) {
    case PlotKind::trajectory: return svgdetail::emit_trajectory(report);
    case PlotKind::topk_bar: return svgdetail::emit_topk_bar(report);
    case PlotKind::heatmap: return svgdetail::emit_heatmap(report);
    case PlotKind::dose_response: return svgdetail::emit_dose_response(report);
    default: return svgdetail::emit_overlay(report);
  }
}

}  // namespace rewardlens
