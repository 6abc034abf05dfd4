//
// Copyright 2026 The dpfim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "dpfim/report.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace dpfim {
namespace {

constexpr double kMarginLeft = 70;
constexpr double kMarginRight = 75;
constexpr double kMarginTop = 60;
constexpr double kMarginBottom = 55;

std::string Px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string TickLabel(double v) {
  if (std::fabs(v) < 1e-12) v = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void Add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool empty() const { return lo > hi; }
  void Pad() {
    if (empty()) {
      lo = 0.0;
      hi = 1.0;
    } else if (hi - lo < 1e-12) {
      const double d = std::max(std::fabs(lo) * 0.1, 1.0);
      lo -= d;
      hi += d;
    }
  }
};

class Frame {
 public:
  Frame(const PlotSpec& spec, Range x, Range y)
      : x_(x), y_(y),
        left_(kMarginLeft), top_(kMarginTop),
        w_(spec.width - kMarginLeft - kMarginRight),
        h_(spec.height - kMarginTop - kMarginBottom) {}

  double X(double v) const { return left_ + (v - x_.lo) / (x_.hi - x_.lo) * w_; }
  double Y(double v, const Range& r) const { return top_ + h_ - (v - r.lo) / (r.hi - r.lo) * h_; }
  double Y(double v) const { return Y(v, y_); }

  double left() const { return left_; }
  double right() const { return left_ + w_; }
  double top() const { return top_; }
  double bottom() const { return top_ + h_; }
  const Range& x() const { return x_; }
  const Range& y() const { return y_; }

 private:
  Range x_, y_;
  double left_, top_, w_, h_;
};

void Line(std::ostringstream& out, double x1, double y1, double x2, double y2,
          const std::string& style) {
  out << "<line x1=\"" << Px(x1) << "\" y1=\"" << Px(y1) << "\" x2=\"" << Px(x2)
      << "\" y2=\"" << Px(y2) << "\" " << style << "/>\n";
}

void Text(std::ostringstream& out, double x, double y, const std::string& anchor,
          const std::string& text, const std::string& extra = "") {
  out << "<text x=\"" << Px(x) << "\" y=\"" << Px(y) << "\" text-anchor=\"" << anchor
      << "\" font-family=\"sans-serif\" font-size=\"12\"" << extra << ">" << EscapeXml(text)
      << "</text>\n";
}

Range Extend(const Range& r, const std::vector<double>& ticks) {
  Range out = r;
  out.lo = std::min(out.lo, ticks.front());
  out.hi = std::max(out.hi, ticks.back());
  return out;
}

}  // namespace

std::string EscapeXml(const std::string& text) {
  std::string out;
  for (char c : text) {
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

std::vector<double> NiceTicks(double lo, double hi, int target_count) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / std::max(1, target_count - 1);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  const double first = std::floor(lo / step + 1e-9) * step;
  std::vector<double> ticks;
  for (int i = 0;; ++i) {
    const double t = first + i * step;
    ticks.push_back(t);
    if (t >= hi - 1e-9 * step) break;
  }
  return ticks;
}

std::string RenderSvg(const PlotSpec& spec) {
  Range x, y, y2;
  for (const PlotSeries& s : spec.series) {
    for (const auto& [px, py] : s.points) {
      x.Add(px);
      (s.right_axis ? y2 : y).Add(py);
    }
  }
  if (spec.unit_square) {
    x = Range{0.0, 1.0};
    y = Range{0.0, 1.0};
  }
  x.Pad();
  y.Pad();
  y2.Pad();
  const std::vector<double> xt = NiceTicks(x.lo, x.hi);
  const std::vector<double> yt = NiceTicks(y.lo, y.hi);
  const std::vector<double> y2t = NiceTicks(y2.lo, y2.hi);
  x = Extend(x, xt);
  y = Extend(y, yt);
  y2 = Extend(y2, y2t);
  const Frame f(spec, x, y);
  const bool has_y2 = !spec.y2_label.empty();

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
      << spec.height << "\" viewBox=\"0 0 " << spec.width << " " << spec.height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  Text(out, spec.width / 2.0, 22, "middle", spec.title, " font-weight=\"bold\"");
  for (size_t i = 0; i < spec.notes.size(); ++i) {
    Text(out, spec.width / 2.0, 38 + 13.0 * i, "middle", spec.notes[i],
         " font-style=\"italic\" fill=\"#555\"");
  }

  const std::string grid = "stroke=\"#e0e0e0\" stroke-width=\"1\"";
  const std::string axis = "stroke=\"black\" stroke-width=\"1\"";
  for (double t : xt) {
    Line(out, f.X(t), f.top(), f.X(t), f.bottom(), grid);
    Text(out, f.X(t), f.bottom() + 16, "middle", TickLabel(t));
  }
  for (double t : yt) {
    Line(out, f.left(), f.Y(t), f.right(), f.Y(t), grid);
    Text(out, f.left() - 6, f.Y(t) + 4, "end", TickLabel(t));
  }
  Line(out, f.left(), f.bottom(), f.right(), f.bottom(), axis);
  Line(out, f.left(), f.top(), f.left(), f.bottom(), axis);
  if (has_y2) {
    Line(out, f.right(), f.top(), f.right(), f.bottom(), axis);
    for (double t : y2t) Text(out, f.right() + 6, f.Y(t, y2) + 4, "start", TickLabel(t));
  }
  Text(out, (f.left() + f.right()) / 2, spec.height - 12.0, "middle", spec.x_label);
  {
    const double cy = (f.top() + f.bottom()) / 2;
    Text(out, 16, cy, "middle", spec.y_label,
         " transform=\"rotate(-90 16 " + Px(cy) + ")\"");
    if (has_y2) {
      const double rx = spec.width - 14.0;
      Text(out, rx, cy, "middle", spec.y2_label,
           " transform=\"rotate(90 " + Px(rx) + " " + Px(cy) + ")\"");
    }
  }
  if (spec.unit_square) {
    Line(out, f.X(0), f.Y(0), f.X(1), f.Y(1),
         "stroke=\"#888\" stroke-width=\"1\" stroke-dasharray=\"4 4\"");
  }

  double legend_y = f.top() + 14;
  for (const PlotSeries& s : spec.series) {
    if (s.right_axis && !has_y2) continue;
    std::string pts;
    for (const auto& [px, py] : s.points) {
      if (!std::isfinite(px) || !std::isfinite(py)) continue;
      if (!pts.empty()) pts += ' ';
      pts += Px(f.X(px)) + "," + Px(s.right_axis ? f.Y(py, y2) : f.Y(py));
    }
    const std::string dash = s.dashed ? " stroke-dasharray=\"6 3\"" : "";
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\"" << dash
        << " points=\"" << pts << "\"/>\n";
    Line(out, f.right() - 170, legend_y - 4, f.right() - 150, legend_y - 4,
         "stroke=\"" + s.color + "\" stroke-width=\"2\"" + dash);
    Text(out, f.right() - 145, legend_y, "start", s.label);
    legend_y += 16;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace dpfim
