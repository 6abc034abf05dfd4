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

// Minimal SVG line charts for run reports. Output depends only on the input
// values, so re-rendering the same data is byte-identical.

#ifndef DPFIM_REPORT_H_
#define DPFIM_REPORT_H_

#include <string>
#include <utility>
#include <vector>

namespace dpfim {

struct PlotSeries {
  std::string label;
  std::string color = "#1f77b4";
  std::vector<std::pair<double, double>> points;
  bool dashed = false;
  bool right_axis = false;  // plotted against the secondary y axis
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::string y2_label;  // empty: no secondary axis
  std::vector<PlotSeries> series;
  // Fixed [0,1] x [0,1] frame with the chance diagonal.
  bool unit_square = false;
  // Drawn under the title, e.g. to explain an omitted axis.
  std::vector<std::string> notes;
  int width = 720;
  int height = 440;
};

std::string RenderSvg(const PlotSpec& spec);

// Tick positions covering [lo, hi] at a 1/2/5 step.
std::vector<double> NiceTicks(double lo, double hi, int target_count = 6);

std::string EscapeXml(const std::string& text);

}  // namespace dpfim

#endif  // DPFIM_REPORT_H_
