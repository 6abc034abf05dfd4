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
#include <sstream>

#include "dpfim/mia.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"

namespace dpfim {
namespace {

using ::testing::HasSubstr;
using ::testing::Not;

std::string PolylineWithColor(const std::string& svg, const std::string& color) {
  std::istringstream in(svg);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("<polyline", 0) == 0 && line.find(color) != std::string::npos) return line;
  }
  return "";
}

RocCurve PerfectCurve() {
  std::vector<AttackRecord> recs = {
      {"a", true, false, 0, 0, 0.9}, {"b", true, false, 0, 0, 0.8},
      {"c", false, false, 0, 0, 0.2}, {"d", false, false, 0, 0, 0.1}};
  return RocAndAuc(recs);
}

PlotSpec RocSpec(const RocCurve& curve) {
  PlotSpec spec;
  spec.title = "ROC";
  spec.x_label = "false positive rate";
  spec.y_label = "true positive rate";
  spec.unit_square = true;
  PlotSeries s;
  s.label = "perfect";
  s.color = "#123456";
  for (const RocPoint& p : curve.points) s.points.emplace_back(p.fpr, p.tpr);
  spec.series.push_back(s);
  return spec;
}

TEST(RenderSvgTest, PerfectRocPassesThroughTopLeftCorner) {
  const PlotSpec spec = RocSpec(PerfectCurve());
  const std::string svg = RenderSvg(spec);
  const std::string line = PolylineWithColor(svg, "#123456");
  ASSERT_FALSE(line.empty());
  // Frame: 70px left margin, 60px top margin, 575 x 325 plot area.
  EXPECT_THAT(line, HasSubstr("70.00,385.00"));
  EXPECT_THAT(line, HasSubstr("70.00,60.00"));
  EXPECT_THAT(line, HasSubstr("645.00,60.00"));
  EXPECT_THAT(svg, HasSubstr("stroke-dasharray=\"4 4\""));
}

TEST(RenderSvgTest, Deterministic) {
  const PlotSpec spec = RocSpec(PerfectCurve());
  EXPECT_EQ(RenderSvg(spec), RenderSvg(spec));
}

TEST(RenderSvgTest, SecondaryAxisAndNotes) {
  PlotSpec spec;
  spec.title = "loss";
  spec.y_label = "loss";
  spec.y2_label = "epsilon";
  spec.notes = {"epsilon omitted"};
  spec.series.push_back({"val", "#aa0000", {{0, 2.0}, {10, 1.0}}, false, false});
  spec.series.push_back({"eps", "#00aa00", {{0, 0.0}, {10, 30.0}}, true, true});
  const std::string svg = RenderSvg(spec);
  EXPECT_THAT(svg, HasSubstr("epsilon omitted"));
  EXPECT_THAT(svg, HasSubstr("rotate(90"));
  EXPECT_FALSE(PolylineWithColor(svg, "#00aa00").empty());

  spec.y2_label.clear();
  EXPECT_TRUE(PolylineWithColor(RenderSvg(spec), "#00aa00").empty());
}

TEST(RenderSvgTest, SkipsNonFinitePoints) {
  PlotSpec spec;
  spec.series.push_back({"s", "#0000ff", {{0, 1.0}, {1, NAN}, {2, 3.0}}, false, false});
  const std::string line = PolylineWithColor(RenderSvg(spec), "#0000ff");
  EXPECT_THAT(line, Not(HasSubstr("nan")));
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 2);
}

TEST(RenderSvgTest, EscapesText) {
  EXPECT_EQ(EscapeXml("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;");
  PlotSpec spec;
  spec.title = "x < y";
  EXPECT_THAT(RenderSvg(spec), HasSubstr("x &lt; y"));
}

TEST(NiceTicksTest, CoversRangeWithRoundSteps) {
  const std::vector<double> t = NiceTicks(0.0, 1.0);
  ASSERT_GE(t.size(), 3u);
  EXPECT_LE(t.front(), 0.0 + 1e-12);
  EXPECT_GE(t.back(), 1.0 - 1e-12);
  const double step = t[1] - t[0];
  EXPECT_TRUE(std::abs(step - 0.2) < 1e-12 || std::abs(step - 0.25) < 1e-12 ||
              std::abs(step - 0.1) < 1e-12 || std::abs(step - 0.5) < 1e-12);
  const std::vector<double> flat = NiceTicks(3.0, 3.0);
  EXPECT_FALSE(flat.empty());
}

}  // namespace
}  // namespace dpfim
