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

// Completion quality metrics: ChrF++ and the longest-match line score.

#ifndef DPFIM_METRICS_H_
#define DPFIM_METRICS_H_

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dpfim {

struct ChrfOptions {
  int char_order = 6;
  int word_order = 2;
  double beta = 2.0;
};

// ChrF++ in [0, 100]. Character n-grams ignore whitespace; word n-grams use
// whitespace-separated tokens. Precision and recall are averaged over every
// order that has at least one reference n-gram before forming F-beta.
// Text is read as UTF-8 code points; malformed bytes count as single symbols.
double ChrfPlusPlus(std::string_view hypothesis, std::string_view reference,
                    const ChrfOptions& options = {});

// (ratio threshold, score) pairs, checked from the top.
using LmThresholds = std::vector<std::pair<double, double>>;

const LmThresholds& DefaultLmThresholds();

// Length of the longest run of consecutive lines shared by both texts
// (trailing whitespace trimmed), as a fraction of the reference line count,
// mapped through the threshold table.
double LmScore(std::string_view hypothesis, std::string_view reference,
               const LmThresholds& thresholds = DefaultLmThresholds());

std::vector<std::string> SplitLines(std::string_view text);
size_t LongestCommonLineRun(const std::vector<std::string>& a,
                            const std::vector<std::string>& b);

struct MetricReport {
  std::vector<double> scores;
  double mean = 0.0;
  double stderr_ = 0.0;
  size_t n = 0;
  // Set when n == 1 and the standard error is reported as 0.
  bool single_sample = false;
};

// Mean and sample-std / sqrt(n), summed in sorted order.
MetricReport Aggregate(std::vector<double> scores);

struct CompletionScore {
  std::string id;
  double chrf = 0.0;
  double lm = 0.0;
};

void WriteMetricsCsv(const std::filesystem::path& path,
                     const std::vector<CompletionScore>& rows);

}  // namespace dpfim

#endif  // DPFIM_METRICS_H_
