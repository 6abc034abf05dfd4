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

#include "dpfim/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "dpfim/error.h"

namespace dpfim {
namespace {

bool IsSpace(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Lenient UTF-8 decode: a malformed byte b becomes the private symbol
// 0x110000 + b so it still counts as one character.
std::u32string DecodeLenient(std::string_view s) {
  std::u32string out;
  size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = s[i];
    size_t len = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    }
    bool ok = len > 0 && i + len <= s.size();
    for (size_t k = 1; ok && k < len; ++k) {
      const unsigned char cc = s[i + k];
      if ((cc & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (ok) {
      out.push_back(cp);
      i += len;
    } else {
      out.push_back(0x110000 + c);
      ++i;
    }
  }
  return out;
}

using NgramCounts = std::map<std::u32string, int>;

NgramCounts CharNgrams(const std::u32string& chars, int n) {
  NgramCounts counts;
  if (static_cast<int>(chars.size()) < n) return counts;
  for (size_t i = 0; i + n <= chars.size(); ++i) ++counts[chars.substr(i, n)];
  return counts;
}

NgramCounts WordNgrams(const std::vector<std::u32string>& words, int n) {
  NgramCounts counts;
  if (static_cast<int>(words.size()) < n) return counts;
  for (size_t i = 0; i + n <= words.size(); ++i) {
    std::u32string key;
    for (int k = 0; k < n; ++k) {
      if (k > 0) key.push_back(U' ');
      key += words[i + k];
    }
    ++counts[key];
  }
  return counts;
}

struct OrderStats {
  int matches = 0;
  int hyp_total = 0;
  int ref_total = 0;
};

OrderStats Compare(const NgramCounts& hyp, const NgramCounts& ref) {
  OrderStats s;
  for (const auto& [gram, c] : hyp) {
    s.hyp_total += c;
    auto it = ref.find(gram);
    if (it != ref.end()) s.matches += std::min(c, it->second);
  }
  for (const auto& [gram, c] : ref) s.ref_total += c;
  return s;
}

std::vector<std::u32string> SplitWords(const std::u32string& text) {
  std::vector<std::u32string> words;
  std::u32string cur;
  for (char32_t c : text) {
    if (IsSpace(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::string TrimRight(std::string_view s) {
  size_t end = s.size();
  while (end > 0 && IsSpace(static_cast<unsigned char>(s[end - 1]))) --end;
  return std::string(s.substr(0, end));
}

std::string Fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

double ChrfPlusPlus(std::string_view hypothesis, std::string_view reference,
                    const ChrfOptions& options) {
  if (reference.empty()) throw ConfigError("ChrF++ needs a non-empty reference");
  const std::u32string hyp = DecodeLenient(hypothesis);
  const std::u32string ref = DecodeLenient(reference);
  std::u32string hyp_chars, ref_chars;
  for (char32_t c : hyp) {
    if (!IsSpace(c)) hyp_chars.push_back(c);
  }
  for (char32_t c : ref) {
    if (!IsSpace(c)) ref_chars.push_back(c);
  }
  const std::vector<std::u32string> hyp_words = SplitWords(hyp);
  const std::vector<std::u32string> ref_words = SplitWords(ref);

  double precision_sum = 0.0;
  double recall_sum = 0.0;
  int effective = 0;
  auto add = [&](const OrderStats& s) {
    if (s.ref_total == 0) return;
    ++effective;
    recall_sum += static_cast<double>(s.matches) / s.ref_total;
    if (s.hyp_total > 0) precision_sum += static_cast<double>(s.matches) / s.hyp_total;
  };
  for (int n = 1; n <= options.char_order; ++n) {
    add(Compare(CharNgrams(hyp_chars, n), CharNgrams(ref_chars, n)));
  }
  for (int n = 1; n <= options.word_order; ++n) {
    add(Compare(WordNgrams(hyp_words, n), WordNgrams(ref_words, n)));
  }
  if (effective == 0) return 0.0;
  const double p = precision_sum / effective;
  const double r = recall_sum / effective;
  if (p + r == 0.0) return 0.0;
  const double b2 = options.beta * options.beta;
  return 100.0 * (1.0 + b2) * p * r / (b2 * p + r);
}

const LmThresholds& DefaultLmThresholds() {
  static const LmThresholds table = {{1.0, 1.0}, {0.75, 0.75}, {0.5, 0.5}, {0.25, 0.25}};
  return table;
}

std::vector<std::string> SplitLines(std::string_view text) {
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= text.size()) {
    const size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < text.size()) lines.push_back(TrimRight(text.substr(start)));
      break;
    }
    lines.push_back(TrimRight(text.substr(start, nl - start)));
    start = nl + 1;
  }
  return lines;
}

size_t LongestCommonLineRun(const std::vector<std::string>& a,
                            const std::vector<std::string>& b) {
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  size_t best = 0;
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : 0;
      best = std::max(best, cur[j]);
    }
    std::swap(prev, cur);
  }
  return best;
}

double LmScore(std::string_view hypothesis, std::string_view reference,
               const LmThresholds& thresholds) {
  if (reference.empty()) throw ConfigError("LM score needs a non-empty reference");
  const std::vector<std::string> ref = SplitLines(reference);
  if (ref.empty()) return 0.0;
  const size_t run = LongestCommonLineRun(SplitLines(hypothesis), ref);
  const double ratio = static_cast<double>(run) / static_cast<double>(ref.size());
  for (const auto& [min_ratio, score] : thresholds) {
    if (ratio >= min_ratio) return score;
  }
  return 0.0;
}

MetricReport Aggregate(std::vector<double> scores) {
  if (scores.empty()) throw ConfigError("cannot aggregate an empty score list");
  MetricReport report;
  report.n = scores.size();
  std::sort(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += s;
  report.mean = sum / static_cast<double>(report.n);
  if (report.n == 1) {
    report.single_sample = true;
  } else {
    double ss = 0.0;
    for (double s : scores) ss += (s - report.mean) * (s - report.mean);
    const double sd = std::sqrt(ss / static_cast<double>(report.n - 1));
    report.stderr_ = sd / std::sqrt(static_cast<double>(report.n));
  }
  report.scores = std::move(scores);
  return report;
}

void WriteMetricsCsv(const std::filesystem::path& path,
                     const std::vector<CompletionScore>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "example_id,chrf_pp,lm_score\n";
  std::vector<double> chrf, lm;
  for (const CompletionScore& r : rows) {
    out << r.id << ',' << Fmt(r.chrf) << ',' << Fmt(r.lm) << '\n';
    chrf.push_back(r.chrf);
    lm.push_back(r.lm);
  }
  if (rows.empty()) return;
  const MetricReport c = Aggregate(chrf);
  const MetricReport l = Aggregate(lm);
  out << "# summary n=" << c.n << "\n";
  out << "# chrf_pp " << Fmt(c.mean) << " +- " << Fmt(c.stderr_) << "\n";
  out << "# lm_score " << Fmt(l.mean) << " +- " << Fmt(l.stderr_) << "\n";
}

}  // namespace dpfim
