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

#include "dpfim/mia.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "dpfim/error.h"
#include "dpfim/rng.h"

namespace dpfim {
namespace {

std::string Fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void CountClasses(std::span<const AttackRecord> records, size_t& members, size_t& nonmembers) {
  members = 0;
  nonmembers = 0;
  for (const AttackRecord& r : records) (r.is_member ? members : nonmembers)++;
  if (members == 0 || nonmembers == 0) {
    throw ConfigError("ROC needs both classes; got " + std::to_string(members) +
                      " members and " + std::to_string(nonmembers) + " non-members");
  }
}

template <typename T>
std::vector<T> SampleWithoutReplacement(std::vector<T> items, size_t k, Rng& rng) {
  std::shuffle(items.begin(), items.end(), rng);
  items.resize(std::min(k, items.size()));
  return items;
}

}  // namespace

const char* StrategyName(AttackStrategy s) {
  return s == AttackStrategy::kRawLoss ? "raw" : "calibrated";
}

double MannWhitneyAuc(std::span<const AttackRecord> records) {
  size_t n1 = 0, n0 = 0;
  CountClasses(records, n1, n0);
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return records[a].score < records[b].score; });
  // Sum of midranks of the members (ranks start at 1).
  double member_rank_sum = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && records[order[j]].score == records[order[i]].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (size_t k = i; k < j; ++k) {
      if (records[order[k]].is_member) member_rank_sum += midrank;
    }
    i = j;
  }
  const double u = member_rank_sum - 0.5 * static_cast<double>(n1) * (n1 + 1);
  return u / (static_cast<double>(n1) * static_cast<double>(n0));
}

double TrapezoidArea(std::span<const RocPoint> points) {
  double area = 0.0;
  for (size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) * 0.5;
  }
  return area;
}

RocCurve RocAndAuc(std::span<const AttackRecord> records) {
  size_t n1 = 0, n0 = 0;
  CountClasses(records, n1, n0);
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return records[a].score > records[b].score; });
  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  size_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double threshold = records[order[i]].score;
    while (i < order.size() && records[order[i]].score == threshold) {
      (records[order[i]].is_member ? tp : fp)++;
      ++i;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(n0),
                            static_cast<double>(tp) / static_cast<double>(n1)});
  }
  curve.auc = MannWhitneyAuc(records);
  return curve;
}

LossTable ComputeLosses(const ParameterSet& target, const ParameterSet& reference,
                        std::span<const FimExample> members,
                        std::span<const FimExample> nonmembers) {
  LossTable table;
  auto add = [&](const FimExample& ex, bool is_member) {
    AttackRecord rec;
    rec.id = ex.id;
    rec.is_member = is_member;
    rec.is_canary = ex.is_canary;
    try {
      rec.target_loss = ExampleLoss(target, ex);
      rec.reference_loss = ExampleLoss(reference, ex);
    } catch (const Error&) {
      ++table.dropped;
      return;
    }
    if (!std::isfinite(rec.target_loss) || !std::isfinite(rec.reference_loss)) {
      ++table.dropped;
      return;
    }
    table.records.push_back(std::move(rec));
  };
  std::set<std::string> seen;
  for (const FimExample& ex : members) {
    if (seen.insert(ex.id).second) add(ex, true);
  }
  for (const FimExample& ex : nonmembers) add(ex, false);
  return table;
}

AttackResult ScoreAttack(const LossTable& losses, AttackStrategy strategy, uint64_t seed) {
  std::vector<AttackRecord> members, nonmembers;
  for (AttackRecord r : losses.records) {
    r.score = strategy == AttackStrategy::kRawLoss
                  ? ScoreRawLoss(r.target_loss)
                  : ScoreCalibrated(r.target_loss, r.reference_loss);
    (r.is_member ? members : nonmembers).push_back(std::move(r));
  }
  if (members.empty() || nonmembers.empty()) {
    throw ConfigError("attack needs members and non-members; got " +
                      std::to_string(members.size()) + " and " +
                      std::to_string(nonmembers.size()));
  }
  const size_t n = std::min(members.size(), nonmembers.size());
  Rng rng = Substream(seed, "attack-balance");
  if (members.size() > n) members = SampleWithoutReplacement(members, n, rng);
  if (nonmembers.size() > n) nonmembers = SampleWithoutReplacement(nonmembers, n, rng);

  AttackResult result;
  result.strategy = strategy;
  result.dropped = losses.dropped;
  std::vector<AttackRecord> canaries;
  for (const AttackRecord& r : members) {
    if (r.is_canary) canaries.push_back(r);
  }
  result.records = members;
  result.records.insert(result.records.end(), nonmembers.begin(), nonmembers.end());
  result.curve = RocAndAuc(result.records);

  if (!canaries.empty()) {
    Rng canary_rng = Substream(seed, "attack-canary");
    std::vector<AttackRecord> set = canaries;
    const std::vector<AttackRecord> negatives =
        SampleWithoutReplacement(nonmembers, canaries.size(), canary_rng);
    set.insert(set.end(), negatives.begin(), negatives.end());
    result.canary_curve = RocAndAuc(set);
  }
  return result;
}

AttackResult RunAttack(const ParameterSet& target, const ParameterSet& reference,
                       std::span<const FimExample> members,
                       std::span<const FimExample> nonmembers, AttackStrategy strategy,
                       uint64_t seed) {
  return ScoreAttack(ComputeLosses(target, reference, members, nonmembers), strategy, seed);
}

void WriteAttackRecordsCsv(const std::filesystem::path& path,
                           const std::vector<AttackRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "id,is_member,is_canary,target_loss,reference_loss,score\n";
  for (const AttackRecord& r : records) {
    out << r.id << ',' << (r.is_member ? 1 : 0) << ',' << (r.is_canary ? 1 : 0) << ','
        << Fmt(r.target_loss) << ',' << Fmt(r.reference_loss) << ',' << Fmt(r.score) << '\n';
  }
}

std::vector<AttackRecord> ReadAttackRecordsCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("missing attack records: " + path.string());
  std::vector<AttackRecord> records;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ConfigError("malformed attack record in " + path.string());
    records.push_back({cells[0], cells[1] == "1", cells[2] == "1", std::stod(cells[3]),
                       std::stod(cells[4]), std::stod(cells[5])});
  }
  return records;
}

void WriteRocCsv(const std::filesystem::path& path, const RocCurve& curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "fpr,tpr\n";
  for (const RocPoint& p : curve.points) out << Fmt(p.fpr) << ',' << Fmt(p.tpr) << '\n';
}

std::vector<RocPoint> ReadRocCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("missing ROC file: " + path.string());
  std::vector<RocPoint> points;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t comma = line.find(',');
    points.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  return points;
}

}  // namespace dpfim
