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

// Gray-box membership inference: loss-based scores, ROC sweep and AUC.

#ifndef DPFIM_MIA_H_
#define DPFIM_MIA_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpfim/corpus.h"
#include "dpfim/model.h"

namespace dpfim {

enum class AttackStrategy {
  kRawLoss,     // score = -target_loss
  kCalibrated,  // score = reference_loss - target_loss
};

const char* StrategyName(AttackStrategy s);

struct AttackRecord {
  std::string id;
  bool is_member = false;
  bool is_canary = false;
  double target_loss = 0.0;
  double reference_loss = 0.0;
  double score = 0.0;  // higher means more member-like
};

inline double ScoreRawLoss(double target_loss) { return -target_loss; }
inline double ScoreCalibrated(double target_loss, double reference_loss) {
  return reference_loss - target_loss;
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;              // Mann-Whitney statistic
};

// P(member score > non-member score) + 1/2 P(tie), via midranks.
double MannWhitneyAuc(std::span<const AttackRecord> records);

double TrapezoidArea(std::span<const RocPoint> points);

// One ROC point per distinct score threshold. Throws when either class is
// absent.
RocCurve RocAndAuc(std::span<const AttackRecord> records);

// Per-example losses under both models. Members are de-duplicated by id.
// Examples whose loss cannot be evaluated are dropped and counted.
struct LossTable {
  std::vector<AttackRecord> records;
  size_t dropped = 0;
};

LossTable ComputeLosses(const ParameterSet& target, const ParameterSet& reference,
                        std::span<const FimExample> members,
                        std::span<const FimExample> nonmembers);

struct AttackResult {
  AttackStrategy strategy = AttackStrategy::kCalibrated;
  std::vector<AttackRecord> records;  // balanced evaluation set
  RocCurve curve;
  // Canary members against an equally sized non-member sample.
  std::optional<RocCurve> canary_curve;
  size_t dropped = 0;
};

// Applies the strategy, subsamples the larger class to the size of the
// smaller (substream "attack-balance"), and builds the curves.
AttackResult ScoreAttack(const LossTable& losses, AttackStrategy strategy, uint64_t seed);

AttackResult RunAttack(const ParameterSet& target, const ParameterSet& reference,
                       std::span<const FimExample> members,
                       std::span<const FimExample> nonmembers, AttackStrategy strategy,
                       uint64_t seed);

void WriteAttackRecordsCsv(const std::filesystem::path& path,
                           const std::vector<AttackRecord>& records);
std::vector<AttackRecord> ReadAttackRecordsCsv(const std::filesystem::path& path);
void WriteRocCsv(const std::filesystem::path& path, const RocCurve& curve);
std::vector<RocPoint> ReadRocCsv(const std::filesystem::path& path);

}  // namespace dpfim

#endif  // DPFIM_MIA_H_
