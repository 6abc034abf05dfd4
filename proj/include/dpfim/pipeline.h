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

// Experiment commands. Every command reads and writes files under the run
// directory (config out_dir); manifest.json records what each one produced.
//
//   splits/{members,nonmembers,eval,public}.jsonl
//   pretrain/base.ckpt, pretrain/steps.csv
//   train/<mode>/model.ckpt, steps.csv, val.csv
//   attack/<mode>/<strategy>/attack_records.csv, roc.csv, canary_roc.csv
//   eval/<label>/metrics.csv, completions.jsonl
//   report/loss_epsilon.svg, roc.svg, summary.txt
//   sweep/r<rank>_eps<epsilon>/..., sweep/sweep.csv

#ifndef DPFIM_PIPELINE_H_
#define DPFIM_PIPELINE_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpfim/accountant.h"
#include "dpfim/config.h"
#include "dpfim/corpus.h"
#include "dpfim/mia.h"
#include "dpfim/model.h"

namespace dpfim {

inline constexpr char kToolVersion[] = "dpfim 0.1.0";

enum class TrainMode { kBaseline, kDp };

const char* ModeName(TrainMode mode);
TrainMode ParseMode(const std::string& name);

class RunLayout {
 public:
  explicit RunLayout(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path manifest() const { return root_ / "manifest.json"; }
  std::filesystem::path split(const std::string& name) const {
    return root_ / "splits" / (name + ".jsonl");
  }
  std::filesystem::path base_checkpoint() const { return root_ / "pretrain" / "base.ckpt"; }
  std::filesystem::path pretrain_log() const { return root_ / "pretrain" / "steps.csv"; }
  std::filesystem::path train_dir(TrainMode mode) const {
    return root_ / "train" / ModeName(mode);
  }
  std::filesystem::path checkpoint(TrainMode mode) const {
    return train_dir(mode) / "model.ckpt";
  }
  std::filesystem::path step_log(TrainMode mode) const { return train_dir(mode) / "steps.csv"; }
  std::filesystem::path val_log(TrainMode mode) const { return train_dir(mode) / "val.csv"; }
  std::filesystem::path attack_dir(TrainMode mode, AttackStrategy strategy) const {
    return root_ / "attack" / ModeName(mode) / StrategyName(strategy);
  }
  std::filesystem::path eval_dir(const std::string& label) const {
    return root_ / "eval" / label;
  }
  std::filesystem::path report_dir() const { return root_ / "report"; }

 private:
  std::filesystem::path root_;
};

nlohmann::json ReadManifest(const std::filesystem::path& path);
// Pretty-printed, keys sorted, trailing newline.
void WriteManifest(const std::filesystem::path& path, const nlohmann::json& manifest);

// FNV-1a over (id, text) of every document, as 16 hex digits.
std::string CorpusFingerprint(const std::vector<Document>& docs);
std::string FileFingerprint(const std::filesystem::path& path);

// One reading of the reference DP setting (sigma 0.2746, C 0.5, B 512,
// one epoch over 80,000 examples drawn from 8,000,000).
struct ReferenceInterpretation {
  std::string name;
  double q = 0.0;
  double delta = 0.0;
  uint64_t steps = 0;
  EpsilonResult epsilon;
};

inline constexpr double kReferenceSigma = 0.2746;
inline constexpr double kReferenceLot = 512;
inline constexpr double kReferenceTrainSize = 80000;
inline constexpr double kReferencePoolSize = 8000000;
inline constexpr double kReferenceEpsilon = 30;

std::vector<ReferenceInterpretation> ReferenceEpsilons();
// Index of the interpretation whose epsilon is closest to kReferenceEpsilon.
size_t ClosestReferenceInterpretation(const std::vector<ReferenceInterpretation>& all);

// Ingest, FIM-transform, split and inject canaries. Writes the split files
// and a fresh manifest.
void CmdPrepare(const ExperimentConfig& cfg);

// Loads pretrain/base.ckpt, training it on the public pool first if absent.
ParameterSet EnsureBaseModel(const ExperimentConfig& cfg);

struct TrainOptions {
  // Stop once this many steps have been taken in total (0: run to the end).
  // The checkpoint is then marked incomplete and can be resumed.
  uint64_t stop_after = 0;
  bool resume = false;
};

struct TrainOutcome {
  uint64_t steps = 0;
  uint64_t planned_steps = 0;
  bool complete = false;
  bool budget_exhausted = false;
  double noise_multiplier = 0.0;
  double epsilon = 0.0;  // inf for baseline
};

// Baseline: non-private AdamW over shuffled minibatches of the members.
// Dp: Poisson-sampled DP-SGD, stopping before the step that would exceed
// accountant.epsilon_max. Throws kBudgetExhausted if not even one step fits.
TrainOutcome CmdTrain(const ExperimentConfig& cfg, TrainMode mode,
                      const TrainOptions& options = {});

// Runs both attack strategies against train/<mode>/model.ckpt with the base
// checkpoint as reference. Returns the manifest entry it wrote.
nlohmann::json CmdAttack(const ExperimentConfig& cfg, TrainMode mode);

// Greedy completions for the eval split. label is "baseline", "dp" or "base"
// unless checkpoint is given explicitly.
nlohmann::json CmdEvaluate(const ExperimentConfig& cfg, const std::string& label,
                           const std::filesystem::path& checkpoint = {});

// Plots and summary from whatever the run directory holds. Returns the list
// of missing inputs (also written into the summary).
std::vector<std::string> CmdReport(const std::filesystem::path& run_dir);

// Cross product of sweep.ranks and sweep.epsilons, one run directory each.
void CmdSweep(const ExperimentConfig& cfg);

}  // namespace dpfim

#endif  // DPFIM_PIPELINE_H_
