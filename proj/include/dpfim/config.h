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

// Experiment configuration: a plain-text file of [section] blocks holding
// `key = value` lines. Lists are comma separated; `#` starts a comment.

#ifndef DPFIM_CONFIG_H_
#define DPFIM_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpfim/corpus.h"
#include "dpfim/dp_optimizer.h"
#include "dpfim/metrics.h"
#include "dpfim/model.h"

namespace dpfim {

struct CorpusSection {
  std::string root = "corpus";
  std::vector<std::string> extensions = {".kt"};
  size_t max_bytes = 4096;
  FimOptions fim{8, 0};  // max_len 0 follows model.context_len
  SplitFractions fractions{0.5, 0.3, 0.1};
  double canary_fraction = 0.1;
  int canary_copies = 1;
};

struct PretrainSection {
  int epochs = 10;
  size_t batch_size = 16;
  AdamWConfig adamw{3e-3};
};

struct BaselineSection {
  int epochs = 20;
  size_t batch_size = 32;
  AdamWConfig adamw{1e-3};
  uint64_t max_steps = 0;  // 0: epochs * steps per epoch
};

struct DpSection {
  DpConfig dp;
  int epochs = 1;
  uint64_t max_steps = 0;
  // > 0: choose the noise multiplier so the planned run ends at this epsilon.
  double target_epsilon = 0.0;
};

struct AccountantSection {
  double delta = 0.0;  // 0: 1 / member count
  double epsilon_max = std::numeric_limits<double>::infinity();
};

struct MetricsSection {
  int max_new = 64;
  ChrfOptions chrf;
  LmThresholds lm_thresholds = DefaultLmThresholds();
  // Validation loss on the eval split is logged every val_every steps
  // (0: once per epoch) over at most val_examples examples.
  uint64_t val_every = 0;
  size_t val_examples = 200;
};

struct SweepSection {
  std::vector<int> ranks = {4, 8, 16, 32, 64};
  std::vector<double> epsilons = {4, 30, 100, 1000};
};

struct ExperimentConfig {
  uint64_t seed = 1234;
  std::string out_dir = "run";
  CorpusSection corpus;
  ModelConfig model;
  LoraConfig lora;
  PretrainSection pretrain;
  BaselineSection baseline;
  DpSection dp;
  AccountantSection accountant;
  MetricsSection metrics;
  SweepSection sweep;

  // Every violated constraint, not just the first.
  std::vector<std::string> Validate() const;
  // Throws a ConfigError listing every problem.
  void ValidateOrThrow() const;

  FimOptions fim_options() const;
};

// Unknown sections or keys and malformed values are collected and reported
// together in one ConfigError.
ExperimentConfig ParseConfig(const std::string& text);
ExperimentConfig LoadConfig(const std::filesystem::path& path);

// Every key with its current value, in the file format ParseConfig reads.
std::string FormatConfig(const ExperimentConfig& cfg);
nlohmann::json ToJson(const ExperimentConfig& cfg);

}  // namespace dpfim

#endif  // DPFIM_CONFIG_H_
