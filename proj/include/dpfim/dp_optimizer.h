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

// DP-SGD: per-example clipping, Gaussian noise on the clipped sum, AdamW
// update on the adapter weights, and Poisson lot sampling. Also hosts the
// non-private training loops used for the base model and the baseline.

#ifndef DPFIM_DP_OPTIMIZER_H_
#define DPFIM_DP_OPTIMIZER_H_

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "dpfim/accountant.h"
#include "dpfim/corpus.h"
#include "dpfim/model.h"
#include "dpfim/rng.h"

namespace dpfim {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void Validate() const;
};

struct DpConfig {
  double clip_norm = 0.5;
  double noise_multiplier = 0.2746;
  // Expected lot size B. The sampling rate is B / N.
  double lot_size = 32;
  AdamWConfig adamw;

  double sampling_rate(size_t n_members) const;
  void Validate() const;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  uint64_t step = 0;

  bool operator==(const OptimizerState&) const = default;
};

OptimizerState MakeOptimizerState(size_t dim);

double L2Norm(std::span<const double> v);

// g * min(1, C / ||g||).
std::vector<double> Clip(std::span<const double> g, double clip_norm);

// (sum of clipped + z) / lot_size with z ~ N(0, (sigma C)^2 I). Division is by
// the expected lot size, not by the number of vectors supplied. Throws if
// any input exceeds the clipping bound.
std::vector<double> NoisyAggregate(const std::vector<std::vector<double>>& clipped,
                                   size_t dim, double clip_norm, double noise_multiplier,
                                   double lot_size, Rng& rng);

// Each member joins independently with probability q.
Batch PoissonSample(std::span<const FimExample> members, double q, Rng& rng);

// Bias-corrected AdamW with decoupled weight decay, in place. Increments
// state.step.
void AdamWStep(OptimizerState& state, std::vector<double>& weights,
               std::span<const double> grad, const AdamWConfig& cfg);

struct StepRecord {
  uint64_t step = 0;
  size_t realized_batch = 0;
  double mean_preclip_norm = 0.0;
  double frac_clipped = 0.0;
  double loss = 0.0;
  double epsilon = std::numeric_limits<double>::infinity();
  // Largest norm that entered aggregation; not part of the CSV.
  double max_postclip_norm = 0.0;
};

struct DpEpochResult {
  std::vector<StepRecord> log;
  bool budget_exhausted = false;
};

// One DP-SGD step: Poisson lot, per-example gradients, clip, noisy
// aggregate, AdamW, accountant. Sampling and noise for global step t come
// from the "sampling" and "noise" substreams at index t.
StepRecord DpStep(ParameterSet& params, OptimizerState& opt, AccountantState& accountant,
                  std::span<const FimExample> members, const DpConfig& cfg, double delta,
                  uint64_t seed);

// Runs DP steps for one pass over the data (floor(1/q) steps) or until the
// next step would push epsilon past epsilon_max. max_steps > 0 caps the
// number of steps in this call.
DpEpochResult DpTrainEpoch(ParameterSet& params, OptimizerState& opt,
                           AccountantState& accountant, std::span<const FimExample> members,
                           const DpConfig& cfg, double delta, double epsilon_max,
                           uint64_t seed, uint64_t max_steps = 0);

uint64_t DpStepsPerEpoch(size_t n_members, const DpConfig& cfg);

enum class TrainTarget { kAdapters, kBase };

// Non-private minibatch AdamW. Global step t reads batch t % steps_per_epoch
// of the epoch permutation drawn from substream ("shuffle", t / steps_per_epoch);
// indices within a batch are visited in ascending order.
StepRecord NonPrivateStep(ParameterSet& params, OptimizerState& opt,
                          std::span<const FimExample> examples, size_t batch_size,
                          const AdamWConfig& cfg, TrainTarget target, uint64_t seed);

uint64_t NonPrivateStepsPerEpoch(size_t n_examples, size_t batch_size);

void WriteStepLog(const std::filesystem::path& path, const std::vector<StepRecord>& log,
                  bool append = false);
std::vector<StepRecord> ReadStepLog(const std::filesystem::path& path);

}  // namespace dpfim

#endif  // DPFIM_DP_OPTIMIZER_H_
