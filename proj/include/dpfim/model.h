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

// Tiny decoder-only transformer with frozen base weights and low-rank
// adapters on the attention query and value projections.
//
// All parameters live in two flat vectors: `base` and `adapters`. A
// ParamLayout maps named tensors onto offsets in those vectors, so gradients,
// optimizer moments and checkpoints can treat the model as plain arrays.
// Weight matrices are stored row-major as (out_features x in_features).

#ifndef DPFIM_MODEL_H_
#define DPFIM_MODEL_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpfim/corpus.h"

namespace dpfim {

struct ModelConfig {
  int vocab_size = Tokenizer::kVocabSize;
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int context_len = 256;
  int ffn_mult = 4;

  void Validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;

  // Multiplier on B*A; alpha / rank.
  double scaling() const { return alpha / rank; }
  void Validate(const ModelConfig& model) const;
  bool operator==(const LoraConfig&) const = default;
};

struct TensorSlot {
  size_t offset = 0;
  int rows = 0;
  int cols = 0;
  size_t size() const { return static_cast<size_t>(rows) * cols; }
};

struct LayerSlots {
  TensorSlot ln1_g, ln1_b;
  TensorSlot wq, bq, wk, bk, wv, bv, wo, bo;
  TensorSlot ln2_g, ln2_b;
  TensorSlot w1, b1, w2, b2;
};

struct AdapterSlots {
  TensorSlot a_q, b_q, a_v, b_v;
};

struct ParamLayout {
  ParamLayout(const ModelConfig& model, const LoraConfig& lora);

  TensorSlot wte, wpe, lnf_g, lnf_b, head;
  std::vector<LayerSlots> layers;
  std::vector<AdapterSlots> adapters;
  size_t base_size = 0;
  size_t adapter_size = 0;
};

struct ParameterSet {
  ModelConfig model;
  LoraConfig lora;
  std::vector<double> base;
  std::vector<double> adapters;

  size_t trainable_dim() const { return adapters.size(); }
  bool operator==(const ParameterSet&) const = default;
};

// Base weights ~ N(0, 0.02), residual output projections scaled by
// 1/sqrt(2 * n_layers); adapter A ~ N(0, 1/rank), adapter B = 0.
ParameterSet InitModel(const ModelConfig& model, const LoraConfig& lora,
                       uint64_t seed);

// Fresh adapters only (A random, B zero), drawn from their own substream so
// they do not depend on how the base weights were produced.
std::vector<double> InitAdapters(const ModelConfig& model, const LoraConfig& lora,
                                 uint64_t seed);

// FNV-1a over the raw bytes of the frozen weights.
uint64_t HashBase(const ParameterSet& params);

// Full-sequence logits, (T x vocab) row-major. With apply_adapters == false
// the adapter path is skipped entirely.
std::vector<double> Logits(const ParameterSet& params, std::span<const Token> tokens,
                           bool apply_adapters = true);

// Mean masked cross-entropy of one example.
double ExampleLoss(const ParameterSet& params, const FimExample& example,
                   bool apply_adapters = true);

struct Gradients {
  std::vector<double> base;      // empty unless requested
  std::vector<double> adapters;
};

// Loss of one example together with its gradient. Base gradients are only
// materialized when `with_base` is set.
double ExampleLossAndGradient(const ParameterSet& params, const FimExample& example,
                              bool with_base, Gradients& grad);

struct Batch {
  std::vector<const FimExample*> examples;
  // Positions of the examples in the list they were drawn from.
  std::vector<size_t> indices;

  size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

Batch MakeBatch(std::span<const FimExample> examples);

struct BatchLoss {
  std::vector<double> per_example;  // aligned with the batch
  double mean = 0.0;
  // Examples with no masked target; reported with loss NaN and left out of
  // the mean.
  std::vector<std::string> excluded;
};

BatchLoss ForwardLoss(const ParameterSet& params, const Batch& batch);

// Gradient of each example's loss with respect to the adapter scalars, one
// vector of length trainable_dim() per example.
std::vector<std::vector<double>> PerExampleGradients(
    const ParameterSet& params, const Batch& batch,
    std::vector<double>* losses = nullptr);

// Greedy infilling from the [MID] position. Stops at EOM or after max_new
// tokens and returns only the generated middle.
std::string GenerateCompletion(const ParameterSet& params, std::string_view prefix,
                               std::string_view suffix, int max_new);

// Versioned binary container. See README for the byte layout.
struct Checkpoint {
  ParameterSet params;
  nlohmann::json state = nlohmann::json::object();
  std::map<std::string, std::vector<double>> blobs;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

nlohmann::json ToJson(const ModelConfig& cfg);
nlohmann::json ToJson(const LoraConfig& cfg);

}  // namespace dpfim

#endif  // DPFIM_MODEL_H_
