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

// Corpus ingestion, byte-level tokenization and fill-in-the-middle layout.

#ifndef DPFIM_CORPUS_H_
#define DPFIM_CORPUS_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpfim/rng.h"

namespace dpfim {

using Token = int32_t;

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by five
// sentinels that can never be produced from text.
struct Tokenizer {
  static constexpr Token kPre = 256;
  static constexpr Token kSuf = 257;
  static constexpr Token kMid = 258;
  static constexpr Token kEom = 259;
  static constexpr Token kPad = 260;
  static constexpr int kVocabSize = 261;

  static bool IsByte(Token t) { return t >= 0 && t < 256; }
};

std::vector<Token> Tokenize(std::string_view text);

// Sentinel ids have no byte representation and are dropped.
std::string Detokenize(std::span<const Token> tokens);

struct Document {
  std::string id;
  std::string text;
  std::string origin;
};

bool IsValidUtf8(std::string_view text);

// Returns every regular file under `root` whose extension is in `extensions`,
// sorted by relative path. Text is cut to at most `max_bytes` (never inside a
// UTF-8 sequence). Files that are empty or not valid UTF-8 are skipped with a
// warning on stderr.
std::vector<Document> IngestCorpus(const std::filesystem::path& root,
                                   const std::set<std::string>& extensions,
                                   size_t max_bytes);

struct FimOptions {
  int min_middle = 8;
  int max_len = 256;
};

struct FimExample {
  std::string id;
  std::vector<Token> prefix;
  std::vector<Token> middle;
  std::vector<Token> suffix;
  // [PRE] prefix [SUF] suffix [MID] middle [EOM]
  std::vector<Token> sequence;
  // loss_mask[t] is set when position t predicts a token of middle or the
  // closing EOM.
  std::vector<uint8_t> loss_mask;
  bool is_canary = false;

  int mid_position() const {
    return static_cast<int>(prefix.size() + suffix.size()) + 2;
  }
};

// Lays out tokens[0, i) / [i, j) / [j, n) in prefix-suffix-middle order.
FimExample AssembleFim(std::string id, std::span<const Token> tokens, size_t i,
                       size_t j);
FimExample AssembleFim(std::string id, std::vector<Token> prefix,
                       std::vector<Token> middle, std::vector<Token> suffix);

// Draws cut points uniformly among all pairs i < j (on UTF-8 character
// boundaries) with j - i >= min_middle. Documents longer than
// max_len - 4 tokens contribute their leading slice. Returns nullopt when the
// document is too short to host a middle of the requested size.
std::optional<FimExample> MakeFimExample(const Document& doc, Rng& rng,
                                         const FimOptions& options);

struct SplitFractions {
  double member = 0.5;
  double nonmember = 0.3;
  double eval = 0.1;
};

struct CorpusSplit {
  std::vector<FimExample> members;
  std::vector<FimExample> nonmembers;
  std::vector<FimExample> eval;
  // Whatever the three fractions leave over. Used as the public data for the
  // base-model phase; never overlaps the other three.
  std::vector<FimExample> public_pool;
};

// Seeded shuffle followed by a contiguous partition.
CorpusSplit BuildSplits(std::vector<FimExample> examples, uint64_t seed,
                        const SplitFractions& fractions);

// Repeats a random `fraction` of members `copies` times in total and flags
// them as canaries. Copies follow their original.
std::vector<FimExample> InjectDuplicates(const std::vector<FimExample>& members,
                                         int copies, double fraction, Rng& rng);

// One JSON object per line: id, prefix, middle, suffix, duplicate.
void WriteExamplesJsonl(const std::filesystem::path& path,
                        const std::vector<FimExample>& examples);
std::vector<FimExample> ReadExamplesJsonl(const std::filesystem::path& path);

}  // namespace dpfim

#endif  // DPFIM_CORPUS_H_
