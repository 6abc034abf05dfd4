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

#include "dpfim/corpus.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dpfim/error.h"

namespace dpfim {
namespace {

namespace fs = std::filesystem;

bool IsContinuationByte(Token t) { return t >= 0x80 && t <= 0xBF; }

// Largest cut <= n that does not split a multi-byte character.
size_t Utf8SafeLength(std::string_view text, size_t n) {
  if (n >= text.size()) return text.size();
  while (n > 0 && IsContinuationByte(static_cast<unsigned char>(text[n]))) --n;
  return n;
}

size_t PartitionSize(double fraction, size_t n) {
  return static_cast<size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

}  // namespace

std::vector<Token> Tokenize(std::string_view text) {
  std::vector<Token> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<Token>(c));
  return out;
}

std::string Detokenize(std::span<const Token> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (Token t : tokens) {
    if (Tokenizer::IsByte(t)) out.push_back(static_cast<char>(t));
  }
  return out;
}

bool IsValidUtf8(std::string_view text) {
  size_t i = 0;
  const size_t n = text.size();
  while (i < n) {
    const unsigned char c = text[i];
    size_t len;
    uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (size_t k = 1; k < len; ++k) {
      const unsigned char cc = text[i + k];
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong encodings, surrogates and out-of-range code points.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
        (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
        (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += len;
  }
  return true;
}

std::vector<Document> IngestCorpus(const fs::path& root,
                                   const std::set<std::string>& extensions,
                                   size_t max_bytes) {
  std::error_code ec;
  if (!fs::exists(root, ec)) {
    throw MissingInputError("corpus directory does not exist: " + root.string());
  }
  if (!fs::is_directory(root, ec)) {
    throw ConfigError("corpus root is not a directory: " + root.string());
  }

  std::vector<fs::path> files;
  fs::recursive_directory_iterator it(root, ec);
  if (ec) {
    throw ConfigError("cannot read corpus directory " + root.string() + ": " +
                      ec.message());
  }
  for (const fs::directory_entry& entry : it) {
    if (!entry.is_regular_file()) continue;
    if (!extensions.empty() &&
        !extensions.contains(entry.path().extension().string())) {
      continue;
    }
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [&](const fs::path& a, const fs::path& b) {
    return a.lexically_relative(root).generic_string() <
           b.lexically_relative(root).generic_string();
  });

  std::vector<Document> docs;
  for (const fs::path& path : files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      std::cerr << "warning: skipping unreadable file " << path << "\n";
      continue;
    }
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    if (!IsValidUtf8(text)) {
      std::cerr << "warning: skipping non-UTF-8 file " << path << "\n";
      continue;
    }
    text.resize(Utf8SafeLength(text, max_bytes));
    if (text.empty()) continue;
    docs.push_back(Document{path.lexically_relative(root).generic_string(),
                            std::move(text), path.string()});
  }
  return docs;
}

FimExample AssembleFim(std::string id, std::vector<Token> prefix,
                       std::vector<Token> middle, std::vector<Token> suffix) {
  FimExample ex;
  ex.id = std::move(id);
  ex.prefix = std::move(prefix);
  ex.middle = std::move(middle);
  ex.suffix = std::move(suffix);

  auto& seq = ex.sequence;
  seq.reserve(ex.prefix.size() + ex.middle.size() + ex.suffix.size() + 4);
  seq.push_back(Tokenizer::kPre);
  seq.insert(seq.end(), ex.prefix.begin(), ex.prefix.end());
  seq.push_back(Tokenizer::kSuf);
  seq.insert(seq.end(), ex.suffix.begin(), ex.suffix.end());
  seq.push_back(Tokenizer::kMid);
  seq.insert(seq.end(), ex.middle.begin(), ex.middle.end());
  seq.push_back(Tokenizer::kEom);

  ex.loss_mask.assign(seq.size(), 0);
  for (size_t t = static_cast<size_t>(ex.mid_position()); t + 1 < seq.size(); ++t) {
    ex.loss_mask[t] = 1;
  }
  return ex;
}

FimExample AssembleFim(std::string id, std::span<const Token> tokens, size_t i,
                       size_t j) {
  return AssembleFim(std::move(id),
                     std::vector<Token>(tokens.begin(), tokens.begin() + i),
                     std::vector<Token>(tokens.begin() + i, tokens.begin() + j),
                     std::vector<Token>(tokens.begin() + j, tokens.end()));
}

std::optional<FimExample> MakeFimExample(const Document& doc, Rng& rng,
                                         const FimOptions& options) {
  if (options.max_len < 5 || options.min_middle < 1) {
    throw ConfigError("FIM options need max_len >= 5 and min_middle >= 1");
  }
  const size_t window =
      Utf8SafeLength(doc.text, static_cast<size_t>(options.max_len - 4));
  const std::vector<Token> tokens = Tokenize(std::string_view(doc.text).substr(0, window));
  const size_t n = tokens.size();
  const size_t min_middle = static_cast<size_t>(options.min_middle);
  if (n < min_middle + 2) return std::nullopt;

  std::vector<size_t> cuts;
  for (size_t p = 0; p <= n; ++p) {
    if (p == n || !IsContinuationByte(tokens[p])) cuts.push_back(p);
  }
  // later[k]: number of admissible right cuts for left cut cuts[k].
  std::vector<uint64_t> later(cuts.size());
  uint64_t total = 0;
  for (size_t k = 0; k < cuts.size(); ++k) {
    auto first = std::lower_bound(cuts.begin() + k, cuts.end(), cuts[k] + min_middle);
    later[k] = static_cast<uint64_t>(cuts.end() - first);
    total += later[k];
  }
  if (total == 0) return std::nullopt;

  uint64_t pick = std::uniform_int_distribution<uint64_t>(0, total - 1)(rng);
  size_t k = 0;
  while (pick >= later[k]) {
    pick -= later[k];
    ++k;
  }
  const size_t i = cuts[k];
  const size_t j = cuts[cuts.size() - later[k] + pick];
  return AssembleFim(doc.id, tokens, i, j);
}

CorpusSplit BuildSplits(std::vector<FimExample> examples, uint64_t seed,
                        const SplitFractions& fractions) {
  const double sum = fractions.member + fractions.nonmember + fractions.eval;
  if (fractions.member < 0 || fractions.nonmember < 0 || fractions.eval < 0 ||
      sum > 1.0 + 1e-12) {
    throw ConfigError("split fractions must be non-negative and sum to <= 1 (got " +
                      std::to_string(sum) + ")");
  }
  const size_t n = examples.size();
  const size_t n_member = PartitionSize(fractions.member, n);
  const size_t n_nonmember = PartitionSize(fractions.nonmember, n);
  const size_t n_eval = PartitionSize(fractions.eval, n);
  if (n_member == 0 || n_nonmember == 0 || n_eval == 0) {
    throw ConfigError("split would be empty: " + std::to_string(n) +
                      " examples give sizes (" + std::to_string(n_member) + ", " +
                      std::to_string(n_nonmember) + ", " + std::to_string(n_eval) +
                      ")");
  }

  Rng rng = Substream(seed, "splits");
  std::shuffle(examples.begin(), examples.end(), rng);

  CorpusSplit split;
  auto take = [&](size_t begin, size_t count, std::vector<FimExample>& out) {
    out.assign(std::make_move_iterator(examples.begin() + begin),
               std::make_move_iterator(examples.begin() + begin + count));
  };
  take(0, n_member, split.members);
  take(n_member, n_nonmember, split.nonmembers);
  take(n_member + n_nonmember, n_eval, split.eval);
  const size_t used = n_member + n_nonmember + n_eval;
  take(used, n - used, split.public_pool);
  return split;
}

std::vector<FimExample> InjectDuplicates(const std::vector<FimExample>& members,
                                         int copies, double fraction, Rng& rng) {
  if (copies < 1 || fraction < 0.0 || fraction > 1.0) {
    throw ConfigError("duplicate injection needs copies >= 1 and fraction in [0, 1]");
  }
  if (copies == 1) return members;
  const size_t n_canary = PartitionSize(fraction, members.size());
  if (n_canary == 0) return members;

  std::vector<size_t> order(members.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<uint8_t> chosen(members.size(), 0);
  for (size_t k = 0; k < n_canary; ++k) chosen[order[k]] = 1;

  std::vector<FimExample> out;
  out.reserve(members.size() + n_canary * static_cast<size_t>(copies - 1));
  for (size_t k = 0; k < members.size(); ++k) {
    if (!chosen[k]) {
      out.push_back(members[k]);
      continue;
    }
    FimExample canary = members[k];
    canary.is_canary = true;
    for (int c = 0; c < copies; ++c) out.push_back(canary);
  }
  return out;
}

void WriteExamplesJsonl(const fs::path& path, const std::vector<FimExample>& examples) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const FimExample& ex : examples) {
    nlohmann::ordered_json rec;
    rec["id"] = ex.id;
    rec["prefix"] = Detokenize(ex.prefix);
    rec["middle"] = Detokenize(ex.middle);
    rec["suffix"] = Detokenize(ex.suffix);
    rec["duplicate"] = ex.is_canary;
    out << rec.dump() << "\n";
  }
}

std::vector<FimExample> ReadExamplesJsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("missing split file: " + path.string());
  std::vector<FimExample> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      FimExample ex = AssembleFim(rec.at("id").get<std::string>(),
                                  Tokenize(rec.at("prefix").get<std::string>()),
                                  Tokenize(rec.at("middle").get<std::string>()),
                                  Tokenize(rec.at("suffix").get<std::string>()));
      ex.is_canary = rec.value("duplicate", false);
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dpfim
