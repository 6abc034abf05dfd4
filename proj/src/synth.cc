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

#include "dpfim/synth.h"

#include <array>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "dpfim/error.h"
#include "dpfim/rng.h"

namespace dpfim {
namespace {

constexpr std::array<const char*, 24> kNouns = {
    "User",  "Order", "Token",  "Cache", "Route",  "Price", "Event",  "Queue",
    "Asset", "Photo", "Ledger", "Quota", "Report", "Badge", "Ticket", "Vault",
    "Phone", "Sheet", "Trace",  "Frame", "Score",  "Store", "Entry",  "Layer"};
constexpr std::array<const char*, 12> kVerbs = {"load", "save",  "parse", "build",
                                                "check", "merge", "fetch", "apply",
                                                "scale", "count", "reset", "sync"};
constexpr std::array<const char*, 10> kPackages = {"core", "api",   "infra", "billing", "auth",
                                                   "data", "media", "sync",  "search",  "ui"};
constexpr std::array<const char*, 8> kArgs = {"n", "x", "size", "id", "limit", "step", "k", "v"};

class Picker {
 public:
  explicit Picker(Rng rng) : rng_(std::move(rng)) {}

  template <size_t N>
  const char* Pick(const std::array<const char*, N>& items) {
    return items[std::uniform_int_distribution<size_t>(0, N - 1)(rng_)];
  }
  int Int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  std::string Hex(int len) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string s;
    for (int i = 0; i < len; ++i) s.push_back(kDigits[Int(0, 15)]);
    return s;
  }

 private:
  Rng rng_;
};

}  // namespace

std::string SynthesizeKotlinFile(uint64_t seed, uint64_t index) {
  Picker p(Substream(seed, "synth", index));
  const std::string noun = p.Pick(kNouns);
  const std::string verb = p.Pick(kVerbs);
  const std::string arg = p.Pick(kArgs);
  std::ostringstream out;
  out << "package acme." << p.Pick(kPackages) << "\n";
  switch (p.Int(0, 2)) {
    case 0:
      out << "fun " << verb << noun << "(" << arg << ": Int): Int {\n"
          << "    val key = \"" << p.Hex(8) << "\"\n"
          << "    val m = " << p.Int(100, 9999) << "\n"
          << "    return " << arg << " * m + " << p.Int(0, 999) << "\n"
          << "}\n";
      break;
    case 1:
      out << "data class " << noun << p.Pick(kNouns) << "(\n"
          << "    val id: Long = " << p.Int(1000, 99999) << ",\n"
          << "    val tag: String = \"" << p.Hex(8) << "\",\n"
          << "    val rank: Int = " << p.Int(0, 999) << "\n"
          << ")\n";
      break;
    default:
      out << "object " << noun << "Config {\n"
          << "    const val LIMIT = " << p.Int(1, 9999) << "\n"
          << "    const val SECRET = \"" << p.Hex(12) << "\"\n"
          << "    const val SALT = " << p.Int(100, 999) << "\n"
          << "}\n";
      break;
  }
  return out.str();
}

void WriteSyntheticCorpus(const std::filesystem::path& dir, size_t n_files, uint64_t seed) {
  const std::filesystem::path src = dir / "src";
  std::filesystem::create_directories(src);
  for (size_t i = 0; i < n_files; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "f%05zu.kt", i);
    std::ofstream out(src / name, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + (src / name).string());
    out << SynthesizeKotlinFile(seed, i);
  }
}

}  // namespace dpfim
