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

#ifndef DPFIM_RNG_H_
#define DPFIM_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>

namespace dpfim {

using Rng = std::mt19937_64;

// 64-bit FNV-1a over raw bytes.
uint64_t Fnv1a64(std::string_view bytes, uint64_t basis = 0xcbf29ce484222325ULL);

// Derives an independent generator for a named stage of the pipeline. The
// same (master_seed, name, index) triple always yields the same stream, and
// distinct names never share state, so reseeding or reordering one stage
// leaves every other stage's randomness untouched.
Rng Substream(uint64_t master_seed, std::string_view name, uint64_t index = 0);

// A 64-bit seed for a named stage, for APIs that take a seed instead of a
// generator.
uint64_t DeriveSeed(uint64_t master_seed, std::string_view name);

}  // namespace dpfim

#endif  // DPFIM_RNG_H_
