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

// Generator for a small Kotlin-flavoured corpus. Every file mixes shared
// boilerplate with per-file random content (identifiers, constants,
// credential-like strings), which is what a model can only learn by
// memorizing that file.

#ifndef DPFIM_SYNTH_H_
#define DPFIM_SYNTH_H_

#include <cstdint>
#include <filesystem>
#include <string>

namespace dpfim {

std::string SynthesizeKotlinFile(uint64_t seed, uint64_t index);

// Writes n_files files named src/f00000.kt, ... under `dir`.
void WriteSyntheticCorpus(const std::filesystem::path& dir, size_t n_files, uint64_t seed);

}  // namespace dpfim

#endif  // DPFIM_SYNTH_H_
