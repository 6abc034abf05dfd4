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

#ifndef DPFIM_ERROR_H_
#define DPFIM_ERROR_H_

#include <stdexcept>
#include <string>

namespace dpfim {

// Failure categories. Each maps onto a distinct process exit code in the CLI.
enum class ErrorKind {
  kConfig,
  kMissingInput,
  kBudgetExhausted,
  kNumeric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error ConfigError(const std::string& message) {
  return Error(ErrorKind::kConfig, message);
}
inline Error MissingInputError(const std::string& message) {
  return Error(ErrorKind::kMissingInput, message);
}
inline Error NumericError(const std::string& message) {
  return Error(ErrorKind::kNumeric, message);
}

// Process exit codes: 0 is success, 1 is reserved for unexpected failures.
inline int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kMissingInput:
      return 3;
    case ErrorKind::kBudgetExhausted:
      return 4;
    case ErrorKind::kNumeric:
      return 5;
  }
  return 1;
}

}  // namespace dpfim

#endif  // DPFIM_ERROR_H_
