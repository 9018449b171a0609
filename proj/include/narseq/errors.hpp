// Copyright 2026 The narseq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef NARSEQ_ERRORS_HPP
#define NARSEQ_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace narseq {

// Caller passed arguments that violate a documented precondition.
// CLI exit code 2.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

// A configuration that can never produce a valid alignment or run,
// e.g. fewer query positions than the shortest feasible path for a
// target. Distinct from UsageError so callers can report which input
// is unsatisfiable rather than which argument is malformed.
// CLI exit code 3.
class InfeasibleConfigError : public std::runtime_error {
 public:
  explicit InfeasibleConfigError(const std::string& what)
      : std::runtime_error(what) {}
};

// Non-finite values or other numerical breakdown at runtime.
// CLI exit code 4.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace narseq

#endif  // NARSEQ_ERRORS_HPP
