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

#ifndef NARSEQ_CLI_HPP
#define NARSEQ_CLI_HPP

namespace narseq {

// Entry point for the narseq command-line tool. Exit codes: 0 success,
// 2 usage error, 3 infeasible configuration, 4 numerical failure.
int run_cli(int argc, const char* const* argv);

}  // namespace narseq

#endif  // NARSEQ_CLI_HPP
