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

#ifndef NARSEQ_TASKS_HPP
#define NARSEQ_TASKS_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "narseq/ctc.hpp"

namespace narseq {

enum class TaskKind { copy, grounding, jitter, multiref };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

struct TaskSpec {
  TaskKind kind{TaskKind::copy};
  int vocab_content{10};  // content alphabet (copy/jitter/multiref) or label count
  int len_min{2};
  int len_max{6};
  int n_train{2000};
  int n_val{0};
  int n_test{200};
  uint64_t seed{0};
  int k_refs{4};       // multiref: reference orderings kept per sample
  int grid{16};        // grounding: coordinate quantization bins
  int jitter_max{2};   // jitter: maximum filler prefix length
  // copy/jitter: forbid adjacent equal content tokens, so every target's
  // minimum alignment length equals its length (tight query counts stay
  // feasible).
  bool no_adjacent_repeats{false};

  void validate() const;
};

struct Sample {
  TokenSeq input;
  TokenSeq target;
  std::vector<TokenSeq> valid_refs;  // includes target at generation time
};

struct Dataset {
  TaskSpec spec;
  int vocab_in_size{0};
  Vocab vocab_out;
  int filler_id{-1};  // jitter only: the neutral prefix token
  bool distilled{false};
  int max_min_path_length{0};
  std::vector<Sample> train, val, test;

  const std::vector<Sample>& split(const std::string& name) const;
};

// Seeded generators. Splits are disjoint by construction: samples are
// drawn from one deduplicated stream and sliced into train/val/test
// index ranges.
Dataset gen_copy(const TaskSpec& spec);
Dataset gen_grounding(const TaskSpec& spec);
Dataset gen_jitter(const TaskSpec& spec);
Dataset gen_multiref(const TaskSpec& spec);
Dataset generate(const TaskSpec& spec);

// Grounding helpers: coordinate value <-> output token id.
inline int coord_to_token(int v) { return v + 1; }
inline int token_to_coord(int id) { return id - 1; }

// Drops the jitter filler token (no-op when filler_id < 0).
TokenSeq strip_filler(const TokenSeq& seq, int filler_id);

// Any-reference exact match after filler stripping.
bool prediction_matches(const Dataset& data, const Sample& sample,
                        const TokenSeq& prediction);

// JSONL splits plus a JSON header sidecar under `prefix`. Existing
// files are refused unless force is set.
void save_dataset(const Dataset& data, const std::filesystem::path& prefix,
                  bool force = false);
Dataset load_dataset(const std::filesystem::path& prefix);

}  // namespace narseq

#endif  // NARSEQ_TASKS_HPP
