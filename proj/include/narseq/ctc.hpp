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

#ifndef NARSEQ_CTC_HPP
#define NARSEQ_CTC_HPP

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "narseq/numerics.hpp"

namespace narseq {

// Token inventory. Slot 0 is always the blank symbol; everything else
// is a content token. Serialized artifacts rely on blank_id == 0.
struct Vocab {
  int size{0};
  int blank_id{0};
  std::vector<std::string> names;  // empty, or one unique name per id

  static Vocab with_size(int size);
  static Vocab with_names(std::vector<std::string> names);  // names[0] = blank
};

struct TokenSeq {
  std::vector<int> ids;

  TokenSeq() = default;
  explicit TokenSeq(std::vector<int> v) : ids(std::move(v)) {}
  TokenSeq(std::initializer_list<int> v) : ids(v) {}

  int length() const { return static_cast<int>(ids.size()); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSeq&) const = default;
  auto operator<=>(const TokenSeq&) const = default;
};

// One length-N assignment of a token (blanks allowed) to every
// decoder position.
struct AlignmentPath {
  std::vector<int> ids;

  AlignmentPath() = default;
  explicit AlignmentPath(std::vector<int> v) : ids(std::move(v)) {}
  AlignmentPath(std::initializer_list<int> v) : ids(v) {}

  int length() const { return static_cast<int>(ids.size()); }
  bool operator==(const AlignmentPath&) const = default;
};

// N x d grid of unnormalized scores, one row per decoder position.
struct LogitGrid {
  Tensor2 values;

  LogitGrid() = default;
  LogitGrid(int n_positions, int vocab_size) : values(n_positions, vocab_size) {}
  explicit LogitGrid(Tensor2 v) : values(std::move(v)) {}

  int n_positions() const { return values.rows; }
  int vocab_size() const { return values.cols; }
};

// Merge maximal runs of identical non-blank tokens into one token,
// then drop blanks. Runs separated by a blank are not merged.
TokenSeq collapse(const AlignmentPath& path, const Vocab& vocab);

// All length-n_positions paths whose collapse equals `target`, found
// by scanning every one of the d^N candidates. Throws UsageError once
// the scan would exceed `scan_cap` candidates; use the DP instead.
std::vector<AlignmentPath> enumerate_valid_paths(const TokenSeq& target,
                                                 int n_positions,
                                                 const Vocab& vocab,
                                                 uint64_t scan_cap = 10'000'000);

// Smallest N that admits a valid path: T plus the number of adjacent
// equal-token pairs (each repeat needs a separating blank).
int min_path_length(const TokenSeq& target);

// Blank-interleaved state sequence [-, y_1, -, y_2, -, ..., y_T, -]
// used by the forward-backward DP.
std::vector<int> extended_target(const TokenSeq& target, const Vocab& vocab);

struct LossResult {
  double loss{0.0};
  Tensor2 grad;  // same shape as the logits
};

// Negative log marginal probability of `target` under per-position
// softmax distributions, summed over every valid alignment path, with
// the exact gradient with respect to each logit:
//   grad[i][c] = softmax(logits_i)[c] - P(path emits c at i | path valid).
// Runs fully in log space. Throws InfeasibleConfigError when
// N < min_path_length(target).
LossResult qctc_loss(const LogitGrid& logits, const TokenSeq& target,
                     const Vocab& vocab);

// Position-wise cross entropy against the target padded to N with
// blanks; mean over positions, exact gradient. Throws UsageError when
// the target is longer than the grid.
LossResult ce_loss(const LogitGrid& logits, const TokenSeq& target,
                   const Vocab& vocab);

}  // namespace narseq

#endif  // NARSEQ_CTC_HPP
