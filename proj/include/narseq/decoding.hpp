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

#ifndef NARSEQ_DECODING_HPP
#define NARSEQ_DECODING_HPP

#include <cstdint>
#include <optional>

#include "narseq/ctc.hpp"
#include "narseq/model.hpp"
#include "narseq/numerics.hpp"

namespace narseq {

struct BeamConfig {
  int width{1};
  int max_len{32};  // autoregressive decoding only
};

struct DecodeResult {
  TokenSeq sequence;
  LogProb score;
  std::optional<AlignmentPath> raw_path;  // pre-collapse path, greedy only
  uint64_t passes{0};                     // decoder forward passes consumed
};

// Per-position argmax (ties -> lowest token id), then collapse. The
// score is the log probability of the chosen path, not of the
// collapsed sequence.
DecodeResult nar_greedy(const LogitGrid& logits, const Vocab& vocab);

// CTC prefix beam search: tracks (blank-ending, nonblank-ending) log
// mass per collapsed prefix and returns the prefix with the highest
// total mass. With width >= d^N nothing is pruned and the result is
// the exact argmax by collapsed-sequence mass.
DecodeResult nar_prefix_beam(const LogitGrid& logits, const Vocab& vocab,
                             const BeamConfig& beam);

// Greedy autoregressive decoding until EOS or max_len tokens. The
// candidate set is the content vocabulary plus EOS; BOS and blank are
// input-/loss-only symbols and are never emitted. The score is the
// cumulative log probability divided by the number of steps taken.
DecodeResult ar_greedy(const ModelParams& params, const EncoderOutput& enc,
                       int max_len, PassStats* stats = nullptr);

// Length-normalized beam search over autoregressive steps. Width 1
// reduces exactly to ar_greedy.
DecodeResult ar_beam(const ModelParams& params, const EncoderOutput& enc,
                     const BeamConfig& beam, PassStats* stats = nullptr);

}  // namespace narseq

#endif  // NARSEQ_DECODING_HPP
