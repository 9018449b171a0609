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

#ifndef NARSEQ_TRAINING_HPP
#define NARSEQ_TRAINING_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "narseq/model.hpp"
#include "narseq/tasks.hpp"

namespace narseq {

enum class LossKind { qctc, ce };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);

struct TrainConfig {
  int epochs{40};
  int batch_size{16};
  double lr{3e-4};
  double beta1{0.9};
  double beta2{0.98};
  double weight_decay{0.0};
  double grad_clip{1.0};
  uint64_t seed{0};
  LossKind loss_kind{LossKind::qctc};
  bool distill{false};  // provenance flag echoed into reports

  void validate() const;
  std::string to_json_string() const;
};

struct EvalOptions {
  std::string method{"greedy"};  // greedy | prefix-beam | ar-beam
  int beam_width{5};
};

struct EvalMetrics {
  double exact_match{0.0};
  double token_accuracy{0.0};
  uint64_t decoder_passes{0};
  int n_samples{0};
};

struct TrainReport {
  std::vector<double> epoch_losses;   // mean per-example loss per epoch
  EvalMetrics final_eval;             // greedy decode on the test split
  double wall_seconds{0.0};           // measurement; excluded from determinism
  PassStats train_passes;

  std::string to_json_string() const;
};

struct DistillStats {
  int replaced{0};
  int kept_original_empty{0};  // teacher emitted nothing; original target kept
};

// Model configuration derived from a dataset's vocabularies, with the
// desk-scale architecture defaults.
ModelConfig default_model_config(const Dataset& data, DecoderKind kind,
                                 int n_queries);

// The target the optimizer sees for one sample in one epoch: raw
// multi-reference samples draw a reference uniformly (keyed by seed,
// epoch, and sample index); distilled or single-reference samples use
// the stored target.
const TokenSeq& epoch_training_target(const Dataset& data, size_t sample_index,
                                      uint64_t seed, int epoch);

// Teacher-forced next-token cross entropy on an autoregressive model.
std::pair<ModelParams, TrainReport> train_teacher(const Dataset& data,
                                                  const ModelConfig& model_cfg,
                                                  const TrainConfig& cfg);

// Q-CTC (or blank-padded CE) training of a parallel decoder; gradients
// flow through the decoder into the encoder and the query tokens.
std::pair<ModelParams, TrainReport> train_student(const Dataset& data,
                                                  const ModelConfig& model_cfg,
                                                  const TrainConfig& cfg);

// Replaces every training target with the teacher's greedy decode.
// Inputs, split membership, and evaluation references stay untouched.
// An empty teacher decode keeps the original target and is counted.
Dataset distill_targets(const ModelParams& teacher, const Dataset& data,
                        DistillStats* stats = nullptr);

EvalMetrics evaluate(const ModelParams& params, const Dataset& data,
                     const std::string& split, const EvalOptions& opts = {});

}  // namespace narseq

#endif  // NARSEQ_TRAINING_HPP
