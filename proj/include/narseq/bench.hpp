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

#ifndef NARSEQ_BENCH_HPP
#define NARSEQ_BENCH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "narseq/model.hpp"
#include "narseq/tasks.hpp"
#include "narseq/training.hpp"

namespace narseq {

struct BenchConfig {
  std::vector<int> lengths{2, 5, 10, 20};
  int n_sequences{200};  // timed decodes per length, after warm-up
  int warmup{10};        // discarded decodes per length
  uint64_t seed{0};
  bool force_len{true};  // drive the AR decoder for exactly len tokens + EOS
  int threads{1};        // timing requires 1; kept as an explicit knob
};

struct BenchRow {
  int target_len{0};
  double ar_ms_mean{0.0};
  double nar_ms_mean{0.0};
  uint64_t ar_passes_per_seq{0};
  uint64_t nar_passes_per_seq{0};
  double speedup{0.0};  // ar_ms_mean / nar_ms_mean
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double ar_slope_ms_per_token{0.0};   // least-squares fit of mean ms vs len
  double nar_slope_ms_per_token{0.0};
  double slope_ratio{0.0};             // |nar slope| / ar slope
  std::string environment;

  std::string to_json_string() const;
};

// Times decode-only wall clock (encoding precomputed) for an AR and a
// NAR checkpoint over synthetic inputs of each target length.
BenchReport run_bench(const ModelParams& ar, const ModelParams& nar,
                      const BenchConfig& cfg);

struct ErrorPropBin {
  int threshold{0};       // first-token error >= threshold
  int ar_count_at{0};     // samples whose first-token error == threshold
  int ar_count_ge{0};
  bool ar_reliable{false};
  double ar_mean_remaining{0.0};
  int nar_count_at{0};
  int nar_count_ge{0};
  bool nar_reliable{false};
  double nar_mean_remaining{0.0};
};

struct ErrorPropReport {
  std::vector<ErrorPropBin> bins;  // thresholds 0..max observed error
  int n_samples{0};
  int min_bin_count{10};

  std::string to_csv() const;
  static ErrorPropReport from_csv(const std::string& text);
};

// Box-coordinate error propagation on a grounding dataset: first-token
// error vs mean error of the remaining three tokens, cumulative from
// each threshold upward.
ErrorPropReport run_error_prop(const ModelParams& ar, const ModelParams& nar,
                               const Dataset& grounding,
                               const std::string& split = "test",
                               int min_bin_count = 10);

struct SweepRow {
  int n_queries{0};
  bool feasible{false};
  double exact_match{0.0};
  double latency_ms{0.0};
};

struct SweepReport {
  std::vector<SweepRow> rows;

  std::string to_csv() const;
  static SweepReport from_csv(const std::string& text);
};

// Trains and evaluates the parallel decoder at each query count;
// counts below the dataset's minimum feasible alignment length are
// flagged instead of trained.
SweepReport sweep_queries(const Dataset& data, const ModelConfig& base_cfg,
                          const TrainConfig& train_cfg,
                          const std::vector<int>& n_list,
                          int latency_sequences = 100, int latency_warmup = 5);

}  // namespace narseq

#endif  // NARSEQ_BENCH_HPP
