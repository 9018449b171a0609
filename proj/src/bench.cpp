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

#include "narseq/bench.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "narseq/decoding.hpp"
#include "narseq/errors.hpp"

namespace narseq {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// AR decode driven for exactly `len` content tokens plus one EOS step,
// decoupling the timing from model quality.
void ar_forced_decode(const ModelParams& params, const EncoderOutput& enc,
                      int len, PassStats* stats) {
  const ModelConfig& cfg = params.config();
  TokenSeq prefix{cfg.bos_id()};
  for (int step = 0; step < len; ++step) {
    auto logits = decode_ar_step(params, enc, prefix, stats);
    int best = -1;
    for (int c = 1; c < cfg.vocab_out.size; ++c) {  // content tokens only
      if (best < 0 || logits[static_cast<size_t>(c)] > logits[static_cast<size_t>(best)])
        best = c;
    }
    prefix.ids.push_back(best);
  }
  decode_ar_step(params, enc, prefix, stats);  // the EOS step
}

double fit_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw UsageError("slope fit needs at least two distinct lengths");
  return (n * sxy - sx * sy) / denom;
}

}  // namespace

std::string BenchReport::to_json_string() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const BenchRow& r : rows) {
    rows_json.push_back({{"target_len", r.target_len},
                         {"ar_ms_mean", r.ar_ms_mean},
                         {"nar_ms_mean", r.nar_ms_mean},
                         {"ar_passes_per_seq", r.ar_passes_per_seq},
                         {"nar_passes_per_seq", r.nar_passes_per_seq},
                         {"speedup", r.speedup}});
  }
  nlohmann::json j{{"rows", rows_json},
                   {"ar_slope_ms_per_token", ar_slope_ms_per_token},
                   {"nar_slope_ms_per_token", nar_slope_ms_per_token},
                   {"slope_ratio", slope_ratio},
                   {"environment", environment}};
  return j.dump(2);
}

BenchReport run_bench(const ModelParams& ar, const ModelParams& nar,
                      const BenchConfig& cfg) {
  const ModelConfig& acfg = ar.config();
  const ModelConfig& ncfg = nar.config();
  if (!acfg.is_ar()) throw UsageError("bench: --ar checkpoint is not autoregressive");
  if (ncfg.decoder_kind != DecoderKind::lqt_parallel)
    throw UsageError("bench: --nar checkpoint is not a query-token decoder");
  if (acfg.d_model != ncfg.d_model || acfg.n_dec_layers != ncfg.n_dec_layers ||
      acfg.n_enc_layers != ncfg.n_enc_layers || acfg.n_heads != ncfg.n_heads)
    throw UsageError("bench: checkpoints are not size-matched");
  if (acfg.vocab_in != ncfg.vocab_in)
    throw UsageError("bench: checkpoints disagree on the input vocabulary");
  if (cfg.n_sequences < 50)
    throw UsageError("bench: refusing to average fewer than 50 timed decodes");
  if (cfg.warmup < 0) throw UsageError("bench: warmup must be >= 0");
  if (cfg.threads != 1)
    throw UsageError("bench: timing runs single-threaded; set threads to 1");
  if (cfg.lengths.size() < 2)
    throw UsageError("bench: need at least two target lengths for the slope");

  BenchReport report;
  std::vector<double> xs, ar_means, nar_means;
  Rng rng(cfg.seed);

  for (int len : cfg.lengths) {
    if (len < 1 || len > acfg.max_tgt_len || len > acfg.max_src_len)
      throw UsageError("bench: target length outside the checkpoint's caps");

    const int total = cfg.n_sequences + cfg.warmup;
    std::vector<TokenSeq> inputs;
    inputs.reserve(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) {
      TokenSeq src;
      for (int k = 0; k < len; ++k)
        src.ids.push_back(rng.uniform_int(1, acfg.vocab_in - 1));
      inputs.push_back(std::move(src));
    }

    // Encoding happens outside the timed region; the measurement is
    // the decode step alone.
    std::vector<EncoderOutput> ar_enc, nar_enc;
    for (const TokenSeq& src : inputs) {
      ar_enc.push_back(encode(ar, src));
      nar_enc.push_back(encode(nar, src));
    }

    BenchRow row;
    row.target_len = len;
    double ar_total_ms = 0.0, nar_total_ms = 0.0;
    PassStats ar_passes, nar_passes;

    for (int i = 0; i < total; ++i) {
      PassStats per_seq;
      const auto t0 = Clock::now();
      if (cfg.force_len) {
        ar_forced_decode(ar, ar_enc[static_cast<size_t>(i)], len, &per_seq);
      } else {
        ar_greedy(ar, ar_enc[static_cast<size_t>(i)], acfg.max_tgt_len, &per_seq);
      }
      const double ms = ms_since(t0);
      if (i >= cfg.warmup) {
        ar_total_ms += ms;
        ar_passes += per_seq;
      }
    }
    for (int i = 0; i < total; ++i) {
      PassStats per_seq;
      const auto t0 = Clock::now();
      LogitGrid grid = decode_parallel(nar, nar_enc[static_cast<size_t>(i)], nullptr,
                                       &per_seq);
      nar_greedy(grid, ncfg.vocab_out);
      const double ms = ms_since(t0);
      if (i >= cfg.warmup) {
        nar_total_ms += ms;
        nar_passes += per_seq;
      }
    }

    row.ar_ms_mean = ar_total_ms / cfg.n_sequences;
    row.nar_ms_mean = nar_total_ms / cfg.n_sequences;
    row.ar_passes_per_seq = ar_passes.decoder_passes /
                            static_cast<uint64_t>(cfg.n_sequences);
    row.nar_passes_per_seq = nar_passes.decoder_passes /
                             static_cast<uint64_t>(cfg.n_sequences);
    row.speedup = row.ar_ms_mean / row.nar_ms_mean;
    report.rows.push_back(row);

    xs.push_back(static_cast<double>(len));
    ar_means.push_back(row.ar_ms_mean);
    nar_means.push_back(row.nar_ms_mean);
  }

  report.ar_slope_ms_per_token = fit_slope(xs, ar_means);
  report.nar_slope_ms_per_token = fit_slope(xs, nar_means);
  report.slope_ratio =
      std::abs(report.nar_slope_ms_per_token) / report.ar_slope_ms_per_token;

  std::ostringstream env;
  env << "single-threaded in-process timing (threads=1); steady_clock; first "
      << cfg.warmup << " decodes per length discarded; "
      << (cfg.force_len ? "AR driven for exactly len tokens + EOS"
                        : "AR greedy until EOS")
      << "; wall-clock fields are measurements";
  report.environment = env.str();
  return report;
}

// ---- error propagation --------------------------------------------------

namespace {

// First four decoded tokens as grid coordinates; positions the decode
// failed to produce (or produced out of range) count as one full grid
// of error.
std::array<int, 4> coords_or_sentinel(const TokenSeq& seq, int grid) {
  std::array<int, 4> out{-grid, -grid, -grid, -grid};
  for (int k = 0; k < 4 && k < seq.length(); ++k) {
    const int v = token_to_coord(seq.ids[static_cast<size_t>(k)]);
    if (v >= 0 && v < grid) out[static_cast<size_t>(k)] = v;
  }
  return out;
}

struct ErrPair {
  int first{0};
  double remaining{0.0};
};

std::vector<ErrPair> model_errors(const ModelParams& params, const Dataset& data,
                                  const std::vector<Sample>& samples) {
  const ModelConfig& cfg = params.config();
  const int grid = data.spec.grid;
  std::vector<ErrPair> errs;
  errs.reserve(samples.size());
  for (const Sample& s : samples) {
    EncoderOutput enc = encode(params, s.input);
    TokenSeq pred;
    if (cfg.is_ar()) {
      pred = ar_greedy(params, enc, cfg.max_tgt_len).sequence;
    } else {
      pred = nar_greedy(decode_parallel(params, enc), cfg.vocab_out).sequence;
    }
    const auto got = coords_or_sentinel(pred, grid);
    ErrPair e;
    std::array<int, 4> gold{};
    for (int k = 0; k < 4; ++k)
      gold[static_cast<size_t>(k)] = token_to_coord(s.target.ids[static_cast<size_t>(k)]);
    const auto err_at = [&](int k) {
      return std::min(grid, std::abs(got[static_cast<size_t>(k)] -
                                     gold[static_cast<size_t>(k)]));
    };
    e.first = err_at(0);
    e.remaining = (err_at(1) + err_at(2) + err_at(3)) / 3.0;
    errs.push_back(e);
  }
  return errs;
}

}  // namespace

std::string ErrorPropReport::to_csv() const {
  std::ostringstream os;
  os << "threshold,ar_count_at,ar_count_ge,ar_reliable,ar_mean_remaining,"
        "nar_count_at,nar_count_ge,nar_reliable,nar_mean_remaining\n";
  for (const ErrorPropBin& b : bins) {
    os << b.threshold << ',' << b.ar_count_at << ',' << b.ar_count_ge << ','
       << (b.ar_reliable ? 1 : 0) << ',' << b.ar_mean_remaining << ','
       << b.nar_count_at << ',' << b.nar_count_ge << ','
       << (b.nar_reliable ? 1 : 0) << ',' << b.nar_mean_remaining << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace

ErrorPropReport ErrorPropReport::from_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) ||
      line.rfind("threshold,ar_count_at", 0) != 0)
    throw UsageError("error-prop csv: unexpected header");
  ErrorPropReport report;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 9) throw UsageError("error-prop csv: malformed row");
    ErrorPropBin b;
    b.threshold = std::stoi(cells[0]);
    b.ar_count_at = std::stoi(cells[1]);
    b.ar_count_ge = std::stoi(cells[2]);
    b.ar_reliable = std::stoi(cells[3]) != 0;
    b.ar_mean_remaining = std::stod(cells[4]);
    b.nar_count_at = std::stoi(cells[5]);
    b.nar_count_ge = std::stoi(cells[6]);
    b.nar_reliable = std::stoi(cells[7]) != 0;
    b.nar_mean_remaining = std::stod(cells[8]);
    report.bins.push_back(b);
  }
  if (!report.bins.empty()) report.n_samples = report.bins.front().ar_count_ge;
  return report;
}

ErrorPropReport run_error_prop(const ModelParams& ar, const ModelParams& nar,
                               const Dataset& grounding, const std::string& split,
                               int min_bin_count) {
  if (grounding.spec.kind != TaskKind::grounding)
    throw UsageError("error-prop: the dataset must be a grounding task");
  if (!ar.config().is_ar())
    throw UsageError("error-prop: --ar checkpoint is not autoregressive");
  if (ar.config().vocab_out.size != grounding.vocab_out.size ||
      nar.config().vocab_out.size != grounding.vocab_out.size)
    throw UsageError("error-prop: checkpoint vocab does not match the dataset");

  const std::vector<Sample>& samples = grounding.split(split);
  if (samples.empty()) throw UsageError("error-prop: empty split " + split);
  for (const Sample& s : samples) {
    if (s.target.length() != 4)
      throw UsageError("error-prop: grounding targets must be 4 coordinates");
  }

  const auto ar_errs = model_errors(ar, grounding, samples);
  const auto nar_errs = model_errors(nar, grounding, samples);

  int max_err = 0;
  for (const auto& e : ar_errs) max_err = std::max(max_err, e.first);
  for (const auto& e : nar_errs) max_err = std::max(max_err, e.first);

  ErrorPropReport report;
  report.n_samples = static_cast<int>(samples.size());
  report.min_bin_count = min_bin_count;
  for (int t = 0; t <= max_err; ++t) {
    ErrorPropBin bin;
    bin.threshold = t;
    auto fill = [&](const std::vector<ErrPair>& errs, int& count_at, int& count_ge,
                    bool& reliable, double& mean) {
      double total = 0.0;
      for (const ErrPair& e : errs) {
        if (e.first == t) ++count_at;
        if (e.first >= t) {
          ++count_ge;
          total += e.remaining;
        }
      }
      reliable = count_ge >= min_bin_count;
      mean = count_ge > 0 ? total / count_ge : 0.0;
    };
    fill(ar_errs, bin.ar_count_at, bin.ar_count_ge, bin.ar_reliable,
         bin.ar_mean_remaining);
    fill(nar_errs, bin.nar_count_at, bin.nar_count_ge, bin.nar_reliable,
         bin.nar_mean_remaining);
    report.bins.push_back(bin);
  }
  return report;
}

// ---- query-count sweep ---------------------------------------------------

std::string SweepReport::to_csv() const {
  std::ostringstream os;
  os << "n_queries,feasible,exact_match,latency_ms\n";
  for (const SweepRow& r : rows) {
    os << r.n_queries << ',' << (r.feasible ? 1 : 0) << ',';
    if (r.feasible) {
      os << r.exact_match << ',' << r.latency_ms;
    } else {
      os << "infeasible,infeasible";
    }
    os << '\n';
  }
  return os.str();
}

SweepReport SweepReport::from_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) ||
      line.rfind("n_queries,feasible", 0) != 0)
    throw UsageError("sweep csv: unexpected header");
  SweepReport report;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) throw UsageError("sweep csv: malformed row");
    SweepRow r;
    r.n_queries = std::stoi(cells[0]);
    r.feasible = std::stoi(cells[1]) != 0;
    if (r.feasible) {
      r.exact_match = std::stod(cells[2]);
      r.latency_ms = std::stod(cells[3]);
    }
    report.rows.push_back(r);
  }
  return report;
}

SweepReport sweep_queries(const Dataset& data, const ModelConfig& base_cfg,
                          const TrainConfig& train_cfg,
                          const std::vector<int>& n_list,
                          int latency_sequences, int latency_warmup) {
  if (base_cfg.decoder_kind != DecoderKind::lqt_parallel)
    throw UsageError("sweep-queries: base config must use query tokens");
  if (n_list.empty()) throw UsageError("sweep-queries: empty query-count list");

  SweepReport report;
  for (int n : n_list) {
    SweepRow row;
    row.n_queries = n;
    if (n < data.max_min_path_length) {
      row.feasible = false;
      report.rows.push_back(row);
      continue;
    }
    row.feasible = true;

    ModelConfig cfg = base_cfg;
    cfg.n_queries = n;
    auto [params, train_report] = train_student(data, cfg, train_cfg);
    row.exact_match = train_report.final_eval.exact_match;

    // Decode-only latency over re-encoded test inputs.
    Rng rng(train_cfg.seed);
    const std::vector<Sample>& pool =
        data.test.empty() ? data.train : data.test;
    double total_ms = 0.0;
    int timed = 0;
    for (int i = 0; i < latency_sequences + latency_warmup; ++i) {
      const Sample& s = pool[static_cast<size_t>(rng.below(pool.size()))];
      EncoderOutput enc = encode(params, s.input);
      const auto t0 = Clock::now();
      LogitGrid grid = decode_parallel(params, enc);
      nar_greedy(grid, cfg.vocab_out);
      const double ms = ms_since(t0);
      if (i >= latency_warmup) {
        total_ms += ms;
        ++timed;
      }
    }
    row.latency_ms = total_ms / std::max(1, timed);
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace narseq
