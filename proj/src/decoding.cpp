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

#include "narseq/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "narseq/errors.hpp"

namespace narseq {

namespace {

int argmax_lowest(std::span<const double> row) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(row.size()); ++c) {
    if (row[static_cast<size_t>(c)] > row[static_cast<size_t>(best)]) best = c;
  }
  return best;
}

struct PrefixMass {
  double blank{kNegInf};     // mass of alignments ending in blank
  double nonblank{kNegInf};  // mass of alignments ending in the last token

  double total() const { return log_add(blank, nonblank); }
};

}  // namespace

DecodeResult nar_greedy(const LogitGrid& logits, const Vocab& vocab) {
  if (logits.vocab_size() != vocab.size)
    throw UsageError("nar_greedy: grid width != vocab size");
  const int n = logits.n_positions();
  DecodeResult res;
  AlignmentPath path;
  path.ids.reserve(static_cast<size_t>(n));
  double score = 0.0;
  std::vector<double> lp(static_cast<size_t>(vocab.size));
  for (int i = 0; i < n; ++i) {
    log_softmax_row_into(logits.values.row(i), lp);
    const int c = argmax_lowest(logits.values.row(i));
    path.ids.push_back(c);
    score += lp[static_cast<size_t>(c)];
  }
  res.sequence = collapse(path, vocab);
  res.score = LogProb(std::min(0.0, score));
  res.raw_path = std::move(path);
  res.passes = 1;
  return res;
}

DecodeResult nar_prefix_beam(const LogitGrid& logits, const Vocab& vocab,
                             const BeamConfig& beam) {
  if (beam.width < 1) throw UsageError("nar_prefix_beam: width must be >= 1");
  if (logits.vocab_size() != vocab.size)
    throw UsageError("nar_prefix_beam: grid width != vocab size");
  const int n = logits.n_positions();
  const int d = vocab.size;

  // std::map keys give a lexicographic order, which doubles as the
  // deterministic tie-break (lowest token id first).
  std::map<std::vector<int>, PrefixMass> beams;
  beams[{}] = PrefixMass{0.0, kNegInf};

  std::vector<double> lp(static_cast<size_t>(d));
  for (int i = 0; i < n; ++i) {
    log_softmax_row_into(logits.values.row(i), lp);
    std::map<std::vector<int>, PrefixMass> next;
    for (const auto& [prefix, mass] : beams) {
      const int last = prefix.empty() ? -1 : prefix.back();
      for (int c = 0; c < d; ++c) {
        const double step = lp[static_cast<size_t>(c)];
        if (c == vocab.blank_id) {
          PrefixMass& m = next[prefix];
          m.blank = log_add(m.blank, mass.total() + step);
        } else if (c == last) {
          // Same token extends the run without a new prefix...
          PrefixMass& m = next[prefix];
          m.nonblank = log_add(m.nonblank, mass.nonblank + step);
          // ...unless a blank separated it, which emits a repeat.
          std::vector<int> ext = prefix;
          ext.push_back(c);
          PrefixMass& me = next[ext];
          me.nonblank = log_add(me.nonblank, mass.blank + step);
        } else {
          std::vector<int> ext = prefix;
          ext.push_back(c);
          PrefixMass& me = next[ext];
          me.nonblank = log_add(me.nonblank, mass.total() + step);
        }
      }
    }

    if (static_cast<int>(next.size()) > beam.width) {
      std::vector<std::pair<std::vector<int>, PrefixMass>> sorted(next.begin(),
                                                                  next.end());
      std::stable_sort(sorted.begin(), sorted.end(),
                       [](const auto& a, const auto& b) {
                         return a.second.total() > b.second.total();
                       });
      sorted.resize(static_cast<size_t>(beam.width));
      next = std::map<std::vector<int>, PrefixMass>(sorted.begin(), sorted.end());
    }
    beams = std::move(next);
  }

  auto best = beams.begin();
  for (auto it = beams.begin(); it != beams.end(); ++it) {
    if (it->second.total() > best->second.total()) best = it;
  }
  DecodeResult res;
  res.sequence = TokenSeq{best->first};
  res.score = LogProb(std::min(0.0, best->second.total()));
  res.passes = 1;
  return res;
}

namespace {

struct ArHyp {
  std::vector<int> emitted;  // without BOS/EOS
  double cum_logp{0.0};
  int steps{0};

  double normalized() const { return steps == 0 ? 0.0 : cum_logp / steps; }
};

bool better_hyp(const ArHyp& a, const ArHyp& b) {
  if (a.normalized() != b.normalized()) return a.normalized() > b.normalized();
  return a.emitted < b.emitted;
}

}  // namespace

DecodeResult ar_greedy(const ModelParams& params, const EncoderOutput& enc,
                       int max_len, PassStats* stats) {
  const ModelConfig& cfg = params.config();
  if (!cfg.is_ar()) throw UsageError("ar_greedy: model is not autoregressive");
  if (max_len < 1 || max_len > cfg.max_tgt_len)
    throw UsageError("ar_greedy: max_len outside [1, max_tgt_len]");

  TokenSeq prefix{cfg.bos_id()};
  DecodeResult res;
  double cum = 0.0;
  std::vector<double> lp(static_cast<size_t>(cfg.out_dim()));
  for (int step = 0; step < max_len; ++step) {
    auto logits = decode_ar_step(params, enc, prefix, stats);
    // BOS is input-only and blank belongs to the loss machinery;
    // neither is a legal emission.
    logits[static_cast<size_t>(cfg.bos_id())] = kNegInf;
    logits[static_cast<size_t>(cfg.vocab_out.blank_id)] = kNegInf;
    log_softmax_row_into(logits, lp);
    const int c = argmax_lowest(logits);
    cum += lp[static_cast<size_t>(c)];
    res.passes += 1;
    if (c == cfg.eos_id()) break;
    res.sequence.ids.push_back(c);
    prefix.ids.push_back(c);
  }
  res.score = LogProb(std::min(0.0, cum / static_cast<double>(res.passes)));
  return res;
}

DecodeResult ar_beam(const ModelParams& params, const EncoderOutput& enc,
                     const BeamConfig& beam, PassStats* stats) {
  const ModelConfig& cfg = params.config();
  if (!cfg.is_ar()) throw UsageError("ar_beam: model is not autoregressive");
  if (beam.width < 1) throw UsageError("ar_beam: width must be >= 1");
  if (beam.max_len < 1 || beam.max_len > cfg.max_tgt_len)
    throw UsageError("ar_beam: max_len outside [1, max_tgt_len]");

  uint64_t passes = 0;
  std::vector<ArHyp> live{ArHyp{}};
  std::vector<ArHyp> finished;
  std::vector<double> lp(static_cast<size_t>(cfg.out_dim()));

  for (int step = 0; step < beam.max_len && !live.empty(); ++step) {
    std::vector<ArHyp> candidates;
    for (const ArHyp& hyp : live) {
      TokenSeq prefix{cfg.bos_id()};
      prefix.ids.insert(prefix.ids.end(), hyp.emitted.begin(), hyp.emitted.end());
      auto logits = decode_ar_step(params, enc, prefix, stats);
      ++passes;
      logits[static_cast<size_t>(cfg.bos_id())] = kNegInf;
      logits[static_cast<size_t>(cfg.vocab_out.blank_id)] = kNegInf;
      log_softmax_row_into(logits, lp);

      // Top `width` continuations per hypothesis fill every beam slot.
      std::vector<int> order;
      for (int c = 0; c < cfg.out_dim(); ++c) {
        if (lp[static_cast<size_t>(c)] != kNegInf) order.push_back(c);
      }
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (lp[static_cast<size_t>(a)] != lp[static_cast<size_t>(b)])
          return lp[static_cast<size_t>(a)] > lp[static_cast<size_t>(b)];
        return a < b;
      });
      if (static_cast<int>(order.size()) > beam.width)
        order.resize(static_cast<size_t>(beam.width));

      for (int c : order) {
        ArHyp next = hyp;
        next.cum_logp += lp[static_cast<size_t>(c)];
        next.steps += 1;
        if (c == cfg.eos_id()) {
          finished.push_back(std::move(next));
        } else {
          next.emitted.push_back(c);
          candidates.push_back(std::move(next));
        }
      }
    }

    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const ArHyp& a, const ArHyp& b) {
                       if (a.cum_logp != b.cum_logp) return a.cum_logp > b.cum_logp;
                       return a.emitted < b.emitted;
                     });
    if (static_cast<int>(candidates.size()) > beam.width)
      candidates.resize(static_cast<size_t>(beam.width));
    live = std::move(candidates);
  }

  // Hypotheses still live at the length cap compete as they stand.
  for (ArHyp& hyp : live) finished.push_back(std::move(hyp));
  if (finished.empty()) throw NumericalError("ar_beam: no hypothesis survived");

  const ArHyp* best = &finished[0];
  for (const ArHyp& hyp : finished) {
    if (better_hyp(hyp, *best)) best = &hyp;
  }

  DecodeResult res;
  res.sequence = TokenSeq{best->emitted};
  res.score = LogProb(std::min(0.0, best->normalized()));
  res.passes = passes;
  return res;
}

}  // namespace narseq
