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

#include "narseq/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "narseq/errors.hpp"

namespace narseq {

Vocab Vocab::with_size(int size) {
  if (size < 2) throw UsageError("Vocab: need at least blank plus one token");
  Vocab v;
  v.size = size;
  v.blank_id = 0;
  return v;
}

Vocab Vocab::with_names(std::vector<std::string> names) {
  Vocab v = with_size(static_cast<int>(names.size()));
  std::set<std::string> uniq(names.begin(), names.end());
  if (uniq.size() != names.size()) throw UsageError("Vocab: duplicate names");
  v.names = std::move(names);
  return v;
}

namespace {

void check_ids(const std::vector<int>& ids, const Vocab& vocab, const char* who) {
  for (int id : ids) {
    if (id < 0 || id >= vocab.size) {
      std::ostringstream os;
      os << who << ": token id " << id << " outside vocab of size " << vocab.size;
      throw UsageError(os.str());
    }
  }
}

void check_blank_free(const TokenSeq& target, const Vocab& vocab, const char* who) {
  check_ids(target.ids, vocab, who);
  for (int id : target.ids) {
    if (id == vocab.blank_id) {
      throw UsageError(std::string(who) + ": target contains the blank token");
    }
  }
}

}  // namespace

TokenSeq collapse(const AlignmentPath& path, const Vocab& vocab) {
  check_ids(path.ids, vocab, "collapse");
  TokenSeq out;
  int prev = vocab.blank_id;
  for (int id : path.ids) {
    if (id != vocab.blank_id && id != prev) out.ids.push_back(id);
    prev = id;
  }
  return out;
}

std::vector<AlignmentPath> enumerate_valid_paths(const TokenSeq& target,
                                                 int n_positions,
                                                 const Vocab& vocab,
                                                 uint64_t scan_cap) {
  if (n_positions < 1) throw UsageError("enumerate_valid_paths: N must be >= 1");
  check_blank_free(target, vocab, "enumerate_valid_paths");
  const uint64_t d = static_cast<uint64_t>(vocab.size);
  uint64_t total = 1;
  for (int i = 0; i < n_positions; ++i) {
    if (total > scan_cap / d) {
      std::ostringstream os;
      os << "enumerate_valid_paths: d^N = " << vocab.size << "^" << n_positions
         << " exceeds the scan cap of " << scan_cap << "; use the DP loss instead";
      throw UsageError(os.str());
    }
    total *= d;
  }

  std::vector<AlignmentPath> valid;
  AlignmentPath path(std::vector<int>(static_cast<size_t>(n_positions), 0));
  // Odometer over all d^N candidates.
  for (uint64_t k = 0; k < total; ++k) {
    if (collapse(path, vocab) == target) valid.push_back(path);
    for (int pos = n_positions - 1; pos >= 0; --pos) {
      if (++path.ids[pos] < vocab.size) break;
      path.ids[pos] = 0;
    }
  }
  return valid;
}

int min_path_length(const TokenSeq& target) {
  int repeats = 0;
  for (size_t i = 1; i < target.ids.size(); ++i) {
    if (target.ids[i] == target.ids[i - 1]) ++repeats;
  }
  return target.length() + repeats;
}

std::vector<int> extended_target(const TokenSeq& target, const Vocab& vocab) {
  std::vector<int> ext;
  ext.reserve(2 * target.ids.size() + 1);
  ext.push_back(vocab.blank_id);
  for (int id : target.ids) {
    ext.push_back(id);
    ext.push_back(vocab.blank_id);
  }
  return ext;
}

LossResult qctc_loss(const LogitGrid& logits, const TokenSeq& target,
                     const Vocab& vocab) {
  check_blank_free(target, vocab, "qctc_loss");
  const int n = logits.n_positions();
  const int d = logits.vocab_size();
  if (d != vocab.size) throw UsageError("qctc_loss: grid width != vocab size");
  if (!logits.values.all_finite()) throw NumericalError("qctc_loss: non-finite logits");
  const int mpl = min_path_length(target);
  if (n < mpl) {
    std::ostringstream os;
    os << "qctc_loss: " << n << " positions cannot align a target needing " << mpl;
    throw InfeasibleConfigError(os.str());
  }

  const std::vector<int> ext = extended_target(target, vocab);
  const int s_len = static_cast<int>(ext.size());

  // Per-position log softmax.
  Tensor2 logp(n, d);
  for (int i = 0; i < n; ++i) log_softmax_row_into(logits.values.row(i), logp.row(i));

  auto allows_skip = [&](int s) {
    // Jump s-2 -> s is legal only into a non-blank state that differs
    // from the previous non-blank state.
    return s >= 2 && ext[s] != vocab.blank_id && ext[s] != ext[s - 2];
  };

  // Forward: alpha[i][s] includes the emission at position i.
  Tensor2 alpha(n, s_len);
  alpha.fill(kNegInf);
  alpha.at(0, 0) = logp.at(0, ext[0]);
  if (s_len > 1) alpha.at(0, 1) = logp.at(0, ext[1]);
  for (int i = 1; i < n; ++i) {
    for (int s = 0; s < s_len; ++s) {
      double m = alpha.at(i - 1, s);
      if (s >= 1) m = log_add(m, alpha.at(i - 1, s - 1));
      if (allows_skip(s)) m = log_add(m, alpha.at(i - 1, s - 2));
      if (m != kNegInf) alpha.at(i, s) = m + logp.at(i, ext[s]);
    }
  }

  double log_z = alpha.at(n - 1, s_len - 1);
  if (s_len > 1) log_z = log_add(log_z, alpha.at(n - 1, s_len - 2));
  if (log_z == kNegInf) {
    // Unreachable once N >= min_path_length, kept as a hard guard.
    throw NumericalError("qctc_loss: no valid path has nonzero probability");
  }

  // Backward: beta[i][s] excludes the emission at position i.
  Tensor2 beta(n, s_len);
  beta.fill(kNegInf);
  beta.at(n - 1, s_len - 1) = 0.0;
  if (s_len > 1) beta.at(n - 1, s_len - 2) = 0.0;
  for (int i = n - 2; i >= 0; --i) {
    for (int s = 0; s < s_len; ++s) {
      double m = beta.at(i + 1, s) + logp.at(i + 1, ext[s]);
      if (s + 1 < s_len) m = log_add(m, beta.at(i + 1, s + 1) + logp.at(i + 1, ext[s + 1]));
      if (s + 2 < s_len && allows_skip(s + 2))
        m = log_add(m, beta.at(i + 1, s + 2) + logp.at(i + 1, ext[s + 2]));
      beta.at(i, s) = m;
    }
  }

  // grad[i][c] = softmax[i][c] - gamma[i][c], where gamma is the
  // posterior emission marginal gathered over extended states.
  LossResult res;
  // log_z can stray above 0 by an ulp when one path holds all the mass.
  res.loss = std::max(0.0, -log_z);
  res.grad = Tensor2(n, d);
  std::vector<double> gamma_log(static_cast<size_t>(d));
  for (int i = 0; i < n; ++i) {
    std::fill(gamma_log.begin(), gamma_log.end(), kNegInf);
    for (int s = 0; s < s_len; ++s) {
      const double mass = alpha.at(i, s) + beta.at(i, s);
      if (mass == kNegInf) continue;
      double& slot = gamma_log[static_cast<size_t>(ext[s])];
      slot = log_add(slot, mass);
    }
    for (int c = 0; c < d; ++c) {
      const double post =
          gamma_log[static_cast<size_t>(c)] == kNegInf
              ? 0.0
              : std::exp(gamma_log[static_cast<size_t>(c)] - log_z);
      res.grad.at(i, c) = std::exp(logp.at(i, c)) - post;
    }
  }
  return res;
}

LossResult ce_loss(const LogitGrid& logits, const TokenSeq& target,
                   const Vocab& vocab) {
  check_blank_free(target, vocab, "ce_loss");
  const int n = logits.n_positions();
  const int d = logits.vocab_size();
  if (d != vocab.size) throw UsageError("ce_loss: grid width != vocab size");
  if (target.length() > n) {
    std::ostringstream os;
    os << "ce_loss: target length " << target.length() << " exceeds " << n
       << " positions";
    throw UsageError(os.str());
  }
  if (!logits.values.all_finite()) throw NumericalError("ce_loss: non-finite logits");

  LossResult res;
  res.grad = Tensor2(n, d);
  std::vector<double> logp(static_cast<size_t>(d));
  const double inv_n = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    const int t = i < target.length() ? target.ids[static_cast<size_t>(i)]
                                      : vocab.blank_id;
    log_softmax_row_into(logits.values.row(i), logp);
    res.loss -= logp[static_cast<size_t>(t)] * inv_n;
    for (int c = 0; c < d; ++c) {
      res.grad.at(i, c) = (std::exp(logp[static_cast<size_t>(c)]) -
                           (c == t ? 1.0 : 0.0)) * inv_n;
    }
  }
  return res;
}

}  // namespace narseq
