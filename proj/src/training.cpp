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

#include "narseq/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "narseq/decoding.hpp"
#include "narseq/errors.hpp"

namespace narseq {

std::string to_string(LossKind kind) {
  return kind == LossKind::qctc ? "qctc" : "ce";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "qctc") return LossKind::qctc;
  if (s == "ce") return LossKind::ce;
  throw UsageError("unknown loss kind: " + s);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw UsageError("TrainConfig: batch_size must be >= 1");
  if (lr <= 0.0) throw UsageError("TrainConfig: lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw UsageError("TrainConfig: betas must lie in [0, 1)");
  if (grad_clip < 0.0 || weight_decay < 0.0)
    throw UsageError("TrainConfig: grad_clip and weight_decay must be >= 0");
}

std::string TrainConfig::to_json_string() const {
  nlohmann::json j{{"epochs", epochs},
                   {"batch_size", batch_size},
                   {"lr", lr},
                   {"adam_betas", {beta1, beta2}},
                   {"weight_decay", weight_decay},
                   {"grad_clip", grad_clip},
                   {"seed", seed},
                   {"loss_kind", to_string(loss_kind)},
                   {"distill", distill}};
  return j.dump();
}

std::string TrainReport::to_json_string() const {
  nlohmann::json j{
      {"epoch_losses", epoch_losses},
      {"final_eval",
       {{"exact_match", final_eval.exact_match},
        {"token_accuracy", final_eval.token_accuracy},
        {"decoder_passes", final_eval.decoder_passes},
        {"n_samples", final_eval.n_samples}}},
      {"wall_seconds", wall_seconds},
      {"train_passes",
       {{"encoder_passes", train_passes.encoder_passes},
        {"encoder_flops", train_passes.encoder_flops},
        {"decoder_passes", train_passes.decoder_passes},
        {"decoder_flops", train_passes.decoder_flops}}}};
  return j.dump(2);
}

ModelConfig default_model_config(const Dataset& data, DecoderKind kind,
                                 int n_queries) {
  ModelConfig cfg;
  cfg.decoder_kind = kind;
  cfg.vocab_in = data.vocab_in_size;
  cfg.vocab_out = data.vocab_out;
  cfg.n_queries = n_queries;
  int max_in = 1, max_tgt = 1;
  for (const std::vector<Sample>* split : {&data.train, &data.val, &data.test}) {
    for (const Sample& s : *split) {
      max_in = std::max(max_in, s.input.length());
      max_tgt = std::max(max_tgt, s.target.length());
      for (const TokenSeq& r : s.valid_refs) max_tgt = std::max(max_tgt, r.length());
    }
  }
  cfg.max_src_len = max_in + 2;
  cfg.max_tgt_len = max_tgt + 2;
  return cfg;
}

const TokenSeq& epoch_training_target(const Dataset& data, size_t sample_index,
                                      uint64_t seed, int epoch) {
  const Sample& s = data.train.at(sample_index);
  if (data.distilled || s.valid_refs.size() <= 1) return s.target;
  Rng rng = Rng(seed).fork(static_cast<uint64_t>(epoch)).fork(sample_index);
  return s.valid_refs[static_cast<size_t>(rng.below(s.valid_refs.size()))];
}

namespace {

class Adam {
 public:
  Adam(size_t n, const TrainConfig& cfg)
      : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(ModelParams& params, std::span<double> grads) {
    ++t_;
    double scale = 1.0;
    if (cfg_.grad_clip > 0.0) {
      double norm2 = 0.0;
      for (double g : grads) norm2 += g * g;
      const double norm = std::sqrt(norm2);
      if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    auto& values = params.values();
    for (size_t i = 0; i < values.size(); ++i) {
      const double g = grads[i] * scale;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      const double update = (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + 1e-8);
      values[i] -= cfg_.lr * (update + cfg_.weight_decay * values[i]);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  double t_{0};
};

void check_student_feasible(const Dataset& data, const ModelConfig& cfg,
                            LossKind loss) {
  const bool sampled_refs = !data.distilled;
  for (size_t i = 0; i < data.train.size(); ++i) {
    const Sample& s = data.train[i];
    std::vector<const TokenSeq*> targets{&s.target};
    if (sampled_refs) {
      for (const TokenSeq& r : s.valid_refs) targets.push_back(&r);
    }
    const int grid_rows = cfg.decoder_kind == DecoderKind::lqt_parallel
                              ? cfg.n_queries
                              : s.input.length();
    for (const TokenSeq* t : targets) {
      const int need =
          loss == LossKind::qctc ? min_path_length(*t) : t->length();
      if (need > grid_rows) {
        std::ostringstream os;
        os << "train sample " << i << ": target needs " << need
           << " decoder positions but only " << grid_rows << " are available";
        throw InfeasibleConfigError(os.str());
      }
    }
  }
}

struct EpochPlan {
  std::vector<size_t> order;
  std::vector<const TokenSeq*> targets;
};

EpochPlan plan_epoch(const Dataset& data, uint64_t seed, int epoch) {
  EpochPlan plan;
  plan.order.resize(data.train.size());
  std::iota(plan.order.begin(), plan.order.end(), size_t{0});
  Rng shuffle_rng = Rng(seed).fork(0xA11C0DE).fork(static_cast<uint64_t>(epoch));
  shuffle_rng.shuffle(plan.order);
  plan.targets.resize(data.train.size(), nullptr);
  for (size_t idx = 0; idx < data.train.size(); ++idx) {
    plan.targets[idx] = &epoch_training_target(data, idx, seed, epoch);
  }
  return plan;
}

double finite_or_throw(double loss, int epoch) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "training diverged: non-finite loss in epoch " << epoch;
    throw NumericalError(os.str());
  }
  return loss;
}

}  // namespace

std::pair<ModelParams, TrainReport> train_teacher(const Dataset& data,
                                                  const ModelConfig& model_cfg,
                                                  const TrainConfig& cfg) {
  cfg.validate();
  model_cfg.validate();
  if (!model_cfg.is_ar())
    throw UsageError("train_teacher: model config is not autoregressive");
  if (data.train.empty()) throw UsageError("train_teacher: empty train split");

  const auto t0 = std::chrono::steady_clock::now();
  ModelParams params = ModelParams::init_random(model_cfg, cfg.seed);
  Adam adam(params.n_params(), cfg);


  TrainReport report;
  std::vector<double> grads(params.n_params(), 0.0);
  std::vector<double> logp(static_cast<size_t>(model_cfg.out_dim()));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochPlan plan = plan_epoch(data, cfg.seed, epoch);
    double epoch_loss = 0.0;

    for (size_t start = 0; start < plan.order.size(); start += cfg.batch_size) {
      const size_t stop = std::min(plan.order.size(),
                                   start + static_cast<size_t>(cfg.batch_size));
      std::fill(grads.begin(), grads.end(), 0.0);
      double batch_loss = 0.0;

      for (size_t bi = start; bi < stop; ++bi) {
        const Sample& s = data.train[plan.order[bi]];
        const TokenSeq& target = *plan.targets[plan.order[bi]];
        if (target.length() > model_cfg.max_tgt_len)
          throw UsageError("train_teacher: target longer than max_tgt_len");

        EncoderTrace etr;
        DecoderTrace dtr;
        EncoderOutput enc = encode(params, s.input, &etr, &report.train_passes);
        TokenSeq dec_in{model_cfg.bos_id()};
        dec_in.ids.insert(dec_in.ids.end(), target.ids.begin(), target.ids.end());
        LogitGrid rows =
            decode_ar_sequence(params, enc, dec_in, &dtr, &report.train_passes);

        // Next-token CE, mean per position; the final step predicts EOS.
        const int n = rows.n_positions();
        Tensor2 d_logits(n, rows.vocab_size());
        double loss = 0.0;
        for (int i = 0; i < n; ++i) {
          const int want = i < target.length()
                               ? target.ids[static_cast<size_t>(i)]
                               : model_cfg.eos_id();
          log_softmax_row_into(rows.values.row(i), logp);
          loss -= logp[static_cast<size_t>(want)] / n;
          for (int c = 0; c < rows.vocab_size(); ++c) {
            d_logits.at(i, c) = (std::exp(logp[static_cast<size_t>(c)]) -
                                 (c == want ? 1.0 : 0.0)) / n;
          }
        }
        batch_loss += loss;

        // Mean over the batch: scale this example's contribution.
        const double w = 1.0 / static_cast<double>(stop - start);
        for (double& v : d_logits.data) v *= w;
        Tensor2 d_enc(enc.states.rows, enc.states.cols);
        decoder_backward(params, dtr, d_logits, grads, &d_enc);
        encoder_backward(params, etr, d_enc, grads);
      }

      batch_loss /= static_cast<double>(stop - start);
      finite_or_throw(batch_loss, epoch);
      epoch_loss += batch_loss * static_cast<double>(stop - start);
      adam.step(params, grads);
    }

    report.epoch_losses.push_back(epoch_loss /
                                  static_cast<double>(plan.order.size()));
  }

  report.final_eval = evaluate(params, data, "test");
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(params), std::move(report)};
}

std::pair<ModelParams, TrainReport> train_student(const Dataset& data,
                                                  const ModelConfig& model_cfg,
                                                  const TrainConfig& cfg) {
  cfg.validate();
  model_cfg.validate();
  if (model_cfg.is_ar())
    throw UsageError("train_student: model config must be a parallel decoder");
  if (data.train.empty()) throw UsageError("train_student: empty train split");
  check_student_feasible(data, model_cfg, cfg.loss_kind);

  const auto t0 = std::chrono::steady_clock::now();
  ModelParams params = ModelParams::init_random(model_cfg, cfg.seed);
  Adam adam(params.n_params(), cfg);


  TrainReport report;
  std::vector<double> grads(params.n_params(), 0.0);
  const bool lqt = model_cfg.decoder_kind == DecoderKind::lqt_parallel;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochPlan plan = plan_epoch(data, cfg.seed, epoch);
    double epoch_loss = 0.0;

    for (size_t start = 0; start < plan.order.size(); start += cfg.batch_size) {
      const size_t stop = std::min(plan.order.size(),
                                   start + static_cast<size_t>(cfg.batch_size));
      std::fill(grads.begin(), grads.end(), 0.0);
      double batch_loss = 0.0;

      for (size_t bi = start; bi < stop; ++bi) {
        const Sample& s = data.train[plan.order[bi]];
        const TokenSeq& target = *plan.targets[plan.order[bi]];

        EncoderTrace etr;
        DecoderTrace dtr;
        EncoderOutput enc = encode(params, s.input, &etr, &report.train_passes);
        LogitGrid grid =
            lqt ? decode_parallel(params, enc, &dtr, &report.train_passes)
                : decode_parallel_encoder_input(params, enc, &dtr,
                                                &report.train_passes);
        LossResult lr = cfg.loss_kind == LossKind::qctc
                            ? qctc_loss(grid, target, model_cfg.vocab_out)
                            : ce_loss(grid, target, model_cfg.vocab_out);
        batch_loss += lr.loss;

        const double w = 1.0 / static_cast<double>(stop - start);
        for (double& v : lr.grad.data) v *= w;
        Tensor2 d_enc(enc.states.rows, enc.states.cols);
        decoder_backward(params, dtr, lr.grad, grads, &d_enc);
        encoder_backward(params, etr, d_enc, grads);
      }

      batch_loss /= static_cast<double>(stop - start);
      finite_or_throw(batch_loss, epoch);
      epoch_loss += batch_loss * static_cast<double>(stop - start);
      adam.step(params, grads);
    }

    report.epoch_losses.push_back(epoch_loss /
                                  static_cast<double>(plan.order.size()));
  }

  report.final_eval = evaluate(params, data, "test");
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(params), std::move(report)};
}

Dataset distill_targets(const ModelParams& teacher, const Dataset& data,
                        DistillStats* stats) {
  const ModelConfig& cfg = teacher.config();
  if (!cfg.is_ar()) throw UsageError("distill_targets: teacher must be autoregressive");

  Dataset out = data;
  DistillStats local;
  for (Sample& s : out.train) {
    EncoderOutput enc = encode(teacher, s.input);
    DecodeResult dec = ar_greedy(teacher, enc, cfg.max_tgt_len);
    if (dec.sequence.empty()) {
      ++local.kept_original_empty;
      continue;
    }
    s.target = dec.sequence;
    ++local.replaced;
  }
  out.distilled = true;

  int mpl = 0;
  for (const std::vector<Sample>* split : {&out.train, &out.val, &out.test}) {
    for (const Sample& s : *split) {
      mpl = std::max(mpl, min_path_length(s.target));
      for (const TokenSeq& r : s.valid_refs) mpl = std::max(mpl, min_path_length(r));
    }
  }
  out.max_min_path_length = mpl;

  if (stats) *stats = local;
  return out;
}

EvalMetrics evaluate(const ModelParams& params, const Dataset& data,
                     const std::string& split, const EvalOptions& opts) {
  const ModelConfig& cfg = params.config();
  const std::vector<Sample>& samples = data.split(split);
  EvalMetrics metrics;
  metrics.n_samples = static_cast<int>(samples.size());
  if (samples.empty()) return metrics;

  PassStats passes;
  double exact = 0.0, token_acc = 0.0;
  for (const Sample& s : samples) {
    EncoderOutput enc = encode(params, s.input);
    TokenSeq pred;
    if (cfg.is_ar()) {
      if (opts.method == "greedy") {
        pred = ar_greedy(params, enc, cfg.max_tgt_len, &passes).sequence;
      } else if (opts.method == "ar-beam") {
        pred = ar_beam(params, enc, BeamConfig{opts.beam_width, cfg.max_tgt_len},
                       &passes).sequence;
      } else {
        throw UsageError("evaluate: decode method '" + opts.method +
                         "' needs a parallel decoder");
      }
    } else {
      LogitGrid grid =
          cfg.decoder_kind == DecoderKind::lqt_parallel
              ? decode_parallel(params, enc, nullptr, &passes)
              : decode_parallel_encoder_input(params, enc, nullptr, &passes);
      if (opts.method == "greedy") {
        pred = nar_greedy(grid, cfg.vocab_out).sequence;
      } else if (opts.method == "prefix-beam") {
        pred = nar_prefix_beam(grid, cfg.vocab_out,
                               BeamConfig{opts.beam_width, 0}).sequence;
      } else {
        throw UsageError("evaluate: decode method '" + opts.method +
                         "' needs an autoregressive decoder");
      }
    }

    if (prediction_matches(data, s, pred)) exact += 1.0;

    // Positionwise accuracy against the best reference.
    const TokenSeq stripped = strip_filler(pred, data.filler_id);
    double best = 0.0;
    for (const TokenSeq& ref_raw : s.valid_refs) {
      const TokenSeq ref = strip_filler(ref_raw, data.filler_id);
      const int lo = std::min(ref.length(), stripped.length());
      const int hi = std::max(ref.length(), stripped.length());
      if (hi == 0) {
        best = 1.0;
        continue;
      }
      int same = 0;
      for (int i = 0; i < lo; ++i) {
        if (ref.ids[static_cast<size_t>(i)] == stripped.ids[static_cast<size_t>(i)])
          ++same;
      }
      best = std::max(best, static_cast<double>(same) / hi);
    }
    token_acc += best;
  }

  metrics.exact_match = exact / static_cast<double>(samples.size());
  metrics.token_accuracy = token_acc / static_cast<double>(samples.size());
  metrics.decoder_passes = passes.decoder_passes;
  return metrics;
}

}  // namespace narseq
