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

#include "narseq/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "narseq/bench.hpp"
#include "narseq/errors.hpp"
#include "narseq/tasks.hpp"
#include "narseq/training.hpp"

namespace narseq {

namespace {

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (text.empty() || text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
}

int auto_n_queries(const Dataset& data) {
  int t_max = 1;
  for (const std::vector<Sample>* split : {&data.train, &data.val, &data.test}) {
    for (const Sample& s : *split) {
      t_max = std::max(t_max, s.target.length());
      for (const TokenSeq& r : s.valid_refs) t_max = std::max(t_max, r.length());
    }
  }
  return 2 * t_max;
}

struct GenOpts {
  std::string task;
  std::string out;
  uint64_t seed{0};
  int train{2000}, val{0}, test{200};
  int vocab{10}, len_min{2}, len_max{6};
  int k_refs{4}, grid{16}, jitter_max{2};
  bool no_adjacent_repeats{false};
  bool force{false};
};

void cmd_gen(const GenOpts& o) {
  TaskSpec spec;
  spec.kind = task_kind_from_string(o.task);
  spec.vocab_content = o.vocab;
  spec.len_min = o.len_min;
  spec.len_max = o.len_max;
  spec.n_train = o.train;
  spec.n_val = o.val;
  spec.n_test = o.test;
  spec.seed = o.seed;
  spec.k_refs = o.k_refs;
  spec.grid = o.grid;
  spec.jitter_max = o.jitter_max;
  spec.no_adjacent_repeats = o.no_adjacent_repeats;

  Dataset data = generate(spec);
  save_dataset(data, o.out, o.force);

  nlohmann::json summary{{"command", "gen"},
                         {"out", o.out},
                         {"task", o.task},
                         {"seed", o.seed},
                         {"counts",
                          {{"train", data.train.size()},
                           {"val", data.val.size()},
                           {"test", data.test.size()}}},
                         {"vocab_out_size", data.vocab_out.size},
                         {"max_min_path_length", data.max_min_path_length}};
  std::cout << summary.dump(2) << '\n';
}

struct TrainOpts {
  std::string data;
  std::string decoder{"nar"};
  std::string loss{"qctc"};
  std::string out;
  std::string report;
  bool distilled{false};
  uint64_t seed{0};
  int epochs{40}, batch{16};
  double lr{3e-4}, beta1{0.9}, beta2{0.98}, weight_decay{0.0}, grad_clip{1.0};
  int n_queries{0};  // 0 = twice the longest target
  int d_model{64}, heads{4}, enc_layers{2}, dec_layers{2}, ffn_mult{4};
};

DecoderKind decoder_flag_to_kind(const std::string& s) {
  if (s == "ar") return DecoderKind::autoregressive;
  if (s == "nar") return DecoderKind::lqt_parallel;
  if (s == "nar-encinput") return DecoderKind::encoder_output_parallel;
  throw UsageError("unknown --decoder value: " + s);
}

void cmd_train(const TrainOpts& o) {
  const std::string prefix = o.distilled ? o.data + ".distilled" : o.data;
  Dataset data = load_dataset(prefix);

  const DecoderKind kind = decoder_flag_to_kind(o.decoder);
  const int n_queries = o.n_queries > 0 ? o.n_queries : auto_n_queries(data);
  ModelConfig mc = default_model_config(data, kind, n_queries);
  mc.d_model = o.d_model;
  mc.n_heads = o.heads;
  mc.n_enc_layers = o.enc_layers;
  mc.n_dec_layers = o.dec_layers;
  mc.ffn_mult = o.ffn_mult;

  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.lr = o.lr;
  tc.beta1 = o.beta1;
  tc.beta2 = o.beta2;
  tc.weight_decay = o.weight_decay;
  tc.grad_clip = o.grad_clip;
  tc.seed = o.seed;
  tc.loss_kind = loss_kind_from_string(o.loss);
  tc.distill = o.distilled;

  auto [params, report] = kind == DecoderKind::autoregressive
                              ? train_teacher(data, mc, tc)
                              : train_student(data, mc, tc);
  params.save(o.out);

  nlohmann::json out{
      {"command", "train"},
      {"effective_config",
       {{"data", prefix},
        {"decoder", o.decoder},
        {"model", nlohmann::json::parse(mc.to_json_string())},
        {"train", nlohmann::json::parse(tc.to_json_string())}}},
      {"checkpoint", o.out},
      {"report", nlohmann::json::parse(report.to_json_string())}};
  const std::string report_path = o.report.empty() ? o.out + ".report.json" : o.report;
  write_text(report_path, out.dump(2));
  std::cout << "final exact-match " << report.final_eval.exact_match << " on "
            << report.final_eval.n_samples << " test samples; report at "
            << report_path << '\n';
}

struct DistillOpts {
  std::string data;
  std::string teacher;
  std::string out;
  bool force{false};
};

void cmd_distill(const DistillOpts& o) {
  Dataset data = load_dataset(o.data);
  ModelParams teacher = ModelParams::load(o.teacher);
  DistillStats stats;
  Dataset distilled = distill_targets(teacher, data, &stats);
  const std::string out_prefix = o.out.empty() ? o.data + ".distilled" : o.out;
  save_dataset(distilled, out_prefix, o.force);

  nlohmann::json summary{{"command", "distill"},
                         {"data", o.data},
                         {"teacher", o.teacher},
                         {"out", out_prefix},
                         {"replaced", stats.replaced},
                         {"kept_original_empty", stats.kept_original_empty}};
  std::cout << summary.dump(2) << '\n';
}

struct EvalOpts2 {
  std::string data;
  std::string ckpt;
  std::string split{"test"};
  std::string decode{"greedy"};
  int beam_width{5};
  std::string out;
};

void cmd_eval(const EvalOpts2& o) {
  Dataset data = load_dataset(o.data);
  ModelParams params = ModelParams::load(o.ckpt);
  if (params.config().vocab_out.size != data.vocab_out.size)
    throw UsageError("eval: checkpoint vocab does not match the dataset");

  EvalOptions opts;
  opts.method = o.decode;
  opts.beam_width = o.beam_width;
  EvalMetrics m = evaluate(params, data, o.split, opts);

  nlohmann::json out{{"command", "eval"},
                     {"effective_config",
                      {{"data", o.data},
                       {"checkpoint", o.ckpt},
                       {"split", o.split},
                       {"decode", o.decode},
                       {"beam_width", o.beam_width}}},
                     {"metrics",
                      {{"exact_match", m.exact_match},
                       {"token_accuracy", m.token_accuracy},
                       {"decoder_passes", m.decoder_passes},
                       {"n_samples", m.n_samples}}}};
  write_text(o.out, out.dump(2));
}

struct BenchOpts {
  std::string ar, nar, out;
  std::vector<int> lengths{2, 5, 10, 20};
  int count{200}, warmup{10};
  uint64_t seed{0};
  bool no_force_len{false};
  int threads{1};
};

void cmd_bench(const BenchOpts& o) {
  ModelParams ar = ModelParams::load(o.ar);
  ModelParams nar = ModelParams::load(o.nar);
  BenchConfig cfg;
  cfg.lengths = o.lengths;
  cfg.n_sequences = o.count;
  cfg.warmup = o.warmup;
  cfg.seed = o.seed;
  cfg.force_len = !o.no_force_len;
  cfg.threads = o.threads;
  BenchReport report = run_bench(ar, nar, cfg);

  nlohmann::json out = nlohmann::json::parse(report.to_json_string());
  out["command"] = "bench";
  out["effective_config"] = {{"ar", o.ar},           {"nar", o.nar},
                             {"lengths", o.lengths}, {"count", o.count},
                             {"warmup", o.warmup},   {"seed", o.seed},
                             {"force_len", cfg.force_len},
                             {"threads", o.threads}};
  write_text(o.out, out.dump(2));
}

struct ErrorPropOpts {
  std::string ar, nar, data, out;
  std::string split{"test"};
  int min_bin_count{10};
};

void cmd_error_prop(const ErrorPropOpts& o) {
  Dataset data = load_dataset(o.data);
  ModelParams ar = ModelParams::load(o.ar);
  ModelParams nar = ModelParams::load(o.nar);
  ErrorPropReport report = run_error_prop(ar, nar, data, o.split, o.min_bin_count);
  write_text(o.out, report.to_csv());
}

struct SweepOpts {
  std::string data, out;
  std::vector<int> n_list;
  std::string loss{"qctc"};
  uint64_t seed{0};
  int epochs{10}, batch{16};
  double lr{1e-3};
  int d_model{64}, heads{4}, enc_layers{2}, dec_layers{2}, ffn_mult{4};
};

void cmd_sweep(const SweepOpts& o) {
  Dataset data = load_dataset(o.data);
  ModelConfig mc = default_model_config(data, DecoderKind::lqt_parallel,
                                        std::max(1, data.max_min_path_length));
  mc.d_model = o.d_model;
  mc.n_heads = o.heads;
  mc.n_enc_layers = o.enc_layers;
  mc.n_dec_layers = o.dec_layers;
  mc.ffn_mult = o.ffn_mult;

  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.lr = o.lr;
  tc.seed = o.seed;
  tc.loss_kind = loss_kind_from_string(o.loss);

  SweepReport report = sweep_queries(data, mc, tc, o.n_list);
  write_text(o.out, report.to_csv());
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"narseq: non-autoregressive seq2seq trainer and benchmark"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read flags from a TOML/INI file");

  GenOpts gen;
  CLI::App* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("--task", gen.task, "copy | grounding | jitter | multiref")->required();
  g->add_option("--out", gen.out, "Output file prefix")->required();
  g->add_option("--seed", gen.seed)->envname("QCTC_SEED");
  g->add_option("--train", gen.train);
  g->add_option("--val", gen.val);
  g->add_option("--test", gen.test);
  g->add_option("--vocab", gen.vocab, "Content alphabet / label count");
  g->add_option("--len-min", gen.len_min);
  g->add_option("--len-max", gen.len_max);
  g->add_option("--k-refs", gen.k_refs, "multiref: reference orderings kept");
  g->add_option("--grid", gen.grid, "grounding: coordinate bins");
  g->add_option("--jitter-max", gen.jitter_max, "jitter: max filler prefix");
  g->add_flag("--no-adjacent-repeats", gen.no_adjacent_repeats,
              "copy/jitter: forbid adjacent equal content tokens");
  g->add_flag("--force", gen.force, "Overwrite existing files");
  g->callback([&] { cmd_gen(gen); });

  TrainOpts train;
  CLI::App* t = app.add_subcommand("train", "Train a teacher or student model");
  t->add_option("--data", train.data, "Dataset prefix")->required();
  t->add_option("--decoder", train.decoder, "ar | nar | nar-encinput");
  t->add_option("--loss", train.loss, "qctc | ce (parallel decoders)");
  t->add_option("--out", train.out, "Checkpoint path")->required();
  t->add_option("--report", train.report, "Report JSON path");
  t->add_flag("--distilled", train.distilled, "Train on <data>.distilled");
  t->add_option("--seed", train.seed)->envname("QCTC_SEED");
  t->add_option("--epochs", train.epochs);
  t->add_option("--batch", train.batch);
  t->add_option("--lr", train.lr);
  t->add_option("--beta1", train.beta1);
  t->add_option("--beta2", train.beta2);
  t->add_option("--weight-decay", train.weight_decay);
  t->add_option("--grad-clip", train.grad_clip);
  t->add_option("--n-queries", train.n_queries, "0 = twice the longest target");
  t->add_option("--d-model", train.d_model);
  t->add_option("--heads", train.heads);
  t->add_option("--enc-layers", train.enc_layers);
  t->add_option("--dec-layers", train.dec_layers);
  t->add_option("--ffn-mult", train.ffn_mult);
  t->callback([&] { cmd_train(train); });

  DistillOpts distill;
  CLI::App* d = app.add_subcommand("distill",
                                   "Replace train targets with teacher decodes");
  d->add_option("--data", distill.data, "Dataset prefix")->required();
  d->add_option("--teacher", distill.teacher, "AR checkpoint")->required();
  d->add_option("--out", distill.out, "Output prefix (default <data>.distilled)");
  d->add_flag("--force", distill.force, "Overwrite existing files");
  d->callback([&] { cmd_distill(distill); });

  EvalOpts2 eval;
  CLI::App* e = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  e->add_option("--data", eval.data, "Dataset prefix")->required();
  e->add_option("--ckpt", eval.ckpt, "Checkpoint path")->required();
  e->add_option("--split", eval.split, "train | val | test");
  e->add_option("--decode", eval.decode, "greedy | prefix-beam | ar-beam");
  e->add_option("--beam-width", eval.beam_width);
  e->add_option("--out", eval.out, "Metrics JSON path (default stdout)");
  e->callback([&] { cmd_eval(eval); });

  BenchOpts bench;
  CLI::App* b = app.add_subcommand("bench", "AR vs NAR decode latency");
  b->add_option("--ar", bench.ar, "AR checkpoint")->required();
  b->add_option("--nar", bench.nar, "NAR checkpoint")->required();
  b->add_option("--lengths", bench.lengths, "Target lengths to time")->delimiter(',');
  b->add_option("--count", bench.count, "Timed decodes per length (>= 50)");
  b->add_option("--warmup", bench.warmup, "Discarded decodes per length");
  b->add_option("--seed", bench.seed)->envname("QCTC_SEED");
  b->add_flag("--no-force-len", bench.no_force_len,
              "Use plain greedy decoding instead of forced lengths");
  b->add_option("--threads", bench.threads, "Must be 1; timing is single-threaded");
  b->add_option("--out", bench.out, "Report JSON path (default stdout)");
  b->callback([&] { cmd_bench(bench); });

  ErrorPropOpts eprop;
  CLI::App* p = app.add_subcommand("error-prop",
                                   "First-token error effect on later tokens");
  p->add_option("--ar", eprop.ar, "AR checkpoint")->required();
  p->add_option("--nar", eprop.nar, "NAR checkpoint")->required();
  p->add_option("--data", eprop.data, "Grounding dataset prefix")->required();
  p->add_option("--split", eprop.split);
  p->add_option("--min-bin-count", eprop.min_bin_count,
                "Bins below this count are marked unreliable");
  p->add_option("--out", eprop.out, "CSV path (default stdout)");
  p->callback([&] { cmd_error_prop(eprop); });

  SweepOpts sweep;
  CLI::App* s = app.add_subcommand("sweep-queries",
                                   "Accuracy/latency across query counts");
  s->add_option("--data", sweep.data, "Dataset prefix")->required();
  s->add_option("--n-list", sweep.n_list, "Query counts to train")->required()->delimiter(',');
  s->add_option("--loss", sweep.loss, "qctc | ce");
  s->add_option("--seed", sweep.seed)->envname("QCTC_SEED");
  s->add_option("--epochs", sweep.epochs, "Short schedule per query count");
  s->add_option("--batch", sweep.batch);
  s->add_option("--lr", sweep.lr);
  s->add_option("--d-model", sweep.d_model);
  s->add_option("--heads", sweep.heads);
  s->add_option("--enc-layers", sweep.enc_layers);
  s->add_option("--dec-layers", sweep.dec_layers);
  s->add_option("--ffn-mult", sweep.ffn_mult);
  s->add_option("--out", sweep.out, "CSV path (default stdout)");
  s->callback([&] { cmd_sweep(sweep); });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  } catch (const InfeasibleConfigError& err) {
    std::cerr << "infeasible configuration: " << err.what() << '\n';
    return 3;
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << '\n';
    return 4;
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return 2;
  }
}

}  // namespace narseq
