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

#include "narseq/model.hpp"

#include <bit>
#include <cassert>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "narseq/errors.hpp"

namespace narseq {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr char kCkptMagic[8] = {'N', 'S', 'E', 'Q', 'C', 'K', 'P', '1'};

enum class InitKind { normal, zeros, ones };

std::string layer_name(const char* stack, int layer, const char* rest) {
  std::ostringstream os;
  os << stack << ".L" << layer << "." << rest;
  return os.str();
}

// y = x * W + b with W given as a flat [in, out] view.
void linear_fwd(const Tensor2& x, std::span<const double> w,
                std::span<const double> b, int out, Tensor2& y,
                uint64_t& flops) {
  const int rows = x.rows, in = x.cols;
  assert(w.size() == static_cast<size_t>(in) * out);
  assert(b.size() == static_cast<size_t>(out));
  y = Tensor2(rows, out);
  for (int i = 0; i < rows; ++i) {
    double* yi = y.data.data() + static_cast<size_t>(i) * out;
    for (int j = 0; j < out; ++j) yi[j] = b[static_cast<size_t>(j)];
    const double* xi = x.data.data() + static_cast<size_t>(i) * in;
    for (int k = 0; k < in; ++k) {
      const double a = xi[k];
      if (a == 0.0) continue;
      const double* wk = w.data() + static_cast<size_t>(k) * out;
      for (int j = 0; j < out; ++j) yi[j] += a * wk[j];
    }
  }
  flops += 2ull * rows * in * out;
}

// Accumulates dx, dw, db for y = x * W + b given dy.
void linear_bwd(const Tensor2& x, std::span<const double> w, const Tensor2& dy,
                Tensor2& dx, std::span<double> dw, std::span<double> db) {
  const int rows = x.rows, in = x.cols, out = dy.cols;
  assert(dx.rows == rows && dx.cols == in);
  for (int i = 0; i < rows; ++i) {
    const double* dyi = dy.data.data() + static_cast<size_t>(i) * out;
    const double* xi = x.data.data() + static_cast<size_t>(i) * in;
    double* dxi = dx.data.data() + static_cast<size_t>(i) * in;
    for (int j = 0; j < out; ++j) db[static_cast<size_t>(j)] += dyi[j];
    for (int k = 0; k < in; ++k) {
      const double* wk = w.data() + static_cast<size_t>(k) * out;
      double* dwk = dw.data() + static_cast<size_t>(k) * out;
      double acc = 0.0;
      const double a = xi[k];
      for (int j = 0; j < out; ++j) {
        acc += dyi[j] * wk[j];
        dwk[j] += a * dyi[j];
      }
      dxi[k] += acc;
    }
  }
}

void layer_norm_fwd(const Tensor2& x, std::span<const double> gain,
                    std::span<const double> bias, LnCache& c) {
  const int rows = x.rows, d = x.cols;
  c.x = x;
  c.mean.assign(static_cast<size_t>(rows), 0.0);
  c.inv_std.assign(static_cast<size_t>(rows), 0.0);
  c.y = Tensor2(rows, d);
  for (int i = 0; i < rows; ++i) {
    const double* xi = x.data.data() + static_cast<size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= d;
    const double r = 1.0 / std::sqrt(var + kLnEps);
    c.mean[static_cast<size_t>(i)] = mu;
    c.inv_std[static_cast<size_t>(i)] = r;
    double* yi = c.y.data.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      yi[j] = gain[static_cast<size_t>(j)] * (xi[j] - mu) * r +
              bias[static_cast<size_t>(j)];
    }
  }
}

void layer_norm_bwd(const LnCache& c, std::span<const double> gain,
                    const Tensor2& dy, Tensor2& dx, std::span<double> dgain,
                    std::span<double> dbias) {
  const int rows = c.x.rows, d = c.x.cols;
  for (int i = 0; i < rows; ++i) {
    const double* xi = c.x.data.data() + static_cast<size_t>(i) * d;
    const double* dyi = dy.data.data() + static_cast<size_t>(i) * d;
    double* dxi = dx.data.data() + static_cast<size_t>(i) * d;
    const double mu = c.mean[static_cast<size_t>(i)];
    const double r = c.inv_std[static_cast<size_t>(i)];
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      const double xhat = (xi[j] - mu) * r;
      const double dxhat = dyi[j] * gain[static_cast<size_t>(j)];
      dgain[static_cast<size_t>(j)] += dyi[j] * xhat;
      dbias[static_cast<size_t>(j)] += dyi[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    const double inv_d = 1.0 / d;
    for (int j = 0; j < d; ++j) {
      const double xhat = (xi[j] - mu) * r;
      const double dxhat = dyi[j] * gain[static_cast<size_t>(j)];
      dxi[j] += r * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

struct AttnWeights {
  std::span<const double> wq, bq, wk, bk, wv, bv, wo, bo;
};

AttnWeights attn_weights(const ModelParams& p, const std::string& prefix) {
  return {p.tensor(prefix + ".wq"), p.tensor(prefix + ".bq"),
          p.tensor(prefix + ".wk"), p.tensor(prefix + ".bk"),
          p.tensor(prefix + ".wv"), p.tensor(prefix + ".bv"),
          p.tensor(prefix + ".wo"), p.tensor(prefix + ".bo")};
}

struct AttnGrads {
  std::span<double> wq, bq, wk, bk, wv, bv, wo, bo;
};

AttnGrads attn_grads(const ModelParams& p, const std::string& prefix,
                     std::span<double> g) {
  auto view = [&](const std::string& n) {
    const TensorSpec& s = p.spec(n);
    return g.subspan(s.offset, static_cast<size_t>(s.rows) * s.cols);
  };
  return {view(prefix + ".wq"), view(prefix + ".bq"), view(prefix + ".wk"),
          view(prefix + ".bk"), view(prefix + ".wv"), view(prefix + ".bv"),
          view(prefix + ".wo"), view(prefix + ".bo")};
}

// Multi-head attention. xq supplies queries, xkv keys/values. A key
// bias, when present, is added to every pre-softmax score column.
Tensor2 attn_fwd(const ModelParams& p, const AttnWeights& w, const Tensor2& xq,
                 const Tensor2& xkv, bool causal,
                 std::span<const double> key_bias, AttnCache& c,
                 uint64_t& flops) {
  const ModelConfig& cfg = p.config();
  const int d = cfg.d_model, h = cfg.n_heads, hd = cfg.head_dim();
  const int lq = xq.rows, lk = xkv.rows;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  linear_fwd(xq, w.wq, w.bq, d, c.q, flops);
  linear_fwd(xkv, w.wk, w.bk, d, c.k, flops);
  linear_fwd(xkv, w.wv, w.bv, d, c.v, flops);

  c.probs = Tensor2(h * lq, lk);
  c.ctx = Tensor2(lq, d);
  std::vector<double> scores(static_cast<size_t>(lk));
  for (int head = 0; head < h; ++head) {
    const int col0 = head * hd;
    for (int i = 0; i < lq; ++i) {
      const double* qi = c.q.data.data() + static_cast<size_t>(i) * d + col0;
      for (int j = 0; j < lk; ++j) {
        if (causal && j > i) {
          scores[static_cast<size_t>(j)] = kNegInf;
          continue;
        }
        const double* kj = c.k.data.data() + static_cast<size_t>(j) * d + col0;
        double s = 0.0;
        for (int e = 0; e < hd; ++e) s += qi[e] * kj[e];
        s *= scale;
        if (!key_bias.empty()) s += key_bias[static_cast<size_t>(j)];
        scores[static_cast<size_t>(j)] = s;
      }
      auto prow = c.probs.row(head * lq + i);
      softmax_row_into(scores, prow);
      double* ctx = c.ctx.data.data() + static_cast<size_t>(i) * d + col0;
      for (int j = 0; j < lk; ++j) {
        const double pij = prow[static_cast<size_t>(j)];
        if (pij == 0.0) continue;
        const double* vj = c.v.data.data() + static_cast<size_t>(j) * d + col0;
        for (int e = 0; e < hd; ++e) ctx[e] += pij * vj[e];
      }
    }
  }
  flops += 4ull * lq * lk * d;  // scores + context

  Tensor2 out;
  linear_fwd(c.ctx, w.wo, w.bo, d, out, flops);
  return out;
}

void attn_bwd(const ModelParams& p, const AttnWeights& w, const AttnGrads& g,
              const Tensor2& xq, const Tensor2& xkv, const AttnCache& c,
              const Tensor2& d_out, std::span<double> key_bias_grad,
              Tensor2& d_xq, Tensor2& d_xkv) {
  const ModelConfig& cfg = p.config();
  const int d = cfg.d_model, h = cfg.n_heads, hd = cfg.head_dim();
  const int lq = xq.rows, lk = xkv.rows;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor2 d_ctx(lq, d);
  linear_bwd(c.ctx, w.wo, d_out, d_ctx, g.wo, g.bo);

  Tensor2 dq(lq, d), dk(lk, d), dv(lk, d);
  std::vector<double> dp(static_cast<size_t>(lk)), ds(static_cast<size_t>(lk));
  for (int head = 0; head < h; ++head) {
    const int col0 = head * hd;
    for (int i = 0; i < lq; ++i) {
      const auto prow = c.probs.row(head * lq + i);
      const double* dctx = d_ctx.data.data() + static_cast<size_t>(i) * d + col0;
      double dot = 0.0;
      for (int j = 0; j < lk; ++j) {
        const double* vj = c.v.data.data() + static_cast<size_t>(j) * d + col0;
        double acc = 0.0;
        for (int e = 0; e < hd; ++e) acc += dctx[e] * vj[e];
        dp[static_cast<size_t>(j)] = acc;
        dot += acc * prow[static_cast<size_t>(j)];
        double* dvj = dv.data.data() + static_cast<size_t>(j) * d + col0;
        const double pij = prow[static_cast<size_t>(j)];
        if (pij != 0.0) {
          for (int e = 0; e < hd; ++e) dvj[e] += pij * dctx[e];
        }
      }
      const double* qi = c.q.data.data() + static_cast<size_t>(i) * d + col0;
      double* dqi = dq.data.data() + static_cast<size_t>(i) * d + col0;
      for (int j = 0; j < lk; ++j) {
        const double pij = prow[static_cast<size_t>(j)];
        const double dsj = pij * (dp[static_cast<size_t>(j)] - dot);
        ds[static_cast<size_t>(j)] = dsj;
        if (dsj == 0.0) continue;
        if (!key_bias_grad.empty()) key_bias_grad[static_cast<size_t>(j)] += dsj;
        const double* kj = c.k.data.data() + static_cast<size_t>(j) * d + col0;
        double* dkj = dk.data.data() + static_cast<size_t>(j) * d + col0;
        const double f = dsj * scale;
        for (int e = 0; e < hd; ++e) {
          dqi[e] += f * kj[e];
          dkj[e] += f * qi[e];
        }
      }
    }
  }

  linear_bwd(xq, w.wq, dq, d_xq, g.wq, g.bq);
  linear_bwd(xkv, w.wk, dk, d_xkv, g.wk, g.bk);
  linear_bwd(xkv, w.wv, dv, d_xkv, g.wv, g.bv);
}

Tensor2 ffn_fwd(const ModelParams& p, const std::string& prefix,
                const Tensor2& x, FfnCache& c, uint64_t& flops) {
  const int f = p.config().ffn_dim(), d = p.config().d_model;
  c.x = x;
  linear_fwd(x, p.tensor(prefix + ".w1"), p.tensor(prefix + ".b1"), f, c.pre,
             flops);
  c.act = Tensor2(c.pre.rows, c.pre.cols);
  for (size_t i = 0; i < c.pre.data.size(); ++i) c.act.data[i] = gelu(c.pre.data[i]);
  Tensor2 out;
  linear_fwd(c.act, p.tensor(prefix + ".w2"), p.tensor(prefix + ".b2"), d, out,
             flops);
  return out;
}

void ffn_bwd(const ModelParams& p, const std::string& prefix, const FfnCache& c,
             const Tensor2& d_out, std::span<double> grads, Tensor2& d_x) {
  auto view = [&](const std::string& n) {
    const TensorSpec& s = p.spec(n);
    return std::span<double>(grads.subspan(s.offset, static_cast<size_t>(s.rows) * s.cols));
  };
  Tensor2 d_act(c.act.rows, c.act.cols);
  linear_bwd(c.act, p.tensor(prefix + ".w2"), d_out, d_act, view(prefix + ".w2"),
             view(prefix + ".b2"));
  Tensor2 d_pre(c.pre.rows, c.pre.cols);
  for (size_t i = 0; i < d_pre.data.size(); ++i)
    d_pre.data[i] = d_act.data[i] * gelu_grad(c.pre.data[i]);
  linear_bwd(c.x, p.tensor(prefix + ".w1"), d_pre, d_x, view(prefix + ".w1"),
             view(prefix + ".b1"));
}

std::span<double> grad_view(const ModelParams& p, std::span<double> grads,
                            const std::string& name) {
  const TensorSpec& s = p.spec(name);
  return grads.subspan(s.offset, static_cast<size_t>(s.rows) * s.cols);
}

}  // namespace

// ---- config ---------------------------------------------------------------

std::string to_string(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::autoregressive: return "autoregressive";
    case DecoderKind::lqt_parallel: return "lqt_parallel";
    case DecoderKind::encoder_output_parallel: return "encoder_output_parallel";
  }
  throw UsageError("unknown decoder kind");
}

DecoderKind decoder_kind_from_string(const std::string& s) {
  if (s == "autoregressive") return DecoderKind::autoregressive;
  if (s == "lqt_parallel") return DecoderKind::lqt_parallel;
  if (s == "encoder_output_parallel") return DecoderKind::encoder_output_parallel;
  throw UsageError("unknown decoder kind: " + s);
}

void ModelConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw UsageError("ModelConfig: d_model must be a positive multiple of n_heads");
  if (n_enc_layers < 1 || n_dec_layers < 1 || ffn_mult < 1)
    throw UsageError("ModelConfig: layer counts and ffn_mult must be positive");
  if (vocab_in < 1) throw UsageError("ModelConfig: vocab_in must be positive");
  if (vocab_out.size < 2 || vocab_out.blank_id != 0)
    throw UsageError("ModelConfig: output vocab needs blank at id 0");
  if (max_src_len < 1 || max_tgt_len < 1)
    throw UsageError("ModelConfig: sequence length caps must be positive");
  if (decoder_kind == DecoderKind::lqt_parallel && n_queries < 1)
    throw UsageError("ModelConfig: parallel decoder needs n_queries >= 1");
}

std::string ModelConfig::to_json_string() const {
  nlohmann::json j{{"d_model", d_model},
                   {"n_heads", n_heads},
                   {"n_enc_layers", n_enc_layers},
                   {"n_dec_layers", n_dec_layers},
                   {"ffn_mult", ffn_mult},
                   {"vocab_in", vocab_in},
                   {"vocab_out",
                    {{"size", vocab_out.size},
                     {"blank_id", vocab_out.blank_id},
                     {"names", vocab_out.names}}},
                   {"n_queries", n_queries},
                   {"max_src_len", max_src_len},
                   {"max_tgt_len", max_tgt_len},
                   {"decoder_kind", to_string(decoder_kind)}};
  return j.dump();
}

ModelConfig ModelConfig::from_json_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg;
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.n_enc_layers = j.at("n_enc_layers").get<int>();
  cfg.n_dec_layers = j.at("n_dec_layers").get<int>();
  cfg.ffn_mult = j.at("ffn_mult").get<int>();
  cfg.vocab_in = j.at("vocab_in").get<int>();
  cfg.vocab_out.size = j.at("vocab_out").at("size").get<int>();
  cfg.vocab_out.blank_id = j.at("vocab_out").at("blank_id").get<int>();
  cfg.vocab_out.names = j.at("vocab_out").at("names").get<std::vector<std::string>>();
  cfg.n_queries = j.at("n_queries").get<int>();
  cfg.max_src_len = j.at("max_src_len").get<int>();
  cfg.max_tgt_len = j.at("max_tgt_len").get<int>();
  cfg.decoder_kind = decoder_kind_from_string(j.at("decoder_kind").get<std::string>());
  cfg.validate();
  return cfg;
}

// ---- parameter store --------------------------------------------------------

namespace {

struct RegistryBuilder {
  std::vector<TensorSpec> specs;
  std::vector<InitKind> inits;
  size_t total = 0;

  void add(std::string name, int rows, int cols, InitKind init) {
    specs.push_back({std::move(name), rows, cols, total});
    inits.push_back(init);
    total += static_cast<size_t>(rows) * cols;
  }

  void add_ln(const std::string& prefix, int d) {
    add(prefix + ".gain", 1, d, InitKind::ones);
    add(prefix + ".bias", 1, d, InitKind::zeros);
  }

  void add_attn(const std::string& prefix, int d) {
    for (const char* w : {"wq", "wk", "wv", "wo"})
      add(prefix + "." + w, d, d, InitKind::normal);
    for (const char* b : {"bq", "bk", "bv", "bo"})
      add(prefix + "." + b, 1, d, InitKind::zeros);
  }

  void add_ffn(const std::string& prefix, int d, int f) {
    add(prefix + ".w1", d, f, InitKind::normal);
    add(prefix + ".b1", 1, f, InitKind::zeros);
    add(prefix + ".w2", f, d, InitKind::normal);
    add(prefix + ".b2", 1, d, InitKind::zeros);
  }
};

RegistryBuilder build_registry(const ModelConfig& cfg) {
  RegistryBuilder r;
  const int d = cfg.d_model, f = cfg.ffn_dim();

  r.add("enc.tok_embed", cfg.vocab_in, d, InitKind::normal);
  r.add("enc.pos_embed", cfg.max_src_len, d, InitKind::normal);
  for (int i = 0; i < cfg.n_enc_layers; ++i) {
    r.add_ln(layer_name("enc", i, "ln1"), d);
    r.add_attn(layer_name("enc", i, "attn"), d);
    r.add_ln(layer_name("enc", i, "ln2"), d);
    r.add_ffn(layer_name("enc", i, "ffn"), d, f);
  }
  r.add_ln("enc.final_ln", d);

  switch (cfg.decoder_kind) {
    case DecoderKind::autoregressive:
      r.add("dec.tok_embed", cfg.dec_vocab(), d, InitKind::normal);
      r.add("dec.pos_embed", cfg.max_tgt_len + 1, d, InitKind::normal);
      break;
    case DecoderKind::lqt_parallel:
      r.add("dec.query_tokens", cfg.n_queries, d, InitKind::normal);
      r.add("dec.query_pos_bias", 1, cfg.n_queries, InitKind::zeros);
      break;
    case DecoderKind::encoder_output_parallel:
      break;  // the decoder input is the encoder output itself
  }
  for (int i = 0; i < cfg.n_dec_layers; ++i) {
    r.add_ln(layer_name("dec", i, "ln1"), d);
    r.add_attn(layer_name("dec", i, "self"), d);
    r.add_ln(layer_name("dec", i, "ln2"), d);
    r.add_attn(layer_name("dec", i, "cross"), d);
    r.add_ln(layer_name("dec", i, "ln3"), d);
    r.add_ffn(layer_name("dec", i, "ffn"), d, f);
  }
  r.add_ln("dec.final_ln", d);
  r.add("dec.out.w", d, cfg.out_dim(), InitKind::normal);
  r.add("dec.out.b", 1, cfg.out_dim(), InitKind::zeros);
  return r;
}

}  // namespace

ModelParams::ModelParams(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  RegistryBuilder r = build_registry(cfg_);
  specs_ = std::move(r.specs);
  values_.assign(r.total, 0.0);
  for (size_t i = 0; i < specs_.size(); ++i) {
    index_[specs_[i].name] = i;
    if (r.inits[i] == InitKind::ones) {
      auto view = tensor(specs_[i].name);
      for (double& v : view) v = 1.0;
    }
  }
}

ModelParams ModelParams::init_random(ModelConfig cfg, uint64_t seed) {
  ModelParams p(std::move(cfg));
  RegistryBuilder r = build_registry(p.cfg_);
  Rng rng(seed);
  for (size_t i = 0; i < p.specs_.size(); ++i) {
    if (r.inits[i] != InitKind::normal) continue;
    auto view = p.tensor(p.specs_[i].name);
    for (double& v : view) v = rng.normal(0.0, kInitStd);
  }
  return p;
}

bool ModelParams::has_tensor(std::string_view name) const {
  return index_.contains(std::string(name));
}

const TensorSpec& ModelParams::spec(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end())
    throw UsageError("ModelParams: unknown tensor " + std::string(name));
  return specs_[it->second];
}

std::span<double> ModelParams::tensor(std::string_view name) {
  const TensorSpec& s = spec(name);
  return {values_.data() + s.offset, static_cast<size_t>(s.rows) * s.cols};
}

std::span<const double> ModelParams::tensor(std::string_view name) const {
  const TensorSpec& s = spec(name);
  return {values_.data() + s.offset, static_cast<size_t>(s.rows) * s.cols};
}

void ModelParams::save(const std::filesystem::path& path) const {
  nlohmann::json tensors = nlohmann::json::array();
  for (const TensorSpec& s : specs_) {
    tensors.push_back({{"name", s.name},
                       {"rows", s.rows},
                       {"cols", s.cols},
                       {"byte_offset", s.offset * sizeof(double)}});
  }
  nlohmann::json manifest{
      {"config", nlohmann::json::parse(cfg_.to_json_string())},
      {"tensors", tensors}};
  const std::string mtext = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot open checkpoint for writing: " + path.string());
  out.write(kCkptMagic, sizeof(kCkptMagic));
  const uint64_t mlen = mtext.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((mlen >> (8 * i)) & 0xFF);
  out.write(lenbuf, 8);
  out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));

  std::vector<char> blob(values_.size() * sizeof(double));
  for (size_t i = 0; i < values_.size(); ++i) {
    const uint64_t bits = std::bit_cast<uint64_t>(values_[i]);
    for (int b = 0; b < 8; ++b)
      blob[i * 8 + static_cast<size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw UsageError("short write while saving checkpoint: " + path.string());
}

ModelParams ModelParams::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw UsageError("not a checkpoint file: " + path.string());
  char lenbuf[8];
  in.read(lenbuf, 8);
  uint64_t mlen = 0;
  for (int i = 0; i < 8; ++i)
    mlen |= static_cast<uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw UsageError("truncated checkpoint manifest: " + path.string());

  nlohmann::json manifest = nlohmann::json::parse(mtext);
  ModelParams p(ModelConfig::from_json_string(manifest.at("config").dump()));

  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != p.specs_.size())
    throw UsageError("checkpoint manifest does not match this configuration");
  for (size_t i = 0; i < p.specs_.size(); ++i) {
    const auto& t = tensors[i];
    if (t.at("name").get<std::string>() != p.specs_[i].name ||
        t.at("rows").get<int>() != p.specs_[i].rows ||
        t.at("cols").get<int>() != p.specs_[i].cols)
      throw UsageError("checkpoint tensor mismatch at " + p.specs_[i].name);
  }

  std::vector<char> blob(p.values_.size() * sizeof(double));
  in.read(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!in) throw UsageError("truncated checkpoint blob: " + path.string());
  for (size_t i = 0; i < p.values_.size(); ++i) {
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<uint64_t>(static_cast<unsigned char>(blob[i * 8 + static_cast<size_t>(b)]))
              << (8 * b);
    p.values_[i] = std::bit_cast<double>(bits);
  }
  return p;
}

// ---- encoder ----------------------------------------------------------------

EncoderOutput encode(const ModelParams& params, const TokenSeq& src,
                     EncoderTrace* trace, PassStats* stats) {
  const ModelConfig& cfg = params.config();
  const int L = src.length(), d = cfg.d_model;
  if (L < 1 || L > cfg.max_src_len) {
    std::ostringstream os;
    os << "encode: source length " << L << " outside [1, " << cfg.max_src_len << "]";
    throw UsageError(os.str());
  }
  for (int id : src.ids) {
    if (id < 0 || id >= cfg.vocab_in)
      throw UsageError("encode: source token outside input vocab");
  }

  uint64_t flops = 0;
  const auto tok = params.tensor("enc.tok_embed");
  const auto pos = params.tensor("enc.pos_embed");
  Tensor2 x(L, d);
  for (int i = 0; i < L; ++i) {
    const size_t t = static_cast<size_t>(src.ids[static_cast<size_t>(i)]) * d;
    const size_t q = static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j)
      x.at(i, j) = tok[t + static_cast<size_t>(j)] + pos[q + static_cast<size_t>(j)];
  }

  EncoderTrace local;
  EncoderTrace& tr = trace ? *trace : local;
  tr.src = src;
  tr.layers.assign(static_cast<size_t>(cfg.n_enc_layers), {});

  for (int li = 0; li < cfg.n_enc_layers; ++li) {
    EncLayerCache& c = tr.layers[static_cast<size_t>(li)];
    const std::string ln1 = layer_name("enc", li, "ln1");
    layer_norm_fwd(x, params.tensor(ln1 + ".gain"), params.tensor(ln1 + ".bias"), c.ln1);
    Tensor2 a = attn_fwd(params, attn_weights(params, layer_name("enc", li, "attn")),
                         c.ln1.y, c.ln1.y, /*causal=*/false, {}, c.attn, flops);
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += a.data[i];

    const std::string ln2 = layer_name("enc", li, "ln2");
    layer_norm_fwd(x, params.tensor(ln2 + ".gain"), params.tensor(ln2 + ".bias"), c.ln2);
    Tensor2 fo = ffn_fwd(params, layer_name("enc", li, "ffn"), c.ln2.y, c.ffn, flops);
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += fo.data[i];
  }

  layer_norm_fwd(x, params.tensor("enc.final_ln.gain"),
                 params.tensor("enc.final_ln.bias"), tr.final_ln);
  tr.states = tr.final_ln.y;

  if (stats) {
    stats->encoder_passes += 1;
    stats->encoder_flops += flops;
  }
  return EncoderOutput{tr.states};
}

void encoder_backward(const ModelParams& params, const EncoderTrace& trace,
                      const Tensor2& d_states, std::span<double> grads) {
  const ModelConfig& cfg = params.config();
  const int L = trace.src.length(), d = cfg.d_model;

  Tensor2 dx(L, d);
  layer_norm_bwd(trace.final_ln, params.tensor("enc.final_ln.gain"), d_states, dx,
                 grad_view(params, grads, "enc.final_ln.gain"),
                 grad_view(params, grads, "enc.final_ln.bias"));

  for (int li = cfg.n_enc_layers - 1; li >= 0; --li) {
    const EncLayerCache& c = trace.layers[static_cast<size_t>(li)];

    // x2 = x1 + ffn(ln2(x1))
    Tensor2 d_ffn_in(L, d);
    ffn_bwd(params, layer_name("enc", li, "ffn"), c.ffn, dx, grads, d_ffn_in);
    const std::string ln2 = layer_name("enc", li, "ln2");
    layer_norm_bwd(c.ln2, params.tensor(ln2 + ".gain"), d_ffn_in, dx,
                   grad_view(params, grads, ln2 + ".gain"),
                   grad_view(params, grads, ln2 + ".bias"));

    // x1 = x0 + attn(ln1(x0))
    Tensor2 d_ln1y(L, d);
    attn_bwd(params, attn_weights(params, layer_name("enc", li, "attn")),
             attn_grads(params, layer_name("enc", li, "attn"), grads), c.ln1.y,
             c.ln1.y, c.attn, dx, {}, d_ln1y, d_ln1y);
    const std::string ln1 = layer_name("enc", li, "ln1");
    layer_norm_bwd(c.ln1, params.tensor(ln1 + ".gain"), d_ln1y, dx,
                   grad_view(params, grads, ln1 + ".gain"),
                   grad_view(params, grads, ln1 + ".bias"));
  }

  auto d_tok = grad_view(params, grads, "enc.tok_embed");
  auto d_pos = grad_view(params, grads, "enc.pos_embed");
  for (int i = 0; i < L; ++i) {
    const size_t t = static_cast<size_t>(trace.src.ids[static_cast<size_t>(i)]) * d;
    const size_t q = static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      d_tok[t + static_cast<size_t>(j)] += dx.at(i, j);
      d_pos[q + static_cast<size_t>(j)] += dx.at(i, j);
    }
  }
}

// ---- decoder ----------------------------------------------------------------

namespace {

LogitGrid decoder_forward(const ModelParams& params, const EncoderOutput& enc,
                          DecoderKind kind, const TokenSeq& input_tokens,
                          DecoderTrace* trace, PassStats* stats) {
  const ModelConfig& cfg = params.config();
  const int d = cfg.d_model;
  uint64_t flops = 0;

  Tensor2 x;
  switch (kind) {
    case DecoderKind::lqt_parallel: {
      const auto q = params.tensor("dec.query_tokens");
      x = Tensor2(cfg.n_queries, d);
      std::copy(q.begin(), q.end(), x.data.begin());
      break;
    }
    case DecoderKind::encoder_output_parallel:
      x = enc.states;
      break;
    case DecoderKind::autoregressive: {
      const int L = input_tokens.length();
      if (L < 1 || input_tokens.ids[0] != cfg.bos_id())
        throw UsageError("decoder: autoregressive input must start with BOS");
      if (L > cfg.max_tgt_len + 1)
        throw UsageError("decoder: prefix longer than max_tgt_len allows");
      const auto tok = params.tensor("dec.tok_embed");
      const auto pos = params.tensor("dec.pos_embed");
      x = Tensor2(L, d);
      for (int i = 0; i < L; ++i) {
        const int id = input_tokens.ids[static_cast<size_t>(i)];
        if (id < 0 || id >= cfg.dec_vocab())
          throw UsageError("decoder: token outside decoder vocab");
        const size_t t = static_cast<size_t>(id) * d;
        const size_t q = static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j)
          x.at(i, j) = tok[t + static_cast<size_t>(j)] + pos[q + static_cast<size_t>(j)];
      }
      break;
    }
  }

  const bool causal = kind == DecoderKind::autoregressive;
  std::span<const double> self_key_bias;
  if (kind == DecoderKind::lqt_parallel)
    self_key_bias = params.tensor("dec.query_pos_bias");

  DecoderTrace local;
  DecoderTrace& tr = trace ? *trace : local;
  tr.kind = kind;
  tr.input_tokens = input_tokens;
  tr.enc_states = enc.states;
  tr.layers.assign(static_cast<size_t>(cfg.n_dec_layers), {});

  for (int li = 0; li < cfg.n_dec_layers; ++li) {
    DecLayerCache& c = tr.layers[static_cast<size_t>(li)];

    const std::string ln1 = layer_name("dec", li, "ln1");
    layer_norm_fwd(x, params.tensor(ln1 + ".gain"), params.tensor(ln1 + ".bias"), c.ln1);
    Tensor2 a = attn_fwd(params, attn_weights(params, layer_name("dec", li, "self")),
                         c.ln1.y, c.ln1.y, causal, self_key_bias, c.self_attn, flops);
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += a.data[i];

    const std::string ln2 = layer_name("dec", li, "ln2");
    layer_norm_fwd(x, params.tensor(ln2 + ".gain"), params.tensor(ln2 + ".bias"), c.ln2);
    Tensor2 cr = attn_fwd(params, attn_weights(params, layer_name("dec", li, "cross")),
                          c.ln2.y, tr.enc_states, /*causal=*/false, {}, c.cross_attn,
                          flops);
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += cr.data[i];

    const std::string ln3 = layer_name("dec", li, "ln3");
    layer_norm_fwd(x, params.tensor(ln3 + ".gain"), params.tensor(ln3 + ".bias"), c.ln3);
    Tensor2 fo = ffn_fwd(params, layer_name("dec", li, "ffn"), c.ln3.y, c.ffn, flops);
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += fo.data[i];
  }

  layer_norm_fwd(x, params.tensor("dec.final_ln.gain"),
                 params.tensor("dec.final_ln.bias"), tr.final_ln);
  tr.head_in = tr.final_ln.y;

  LogitGrid grid;
  linear_fwd(tr.head_in, params.tensor("dec.out.w"), params.tensor("dec.out.b"),
             cfg.out_dim(), grid.values, flops);

  if (stats) {
    stats->decoder_passes += 1;
    stats->decoder_flops += flops;
  }
  return grid;
}

}  // namespace

LogitGrid decode_parallel(const ModelParams& params, const EncoderOutput& enc,
                          DecoderTrace* trace, PassStats* stats) {
  if (params.config().decoder_kind != DecoderKind::lqt_parallel)
    throw UsageError("decode_parallel: model is not a query-token decoder");
  return decoder_forward(params, enc, DecoderKind::lqt_parallel, {}, trace, stats);
}

LogitGrid decode_parallel_encoder_input(const ModelParams& params,
                                        const EncoderOutput& enc,
                                        DecoderTrace* trace, PassStats* stats) {
  if (params.config().decoder_kind != DecoderKind::encoder_output_parallel)
    throw UsageError(
        "decode_parallel_encoder_input: model is not an encoder-input decoder");
  return decoder_forward(params, enc, DecoderKind::encoder_output_parallel, {},
                         trace, stats);
}

LogitGrid decode_ar_sequence(const ModelParams& params, const EncoderOutput& enc,
                             const TokenSeq& input_tokens, DecoderTrace* trace,
                             PassStats* stats) {
  if (!params.config().is_ar())
    throw UsageError("decode_ar_sequence: model is not autoregressive");
  return decoder_forward(params, enc, DecoderKind::autoregressive, input_tokens,
                         trace, stats);
}

std::vector<double> decode_ar_step(const ModelParams& params,
                                   const EncoderOutput& enc,
                                   const TokenSeq& prefix, PassStats* stats) {
  LogitGrid grid = decode_ar_sequence(params, enc, prefix, nullptr, stats);
  auto last = grid.values.row(grid.n_positions() - 1);
  return {last.begin(), last.end()};
}

void decoder_backward(const ModelParams& params, const DecoderTrace& trace,
                      const Tensor2& d_logits, std::span<double> grads,
                      Tensor2* d_enc) {
  const ModelConfig& cfg = params.config();
  const int lq = trace.head_in.rows, d = cfg.d_model;

  Tensor2 d_head_in(lq, d);
  linear_bwd(trace.head_in, params.tensor("dec.out.w"), d_logits, d_head_in,
             grad_view(params, grads, "dec.out.w"),
             grad_view(params, grads, "dec.out.b"));

  Tensor2 dx(lq, d);
  layer_norm_bwd(trace.final_ln, params.tensor("dec.final_ln.gain"), d_head_in,
                 dx, grad_view(params, grads, "dec.final_ln.gain"),
                 grad_view(params, grads, "dec.final_ln.bias"));

  Tensor2 d_enc_local(trace.enc_states.rows, trace.enc_states.cols);
  std::span<double> bias_grad;
  if (trace.kind == DecoderKind::lqt_parallel)
    bias_grad = grad_view(params, grads, "dec.query_pos_bias");

  for (int li = cfg.n_dec_layers - 1; li >= 0; --li) {
    const DecLayerCache& c = trace.layers[static_cast<size_t>(li)];

    Tensor2 d_ln3y(lq, d);
    ffn_bwd(params, layer_name("dec", li, "ffn"), c.ffn, dx, grads, d_ln3y);
    const std::string ln3 = layer_name("dec", li, "ln3");
    layer_norm_bwd(c.ln3, params.tensor(ln3 + ".gain"), d_ln3y, dx,
                   grad_view(params, grads, ln3 + ".gain"),
                   grad_view(params, grads, ln3 + ".bias"));

    Tensor2 d_ln2y(lq, d);
    attn_bwd(params, attn_weights(params, layer_name("dec", li, "cross")),
             attn_grads(params, layer_name("dec", li, "cross"), grads), c.ln2.y,
             trace.enc_states, c.cross_attn, dx, {}, d_ln2y, d_enc_local);
    const std::string ln2 = layer_name("dec", li, "ln2");
    layer_norm_bwd(c.ln2, params.tensor(ln2 + ".gain"), d_ln2y, dx,
                   grad_view(params, grads, ln2 + ".gain"),
                   grad_view(params, grads, ln2 + ".bias"));

    Tensor2 d_ln1y(lq, d);
    attn_bwd(params, attn_weights(params, layer_name("dec", li, "self")),
             attn_grads(params, layer_name("dec", li, "self"), grads), c.ln1.y,
             c.ln1.y, c.self_attn, dx, bias_grad, d_ln1y, d_ln1y);
    const std::string ln1 = layer_name("dec", li, "ln1");
    layer_norm_bwd(c.ln1, params.tensor(ln1 + ".gain"), d_ln1y, dx,
                   grad_view(params, grads, ln1 + ".gain"),
                   grad_view(params, grads, ln1 + ".bias"));
  }

  switch (trace.kind) {
    case DecoderKind::lqt_parallel: {
      auto dq = grad_view(params, grads, "dec.query_tokens");
      for (size_t i = 0; i < dx.data.size(); ++i) dq[i] += dx.data[i];
      break;
    }
    case DecoderKind::encoder_output_parallel:
      for (size_t i = 0; i < dx.data.size(); ++i) d_enc_local.data[i] += dx.data[i];
      break;
    case DecoderKind::autoregressive: {
      auto d_tok = grad_view(params, grads, "dec.tok_embed");
      auto d_pos = grad_view(params, grads, "dec.pos_embed");
      for (int i = 0; i < lq; ++i) {
        const size_t t =
            static_cast<size_t>(trace.input_tokens.ids[static_cast<size_t>(i)]) * d;
        const size_t q = static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
          d_tok[t + static_cast<size_t>(j)] += dx.at(i, j);
          d_pos[q + static_cast<size_t>(j)] += dx.at(i, j);
        }
      }
      break;
    }
  }

  if (d_enc) {
    for (size_t i = 0; i < d_enc_local.data.size(); ++i)
      d_enc->data[i] += d_enc_local.data[i];
  }
}

}  // namespace narseq
