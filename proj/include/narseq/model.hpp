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

#ifndef NARSEQ_MODEL_HPP
#define NARSEQ_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "narseq/ctc.hpp"
#include "narseq/numerics.hpp"

namespace narseq {

enum class DecoderKind {
  autoregressive,          // causal decoder fed shifted targets
  lqt_parallel,            // learnable query tokens, one parallel pass
  encoder_output_parallel  // parallel decoder fed the encoder states
};

std::string to_string(DecoderKind kind);
DecoderKind decoder_kind_from_string(const std::string& s);

// Pre-norm transformer encoder/decoder pair. The output vocabulary is
// the CTC vocabulary (blank at id 0); the autoregressive decoder
// appends BOS/EOS ids after it.
struct ModelConfig {
  int d_model{64};
  int n_heads{4};
  int n_enc_layers{2};
  int n_dec_layers{2};
  int ffn_mult{4};
  int vocab_in{0};
  Vocab vocab_out;
  int n_queries{8};
  int max_src_len{64};
  int max_tgt_len{32};
  DecoderKind decoder_kind{DecoderKind::lqt_parallel};

  int head_dim() const { return d_model / n_heads; }
  int ffn_dim() const { return d_model * ffn_mult; }
  bool is_ar() const { return decoder_kind == DecoderKind::autoregressive; }
  int bos_id() const { return vocab_out.size; }
  int eos_id() const { return vocab_out.size + 1; }
  int dec_vocab() const { return vocab_out.size + 2; }  // AR table incl. BOS/EOS
  int out_dim() const { return is_ar() ? dec_vocab() : vocab_out.size; }

  void validate() const;  // throws UsageError on malformed settings

  std::string to_json_string() const;
  static ModelConfig from_json_string(const std::string& text);
};

struct TensorSpec {
  std::string name;
  int rows{0};
  int cols{0};
  size_t offset{0};  // element offset into the flat value vector
};

// All learnable weights in one flat vector, addressed through a named
// manifest. The manifest order is the checkpoint blob order.
class ModelParams {
 public:
  explicit ModelParams(ModelConfig cfg);
  static ModelParams init_random(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorSpec>& manifest() const { return specs_; }
  size_t n_params() const { return values_.size(); }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool has_tensor(std::string_view name) const;
  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;
  const TensorSpec& spec(std::string_view name) const;

  // Single-file checkpoint: magic, length-prefixed JSON manifest, then
  // the values as little-endian 64-bit floats in manifest order.
  void save(const std::filesystem::path& path) const;
  static ModelParams load(const std::filesystem::path& path);

 private:
  ModelConfig cfg_;
  std::vector<TensorSpec> specs_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<double> values_;
};

struct EncoderOutput {
  Tensor2 states;  // src_len x d_model
  int src_len() const { return states.rows; }
};

// Forward-pass accounting: decode passes and matrix-multiply FLOPs.
struct PassStats {
  uint64_t encoder_passes{0};
  uint64_t encoder_flops{0};
  uint64_t decoder_passes{0};
  uint64_t decoder_flops{0};

  PassStats& operator+=(const PassStats& o) {
    encoder_passes += o.encoder_passes;
    encoder_flops += o.encoder_flops;
    decoder_passes += o.decoder_passes;
    decoder_flops += o.decoder_flops;
    return *this;
  }
};

// ---- forward/backward caches ------------------------------------------

struct LnCache {
  Tensor2 x;  // layer input
  std::vector<double> mean, inv_std;
  Tensor2 y;  // normalized output
};

struct AttnCache {
  Tensor2 q, k, v;  // projected, heads packed along columns
  Tensor2 probs;    // (n_heads * len_q) x len_k softmax rows
  Tensor2 ctx;      // len_q x d_model, pre output projection
};

struct FfnCache {
  Tensor2 x;    // input
  Tensor2 pre;  // x*W1 + b1
  Tensor2 act;  // gelu(pre)
};

struct EncLayerCache {
  LnCache ln1;
  AttnCache attn;
  LnCache ln2;
  FfnCache ffn;
};

struct DecLayerCache {
  LnCache ln1;
  AttnCache self_attn;
  LnCache ln2;
  AttnCache cross_attn;
  LnCache ln3;
  FfnCache ffn;
};

struct EncoderTrace {
  TokenSeq src;
  std::vector<EncLayerCache> layers;
  LnCache final_ln;
  Tensor2 states;
};

struct DecoderTrace {
  DecoderKind kind{DecoderKind::lqt_parallel};
  TokenSeq input_tokens;  // AR only: BOS-prefixed decoder input
  Tensor2 enc_states;     // memory used by cross-attention
  std::vector<DecLayerCache> layers;
  LnCache final_ln;
  Tensor2 head_in;  // final LN output entering the logit head
};

// ---- forward ------------------------------------------------------------

// Embeds src (tokens + learned positions) and runs the encoder stack.
EncoderOutput encode(const ModelParams& params, const TokenSeq& src,
                     EncoderTrace* trace = nullptr, PassStats* stats = nullptr);

// One bidirectional decoder pass over the learnable query tokens;
// logits for all n_queries positions at once.
LogitGrid decode_parallel(const ModelParams& params, const EncoderOutput& enc,
                          DecoderTrace* trace = nullptr,
                          PassStats* stats = nullptr);

// Ablation variant: the decoder input sequence is the encoder output
// itself, giving a src_len x d grid.
LogitGrid decode_parallel_encoder_input(const ModelParams& params,
                                        const EncoderOutput& enc,
                                        DecoderTrace* trace = nullptr,
                                        PassStats* stats = nullptr);

// Causal decoder over a BOS-prefixed token sequence; logits for every
// prefix position (teacher-forcing training pass).
LogitGrid decode_ar_sequence(const ModelParams& params,
                             const EncoderOutput& enc,
                             const TokenSeq& input_tokens,
                             DecoderTrace* trace = nullptr,
                             PassStats* stats = nullptr);

// Next-token logits given a BOS-prefixed prefix; one decoder pass.
std::vector<double> decode_ar_step(const ModelParams& params,
                                   const EncoderOutput& enc,
                                   const TokenSeq& prefix,
                                   PassStats* stats = nullptr);

// ---- backward -----------------------------------------------------------

// Accumulates parameter gradients for a decoder pass. d_logits has the
// grid shape of the forward call. d_enc, when non-null, receives the
// gradient wrt the encoder states (accumulated).
void decoder_backward(const ModelParams& params, const DecoderTrace& trace,
                      const Tensor2& d_logits, std::span<double> grads,
                      Tensor2* d_enc);

void encoder_backward(const ModelParams& params, const EncoderTrace& trace,
                      const Tensor2& d_states, std::span<double> grads);

}  // namespace narseq

#endif  // NARSEQ_MODEL_HPP
