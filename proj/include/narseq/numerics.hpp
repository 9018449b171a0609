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

#ifndef NARSEQ_NUMERICS_HPP
#define NARSEQ_NUMERICS_HPP

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace narseq {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Dense row-major matrix of 64-bit floats. All tensor math in this
// library runs in double precision; log-space values may hold -inf.
struct Tensor2 {
  int rows{0};
  int cols{0};
  std::vector<double> data;  // rows * cols, row-major

  Tensor2() = default;
  Tensor2(int r, int c)
      : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  std::span<double> row(int r) {
    return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }

  void fill(double v) { data.assign(data.size(), v); }
  bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;
};

// c += a * b for row-major operands; shapes must agree.
void matmul_acc(const Tensor2& a, const Tensor2& b, Tensor2& c);
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
// c += a^T * b
void matmul_tn_acc(const Tensor2& a, const Tensor2& b, Tensor2& c);
// c += a * b^T
void matmul_nt_acc(const Tensor2& a, const Tensor2& b, Tensor2& c);

// Log-domain probability. -infinity encodes probability zero.
struct LogProb {
  double value{kNegInf};

  LogProb() = default;
  explicit LogProb(double v) : value(v) {}
  static LogProb zero() { return LogProb(kNegInf); }  // probability 0
  static LogProb one() { return LogProb(0.0); }       // probability 1
};

// log(exp(a) + exp(b)), exact when either side is -inf.
double log_add(double a, double b);

// log sum_i exp(v_i) by max-shift. Values are log-probabilities;
// -inf entries are absorbed. Empty input is a usage error.
double log_sum_exp(std::span<const double> values);
LogProb log_sum_exp(std::span<const LogProb> values);

// softmax over one row of finite logits; entries positive, sum 1.
std::vector<double> softmax_row(std::span<const double> logits);
void softmax_row_into(std::span<const double> logits, std::span<double> out);
// log softmax (max-shifted); safe building block for log-space DPs.
void log_softmax_row_into(std::span<const double> logits, std::span<double> out);

// Deterministic PRNG: SplitMix64 (Steele, Lea & Flood 2014), a 64-bit
// counter-based generator. Identical seeds produce identical draw
// sequences on every platform. Doubles use the top 53 bits; normals
// come from Box-Muller with a cached spare; bounded ints use
// rejection sampling, so no draw is biased.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal(double mean = 0.0, double stddev = 1.0);
  uint64_t below(uint64_t n);          // uniform in [0, n), n >= 1
  int uniform_int(int lo, int hi);     // uniform in [lo, hi] inclusive

  // Derive an independent stream, e.g. one per sample index.
  Rng fork(uint64_t stream) const;

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool has_spare_{false};
  double spare_{0.0};
};

// Max over coordinates of |g_analytic - g_central| / max(1, |g_a|, |g_fd|),
// where g_central is the central finite difference of f at `point` with
// the given step. Throws NumericalError if f is non-finite at any
// perturbed point.
double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> point,
                  std::span<const double> analytic_grad, double step);

}  // namespace narseq

#endif  // NARSEQ_NUMERICS_HPP
