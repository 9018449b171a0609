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

#include "narseq/numerics.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "narseq/errors.hpp"

namespace narseq {

bool Tensor2::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void matmul_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
  const int n = a.rows, k = a.cols, m = b.cols;
  for (int i = 0; i < n; ++i) {
    double* ci = c.data.data() + static_cast<size_t>(i) * m;
    const double* ai = a.data.data() + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b.data.data() + static_cast<size_t>(p) * m;
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  Tensor2 c(a.rows, b.cols);
  matmul_acc(a, b, c);
  return c;
}

void matmul_tn_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
  const int n = a.cols, k = a.rows, m = b.cols;
  for (int p = 0; p < k; ++p) {
    const double* ap = a.data.data() + static_cast<size_t>(p) * n;
    const double* bp = b.data.data() + static_cast<size_t>(p) * m;
    for (int i = 0; i < n; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c.data.data() + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_nt_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
  const int n = a.rows, k = a.cols, m = b.rows;
  for (int i = 0; i < n; ++i) {
    const double* ai = a.data.data() + static_cast<size_t>(i) * k;
    double* ci = c.data.data() + static_cast<size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double* bj = b.data.data() + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw UsageError("log_sum_exp: empty input");
  double hi = kNegInf;
  for (double v : values) hi = std::max(hi, v);
  if (hi == kNegInf) return kNegInf;  // all entries are probability zero
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

LogProb log_sum_exp(std::span<const LogProb> values) {
  if (values.empty()) throw UsageError("log_sum_exp: empty input");
  std::vector<double> raw(values.size());
  for (size_t i = 0; i < values.size(); ++i) raw[i] = values[i].value;
  return LogProb(log_sum_exp(std::span<const double>(raw)));
}

void softmax_row_into(std::span<const double> logits, std::span<double> out) {
  if (logits.empty()) throw UsageError("softmax_row: empty input");
  assert(out.size() == logits.size());
  double hi = logits[0];
  for (double v : logits) hi = std::max(hi, v);
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - hi);
    sum += out[i];
  }
  const double inv = 1.0 / sum;
  for (size_t i = 0; i < out.size(); ++i) out[i] *= inv;
}

std::vector<double> softmax_row(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  softmax_row_into(logits, out);
  return out;
}

void log_softmax_row_into(std::span<const double> logits, std::span<double> out) {
  if (logits.empty()) throw UsageError("log_softmax_row: empty input");
  assert(out.size() == logits.size());
  double hi = logits[0];
  for (double v : logits) hi = std::max(hi, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - hi);
  const double lz = hi + std::log(sum);
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
}

uint64_t Rng::next_u64() {
  // SplitMix64 step.
  state_ += 0x9E3779B97F4A7C15ULL;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + spare_ * stddev;
  }
  // Box-Muller; 1-u keeps log away from zero.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return mean + r * std::cos(theta) * stddev;
}

uint64_t Rng::below(uint64_t n) {
  if (n == 0) throw UsageError("Rng::below: n must be positive");
  if ((n & (n - 1)) == 0) return next_u64() & (n - 1);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

int Rng::uniform_int(int lo, int hi) {
  if (lo > hi) throw UsageError("Rng::uniform_int: empty range");
  return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo) + 1));
}

namespace {

uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng Rng::fork(uint64_t stream) const {
  // Double mix keeps sibling streams decorrelated.
  return Rng(mix64(state_ + mix64(stream)));
}

double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> point,
                  std::span<const double> analytic_grad, double step) {
  if (step <= 0.0) throw UsageError("grad_check: step must be positive");
  if (point.size() != analytic_grad.size())
    throw UsageError("grad_check: gradient size mismatch");
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double hi = f(x);
    x[i] = keep - step;
    const double lo = f(x);
    x[i] = keep;
    if (!std::isfinite(hi) || !std::isfinite(lo))
      throw NumericalError("grad_check: non-finite objective at perturbed point");
    const double fd = (hi - lo) / (2.0 * step);
    const double ga = analytic_grad[i];
    const double denom = std::max({1.0, std::abs(ga), std::abs(fd)});
    worst = std::max(worst, std::abs(ga - fd) / denom);
  }
  return worst;
}

}  // namespace narseq
