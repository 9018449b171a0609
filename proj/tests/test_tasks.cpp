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

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "narseq/errors.hpp"
#include "narseq/tasks.hpp"

using namespace narseq;

namespace {

bool datasets_equal(const Dataset& a, const Dataset& b) {
  auto eq = [](const std::vector<Sample>& x, const std::vector<Sample>& y) {
    if (x.size() != y.size()) return false;
    for (size_t i = 0; i < x.size(); ++i) {
      if (x[i].input != y[i].input || x[i].target != y[i].target ||
          x[i].valid_refs != y[i].valid_refs)
        return false;
    }
    return true;
  };
  return eq(a.train, b.train) && eq(a.val, b.val) && eq(a.test, b.test);
}

}  // namespace

TEST_CASE("copy task: identity targets, determinism, disjoint splits") {
  TaskSpec spec;
  spec.kind = TaskKind::copy;
  spec.n_train = 300;
  spec.n_val = 40;
  spec.n_test = 60;
  spec.seed = 7;

  Dataset a = gen_copy(spec);
  CHECK(a.train.size() == 300);
  CHECK(a.test.size() == 60);
  for (const Sample& s : a.train) {
    CHECK(s.target == s.input);
    CHECK(s.valid_refs == std::vector<TokenSeq>{s.target});
  }

  Dataset b = gen_copy(spec);
  CHECK(datasets_equal(a, b));

  for (uint64_t seed = 0; seed < 10; ++seed) {
    TaskSpec sp = spec;
    sp.seed = seed;
    Dataset d = gen_copy(sp);
    std::set<std::vector<int>> train_inputs;
    for (const Sample& s : d.train) train_inputs.insert(s.input.ids);
    for (const Sample& s : d.val) CHECK(!train_inputs.contains(s.input.ids));
    for (const Sample& s : d.test) CHECK(!train_inputs.contains(s.input.ids));
  }
}

TEST_CASE("generation rejects spaces too small for disjoint splits") {
  TaskSpec spec;
  spec.kind = TaskKind::copy;
  spec.vocab_content = 2;
  spec.len_min = 1;
  spec.len_max = 2;   // only 6 distinct inputs exist
  spec.n_train = 50;
  spec.n_test = 10;
  CHECK_THROWS_AS(gen_copy(spec), UsageError);
}

TEST_CASE("jitter task: filler prefix, recovery, uniform jitter") {
  TaskSpec spec;
  spec.kind = TaskKind::jitter;
  spec.len_min = 3;
  spec.len_max = 8;
  spec.n_train = 10000;
  spec.n_test = 0;
  spec.seed = 3;

  Dataset d = gen_jitter(spec);
  REQUIRE(d.filler_id == 1);
  std::vector<int> jitter_counts(3, 0);
  for (const Sample& s : d.train) {
    const int jitter = s.target.length() - s.input.length();
    REQUIRE(jitter >= 0);
    REQUIRE(jitter <= 2);
    ++jitter_counts[static_cast<size_t>(jitter)];
    for (int k = 0; k < jitter; ++k) CHECK(s.target.ids[static_cast<size_t>(k)] == d.filler_id);
    CHECK(strip_filler(s.target, d.filler_id) == s.input);
    for (int id : s.input.ids) CHECK(id != d.filler_id);
  }

  // Chi-squared against uniform over {0,1,2}: 2 dof, p > 0.01 means
  // the statistic stays below 9.21.
  const double expected = 10000.0 / 3.0;
  double chi2 = 0.0;
  for (int c : jitter_counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 9.21);
}

TEST_CASE("grounding task: box targets keyed by the queried label") {
  TaskSpec spec;
  spec.kind = TaskKind::grounding;
  spec.n_train = 400;
  spec.n_test = 50;
  spec.seed = 11;

  Dataset d = gen_grounding(spec);
  const int label0 = spec.grid;
  const int query_tok = spec.grid + spec.vocab_content;
  for (const Sample& s : d.train) {
    REQUIRE(s.target.length() == 4);
    const int x1 = token_to_coord(s.target.ids[0]);
    const int y1 = token_to_coord(s.target.ids[1]);
    const int x2 = token_to_coord(s.target.ids[2]);
    const int y2 = token_to_coord(s.target.ids[3]);
    CHECK(x1 <= x2);
    CHECK(y1 <= y2);
    CHECK(x1 >= 0);
    CHECK(y2 < spec.grid);

    // Parse the record list and confirm the target is the queried
    // record's box, wherever that record sits in the input.
    REQUIRE(s.input.length() >= 7);
    const int n_records = (s.input.length() - 2) / 5;
    const int queried_label = s.input.ids[static_cast<size_t>(s.input.length() - 1)];
    CHECK(s.input.ids[static_cast<size_t>(s.input.length() - 2)] == query_tok);
    bool found = false;
    for (int r = 0; r < n_records; ++r) {
      if (s.input.ids[static_cast<size_t>(5 * r)] != queried_label) continue;
      found = true;
      for (int k = 0; k < 4; ++k) {
        CHECK(coord_to_token(s.input.ids[static_cast<size_t>(5 * r + 1 + k)]) ==
              s.target.ids[static_cast<size_t>(k)]);
      }
    }
    CHECK(found);
    CHECK(label0 <= queried_label);
  }
}

TEST_CASE("multiref task: reference orderings and any-ref matching") {
  TaskSpec spec;
  spec.kind = TaskKind::multiref;
  spec.vocab_content = 8;
  spec.len_min = 2;
  spec.len_max = 4;
  spec.k_refs = 3;
  spec.n_train = 200;
  spec.n_test = 30;
  spec.seed = 5;

  Dataset d = gen_multiref(spec);
  int multi_ref_samples = 0;
  for (const Sample& s : d.train) {
    CHECK(s.valid_refs.size() >= 1);  // all-equal content has one ordering
    CHECK(s.valid_refs.size() <= 3);
    if (s.valid_refs.size() > 1) ++multi_ref_samples;
    CHECK(std::find(s.valid_refs.begin(), s.valid_refs.end(), s.target) !=
          s.valid_refs.end());
    // Every ref is a permutation of the input content.
    std::vector<int> want = s.input.ids;
    std::sort(want.begin(), want.end());
    for (const TokenSeq& ref : s.valid_refs) {
      std::vector<int> got = ref.ids;
      std::sort(got.begin(), got.end());
      CHECK(got == want);
    }
  }
  CHECK(multi_ref_samples > static_cast<int>(d.train.size()) / 2);

  // A two-distinct-token content keeps both orderings.
  TaskSpec two = spec;
  two.len_min = two.len_max = 2;
  two.k_refs = 2;
  two.n_train = 20;
  two.n_test = 5;
  Dataset d2 = gen_multiref(two);
  bool checked = false;
  for (const Sample& s0 : d2.train) {
    if (s0.valid_refs.size() != 2) continue;
    TokenSeq reversed{{s0.valid_refs[0].ids[1], s0.valid_refs[0].ids[0]}};
    CHECK(s0.valid_refs[1] == reversed);
    CHECK(prediction_matches(d2, s0, reversed));
    CHECK(!prediction_matches(d2, s0, TokenSeq{}));
    checked = true;
  }
  CHECK(checked);
}

TEST_CASE("vocabulary hygiene and path-length header across tasks") {
  for (TaskKind kind : {TaskKind::copy, TaskKind::grounding, TaskKind::jitter,
                        TaskKind::multiref}) {
    TaskSpec spec;
    spec.kind = kind;
    spec.len_min = 2;
    spec.len_max = 4;
    spec.n_train = 120;
    spec.n_test = 30;
    spec.seed = 17;
    Dataset d = generate(spec);
    for (const std::vector<Sample>* split : {&d.train, &d.test}) {
      for (const Sample& s : *split) {
        for (int id : s.target.ids) {
          CHECK(id != d.vocab_out.blank_id);
          CHECK(id > 0);
          CHECK(id < d.vocab_out.size);
        }
        for (int id : s.input.ids) {
          CHECK(id >= 0);
          CHECK(id < d.vocab_in_size);
        }
        CHECK(min_path_length(s.target) <= d.max_min_path_length);
        for (const TokenSeq& ref : s.valid_refs)
          CHECK(min_path_length(ref) <= d.max_min_path_length);
      }
    }
  }
}

TEST_CASE("datasets round-trip through jsonl byte-identically") {
  TaskSpec spec;
  spec.kind = TaskKind::multiref;
  spec.vocab_content = 6;
  spec.len_min = 2;
  spec.len_max = 3;
  spec.n_train = 40;
  spec.n_val = 8;
  spec.n_test = 12;
  spec.seed = 23;
  Dataset d = gen_multiref(spec);

  const auto dir = std::filesystem::temp_directory_path() / "narseq_tasks_test";
  std::filesystem::remove_all(dir);
  const auto prefix = dir / "data";
  save_dataset(d, prefix);

  Dataset loaded = load_dataset(prefix);
  CHECK(datasets_equal(d, loaded));
  CHECK(loaded.spec.k_refs == spec.k_refs);
  CHECK(loaded.max_min_path_length == d.max_min_path_length);
  CHECK(loaded.distilled == false);

  // Overwrite refused without force, byte-identical with it.
  CHECK_THROWS_AS(save_dataset(d, prefix), UsageError);
  auto read_all = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
  };
  const std::string before = read_all(prefix.string() + ".train.jsonl");
  save_dataset(d, prefix, /*force=*/true);
  CHECK(read_all(prefix.string() + ".train.jsonl") == before);
  std::filesystem::remove_all(dir);
}
