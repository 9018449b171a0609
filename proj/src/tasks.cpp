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

#include "narseq/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "narseq/errors.hpp"
#include "narseq/numerics.hpp"

namespace narseq {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::copy: return "copy";
    case TaskKind::grounding: return "grounding";
    case TaskKind::jitter: return "jitter";
    case TaskKind::multiref: return "multiref";
  }
  throw UsageError("unknown task kind");
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "copy") return TaskKind::copy;
  if (s == "grounding") return TaskKind::grounding;
  if (s == "jitter") return TaskKind::jitter;
  if (s == "multiref") return TaskKind::multiref;
  throw UsageError("unknown task kind: " + s);
}

void TaskSpec::validate() const {
  if (vocab_content < 2) throw UsageError("TaskSpec: vocab_content must be >= 2");
  if (len_min < 1 || len_max > 12 || len_min > len_max)
    throw UsageError("TaskSpec: length range must sit within [1, 12]");
  if (n_train < 1 || n_val < 0 || n_test < 0)
    throw UsageError("TaskSpec: split sizes must be non-negative (train >= 1)");
  if (kind == TaskKind::multiref) {
    if (k_refs < 2 || k_refs > 6)
      throw UsageError("TaskSpec: k_refs must be in [2, 6]");
    if (len_max > vocab_content)
      throw UsageError("TaskSpec: multiref needs len_max <= vocab_content");
  }
  if (kind == TaskKind::grounding && (grid < 2 || grid > 64))
    throw UsageError("TaskSpec: grid must be in [2, 64]");
  if (kind == TaskKind::jitter && (jitter_max < 0 || jitter_max > 2))
    throw UsageError("TaskSpec: jitter_max must be in [0, 2]");
}

const std::vector<Sample>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw UsageError("unknown split: " + name);
}

namespace {

// Generic dedup-and-slice driver. gen_one draws one sample and its
// dedup key; the first n_train+n_val+n_test distinct keys form the
// splits in order.
template <class GenOne>
Dataset fill_splits(const TaskSpec& spec, Dataset data, GenOne gen_one) {
  const size_t total = static_cast<size_t>(spec.n_train + spec.n_val + spec.n_test);
  Rng rng(spec.seed);
  std::set<std::vector<int>> seen;
  std::vector<Sample> all;
  all.reserve(total);
  uint64_t attempts = 0;
  const uint64_t max_attempts = 200 * static_cast<uint64_t>(total) + 1000;
  while (all.size() < total) {
    if (++attempts > max_attempts) {
      throw UsageError(
          "dataset generation: the task space is too small for disjoint "
          "splits of the requested size; widen the length range or vocab");
    }
    auto [sample, key] = gen_one(rng);
    if (!seen.insert(std::move(key)).second) continue;
    all.push_back(std::move(sample));
  }
  auto it = all.begin();
  data.train.assign(it, it + spec.n_train);
  it += spec.n_train;
  data.val.assign(it, it + spec.n_val);
  it += spec.n_val;
  data.test.assign(it, it + spec.n_test);

  int mpl = 0;
  for (const std::vector<Sample>* split : {&data.train, &data.val, &data.test}) {
    for (const Sample& s : *split) {
      mpl = std::max(mpl, min_path_length(s.target));
      for (const TokenSeq& ref : s.valid_refs)
        mpl = std::max(mpl, min_path_length(ref));
    }
  }
  data.max_min_path_length = mpl;
  return data;
}

}  // namespace

Dataset gen_copy(const TaskSpec& spec) {
  spec.validate();
  if (spec.kind != TaskKind::copy) throw UsageError("gen_copy: wrong task kind");
  Dataset data;
  data.spec = spec;
  // Shared id space: blank 0, content 1..vocab_content.
  data.vocab_out = Vocab::with_size(spec.vocab_content + 1);
  data.vocab_in_size = spec.vocab_content + 1;
  return fill_splits(spec, std::move(data), [&](Rng& rng) {
    Sample s;
    const int len = rng.uniform_int(spec.len_min, spec.len_max);
    for (int i = 0; i < len; ++i) {
      int id = rng.uniform_int(1, spec.vocab_content);
      while (spec.no_adjacent_repeats && !s.input.ids.empty() &&
             id == s.input.ids.back()) {
        id = rng.uniform_int(1, spec.vocab_content);
      }
      s.input.ids.push_back(id);
    }
    s.target = s.input;
    s.valid_refs = {s.target};
    std::vector<int> key = s.input.ids;
    return std::pair(std::move(s), std::move(key));
  });
}

Dataset gen_jitter(const TaskSpec& spec) {
  spec.validate();
  if (spec.kind != TaskKind::jitter) throw UsageError("gen_jitter: wrong task kind");
  Dataset data;
  data.spec = spec;
  // blank 0, filler 1, content 2..vocab_content+1.
  data.vocab_out = Vocab::with_size(spec.vocab_content + 2);
  data.vocab_in_size = spec.vocab_content + 2;
  const int filler = 1;
  data.filler_id = filler;
  return fill_splits(spec, std::move(data), [&, filler](Rng& rng) {
    Sample s;
    const int len = rng.uniform_int(spec.len_min, spec.len_max);
    for (int i = 0; i < len; ++i) {
      int id = rng.uniform_int(2, spec.vocab_content + 1);
      while (spec.no_adjacent_repeats && !s.input.ids.empty() &&
             id == s.input.ids.back()) {
        id = rng.uniform_int(2, spec.vocab_content + 1);
      }
      s.input.ids.push_back(id);
    }
    const int jitter = rng.uniform_int(0, spec.jitter_max);
    for (int i = 0; i < jitter; ++i) s.target.ids.push_back(filler);
    s.target.ids.insert(s.target.ids.end(), s.input.ids.begin(), s.input.ids.end());
    s.valid_refs = {s.target};
    std::vector<int> key = s.input.ids;
    return std::pair(std::move(s), std::move(key));
  });
}

Dataset gen_grounding(const TaskSpec& spec) {
  spec.validate();
  if (spec.kind != TaskKind::grounding)
    throw UsageError("gen_grounding: wrong task kind");
  if (spec.vocab_content < 3)
    throw UsageError("gen_grounding: need at least 3 labels");
  Dataset data;
  data.spec = spec;
  // Output: blank 0, coordinate values 1..grid.
  data.vocab_out = Vocab::with_size(spec.grid + 1);
  // Input: coords 0..grid-1, labels grid..grid+labels-1, query marker last.
  data.vocab_in_size = spec.grid + spec.vocab_content + 1;
  const int label0 = spec.grid;
  const int query_tok = spec.grid + spec.vocab_content;

  return fill_splits(spec, std::move(data), [&, label0, query_tok](Rng& rng) {
    const int n_records = rng.uniform_int(1, 3);
    std::vector<int> labels(static_cast<size_t>(spec.vocab_content));
    for (int i = 0; i < spec.vocab_content; ++i) labels[static_cast<size_t>(i)] = i;
    rng.shuffle(labels);

    struct Record { int label; int box[4]; };
    std::vector<Record> records;
    for (int r = 0; r < n_records; ++r) {
      Record rec;
      rec.label = labels[static_cast<size_t>(r)];
      int xa = rng.uniform_int(0, spec.grid - 1), xb = rng.uniform_int(0, spec.grid - 1);
      int ya = rng.uniform_int(0, spec.grid - 1), yb = rng.uniform_int(0, spec.grid - 1);
      rec.box[0] = std::min(xa, xb);
      rec.box[1] = std::min(ya, yb);
      rec.box[2] = std::max(xa, xb);
      rec.box[3] = std::max(ya, yb);
      records.push_back(rec);
    }
    const int queried = rng.uniform_int(0, n_records - 1);

    Sample s;
    for (const Record& rec : records) {
      s.input.ids.push_back(label0 + rec.label);
      for (int v : rec.box) s.input.ids.push_back(v);
    }
    s.input.ids.push_back(query_tok);
    s.input.ids.push_back(label0 + records[static_cast<size_t>(queried)].label);
    for (int v : records[static_cast<size_t>(queried)].box)
      s.target.ids.push_back(coord_to_token(v));
    s.valid_refs = {s.target};
    std::vector<int> key = s.input.ids;
    return std::pair(std::move(s), std::move(key));
  });
}

Dataset gen_multiref(const TaskSpec& spec) {
  spec.validate();
  if (spec.kind != TaskKind::multiref)
    throw UsageError("gen_multiref: wrong task kind");
  Dataset data;
  data.spec = spec;
  data.vocab_out = Vocab::with_size(spec.vocab_content + 1);
  data.vocab_in_size = spec.vocab_content + 1;
  return fill_splits(spec, std::move(data), [&](Rng& rng) {
    const int len = rng.uniform_int(spec.len_min, spec.len_max);
    // Content is a multiset; its sorted order is the canonical ref and
    // the dedup key, so permuted inputs of the same content never leak
    // across splits.
    std::vector<int> key(static_cast<size_t>(len));
    for (int& id : key) id = rng.uniform_int(1, spec.vocab_content);
    std::sort(key.begin(), key.end());

    Sample s;
    std::vector<int> canonical = key;
    do {
      s.valid_refs.emplace_back(canonical);
    } while (static_cast<int>(s.valid_refs.size()) < spec.k_refs &&
             std::next_permutation(canonical.begin(), canonical.end()));
    s.target = s.valid_refs.front();

    // The input presents the content in a random order.
    std::vector<int> shuffled = key;
    rng.shuffle(shuffled);
    s.input = TokenSeq{shuffled};
    return std::pair(std::move(s), std::move(key));
  });
}

Dataset generate(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::copy: return gen_copy(spec);
    case TaskKind::grounding: return gen_grounding(spec);
    case TaskKind::jitter: return gen_jitter(spec);
    case TaskKind::multiref: return gen_multiref(spec);
  }
  throw UsageError("generate: unknown task kind");
}

TokenSeq strip_filler(const TokenSeq& seq, int filler_id) {
  if (filler_id < 0) return seq;
  TokenSeq out;
  for (int id : seq.ids) {
    if (id != filler_id) out.ids.push_back(id);
  }
  return out;
}

bool prediction_matches(const Dataset& data, const Sample& sample,
                        const TokenSeq& prediction) {
  const TokenSeq pred = strip_filler(prediction, data.filler_id);
  for (const TokenSeq& ref : sample.valid_refs) {
    if (strip_filler(ref, data.filler_id) == pred) return true;
  }
  return false;
}

// ---- file formats -----------------------------------------------------------

namespace {

nlohmann::json spec_to_json(const TaskSpec& s) {
  return {{"kind", to_string(s.kind)},   {"vocab_content", s.vocab_content},
          {"len_min", s.len_min},        {"len_max", s.len_max},
          {"n_train", s.n_train},        {"n_val", s.n_val},
          {"n_test", s.n_test},          {"seed", s.seed},
          {"k_refs", s.k_refs},          {"grid", s.grid},
          {"jitter_max", s.jitter_max},
          {"no_adjacent_repeats", s.no_adjacent_repeats}};
}

TaskSpec spec_from_json(const nlohmann::json& j) {
  TaskSpec s;
  s.kind = task_kind_from_string(j.at("kind").get<std::string>());
  s.vocab_content = j.at("vocab_content").get<int>();
  s.len_min = j.at("len_min").get<int>();
  s.len_max = j.at("len_max").get<int>();
  s.n_train = j.at("n_train").get<int>();
  s.n_val = j.at("n_val").get<int>();
  s.n_test = j.at("n_test").get<int>();
  s.seed = j.at("seed").get<uint64_t>();
  s.k_refs = j.at("k_refs").get<int>();
  s.grid = j.at("grid").get<int>();
  s.jitter_max = j.at("jitter_max").get<int>();
  s.no_adjacent_repeats = j.value("no_adjacent_repeats", false);
  return s;
}

std::filesystem::path header_path(const std::filesystem::path& prefix) {
  return prefix.string() + ".header.json";
}

std::filesystem::path split_path(const std::filesystem::path& prefix,
                                 const std::string& split) {
  return prefix.string() + "." + split + ".jsonl";
}

void write_split(const std::filesystem::path& path,
                 const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  for (const Sample& s : samples) {
    nlohmann::json refs = nlohmann::json::array();
    for (const TokenSeq& r : s.valid_refs) refs.push_back(r.ids);
    nlohmann::json line{{"input", s.input.ids}, {"target", s.target.ids},
                        {"valid_refs", refs}};
    out << line.dump() << "\n";
  }
}

std::vector<Sample> read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  std::vector<Sample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Sample s;
    s.input = TokenSeq{j.at("input").get<std::vector<int>>()};
    s.target = TokenSeq{j.at("target").get<std::vector<int>>()};
    for (const auto& r : j.at("valid_refs"))
      s.valid_refs.emplace_back(r.get<std::vector<int>>());
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& prefix,
                  bool force) {
  const std::vector<std::string> splits{"train", "val", "test"};
  if (!force) {
    for (const auto& s : splits) {
      if (std::filesystem::exists(split_path(prefix, s)))
        throw UsageError(split_path(prefix, s).string() +
                         " exists; pass --force to overwrite");
    }
    if (std::filesystem::exists(header_path(prefix)))
      throw UsageError(header_path(prefix).string() +
                       " exists; pass --force to overwrite");
  }
  if (prefix.has_parent_path())
    std::filesystem::create_directories(prefix.parent_path());

  nlohmann::json header{
      {"task_spec", spec_to_json(data.spec)},
      {"vocab_in_size", data.vocab_in_size},
      {"vocab_out",
       {{"size", data.vocab_out.size},
        {"blank_id", data.vocab_out.blank_id},
        {"names", data.vocab_out.names}}},
      {"filler_id", data.filler_id},
      {"distilled", data.distilled},
      {"max_min_path_length", data.max_min_path_length},
      {"counts",
       {{"train", data.train.size()}, {"val", data.val.size()},
        {"test", data.test.size()}}}};
  std::ofstream out(header_path(prefix), std::ios::trunc);
  if (!out) throw UsageError("cannot write " + header_path(prefix).string());
  out << header.dump(2) << "\n";

  write_split(split_path(prefix, "train"), data.train);
  write_split(split_path(prefix, "val"), data.val);
  write_split(split_path(prefix, "test"), data.test);
}

Dataset load_dataset(const std::filesystem::path& prefix) {
  std::ifstream in(header_path(prefix));
  if (!in)
    throw UsageError("no dataset header at " + header_path(prefix).string());
  nlohmann::json header = nlohmann::json::parse(in);

  Dataset data;
  data.spec = spec_from_json(header.at("task_spec"));
  data.vocab_in_size = header.at("vocab_in_size").get<int>();
  data.vocab_out.size = header.at("vocab_out").at("size").get<int>();
  data.vocab_out.blank_id = header.at("vocab_out").at("blank_id").get<int>();
  data.vocab_out.names =
      header.at("vocab_out").at("names").get<std::vector<std::string>>();
  data.filler_id = header.at("filler_id").get<int>();
  data.distilled = header.at("distilled").get<bool>();
  data.max_min_path_length = header.at("max_min_path_length").get<int>();
  data.train = read_split(split_path(prefix, "train"));
  data.val = read_split(split_path(prefix, "val"));
  data.test = read_split(split_path(prefix, "test"));

  for (const std::vector<Sample>* split : {&data.train, &data.val, &data.test}) {
    for (const Sample& s : *split) {
      for (int id : s.target.ids) {
        if (id <= 0 || id >= data.vocab_out.size)
          throw UsageError("dataset: target token outside vocab or blank");
      }
      for (int id : s.input.ids) {
        if (id < 0 || id >= data.vocab_in_size)
          throw UsageError("dataset: input token outside vocab");
      }
    }
  }
  return data;
}

}  // namespace narseq
