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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string kCli = NARSEQ_CLI_PATH;

struct RunResult {
  int exit_code;
  std::string out;
};

RunResult run(const std::string& args, const std::string& env = "") {
  const fs::path out_file = fs::temp_directory_path() / "narseq_cli_out.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + kCli + " " + args +
                          " > " + out_file.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(out_file);
  r.out.assign((std::istreambuf_iterator<char>(in)), {});
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / "narseq_cli_test") {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& rest) const {
    return (path / rest).string();
  }
};

}  // namespace

TEST_CASE("gen writes byte-identical files for identical flags") {
  TempDir dir;
  const std::string flags =
      " --task copy --seed 7 --train 80 --test 20 --vocab 8 --len-min 2 --len-max 4";
  CHECK(run("gen --out " + dir / "a" + flags).exit_code == 0);
  CHECK(run("gen --out " + dir / "b" + flags).exit_code == 0);
  CHECK(read_file(dir / "a.train.jsonl") == read_file(dir / "b.train.jsonl"));
  CHECK(read_file(dir / "a.test.jsonl") == read_file(dir / "b.test.jsonl"));

  // Existing files are refused without --force (exit 2).
  CHECK(run("gen --out " + dir / "a" + flags).exit_code == 2);
  CHECK(run("gen --out " + dir / "a" + flags + " --force").exit_code == 0);
}

TEST_CASE("gen writes one jsonl line per requested sample") {
  TempDir dir;
  CHECK(run("gen --task copy --seed 7 --train 2000 --test 200 --out " +
            dir / "big").exit_code == 0);
  auto count_lines = [](const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) ++n;
    return n;
  };
  CHECK(count_lines(dir / "big.train.jsonl") == 2000);
  CHECK(count_lines(dir / "big.test.jsonl") == 200);
}

TEST_CASE("QCTC_SEED env supplies the default seed") {
  TempDir dir;
  const std::string flags =
      " --task copy --train 50 --test 10 --vocab 8 --len-min 2 --len-max 4";
  CHECK(run("gen --out " + dir / "env" + flags, "QCTC_SEED=7").exit_code == 0);
  CHECK(run("gen --out " + dir / "flag" + flags + " --seed 7").exit_code == 0);
  CHECK(read_file(dir / "env.train.jsonl") == read_file(dir / "flag.train.jsonl"));
}

TEST_CASE("gen --k-refs caps the reference count per sample") {
  TempDir dir;
  CHECK(run("gen --task multiref --out " + dir / "mr" +
            " --seed 3 --train 60 --test 10 --vocab 8 --len-min 2 --len-max 4 "
            "--k-refs 3").exit_code == 0);
  std::ifstream in(dir / "mr.train.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("valid_refs").size() <= 3);
    CHECK(j.at("valid_refs").size() >= 1);
  }
  CHECK(lines == 60);
}

TEST_CASE("bad flags exit with code 2") {
  CHECK(run("gen --task nosuch --out /tmp/x").exit_code == 2);
  CHECK(run("definitely-not-a-subcommand").exit_code == 2);
  CHECK(run("train --data /nonexistent --out /tmp/x.ckpt").exit_code == 2);
  CHECK(run("--help").exit_code == 0);
}

TEST_CASE("train, eval, and reports round-trip through the CLI") {
  TempDir dir;
  REQUIRE(run("gen --task copy --out " + dir / "ds" +
              " --seed 5 --train 60 --test 15 --vocab 8 --len-min 2 --len-max 3")
              .exit_code == 0);

  const std::string train_flags =
      " --decoder nar --loss qctc --epochs 2 --batch 8 --lr 1e-3 --seed 9"
      " --d-model 16 --heads 2 --enc-layers 1 --dec-layers 1 --ffn-mult 2";
  REQUIRE(run("train --data " + dir / "ds" + " --out " + dir / "m.ckpt" +
              train_flags).exit_code == 0);

  // Report parses and carries per-epoch losses plus the effective config.
  auto report = nlohmann::json::parse(read_file(dir / "m.ckpt.report.json"));
  CHECK(report.at("report").at("epoch_losses").size() == 2);
  CHECK(report.at("effective_config").at("train").at("lr").get<double>() == 1e-3);
  CHECK(report.at("effective_config").at("model").at("d_model").get<int>() == 16);

  // Same seed, same data: byte-identical checkpoint.
  REQUIRE(run("train --data " + dir / "ds" + " --out " + dir / "m2.ckpt" +
              train_flags).exit_code == 0);
  CHECK(read_file(dir / "m.ckpt") == read_file(dir / "m2.ckpt"));

  // Eval emits a stable metrics schema.
  RunResult ev = run("eval --data " + dir / "ds" + " --ckpt " + dir / "m.ckpt" +
                     " --decode greedy");
  CHECK(ev.exit_code == 0);
  auto metrics = nlohmann::json::parse(ev.out);
  CHECK(metrics.at("metrics").contains("exact_match"));
  CHECK(metrics.at("metrics").contains("token_accuracy"));
  CHECK(metrics.at("metrics").at("n_samples").get<int>() == 15);

  // ar-beam decoding on a parallel decoder is a usage error.
  CHECK(run("eval --data " + dir / "ds" + " --ckpt " + dir / "m.ckpt" +
            " --decode ar-beam").exit_code == 2);

  // Both losses are accepted for --decoder nar.
  CHECK(run("train --data " + dir / "ds" + " --out " + dir / "ce.ckpt" +
            " --decoder nar --loss ce --epochs 1 --batch 8 --d-model 16 --heads 2"
            " --enc-layers 1 --dec-layers 1 --ffn-mult 2").exit_code == 0);
}

TEST_CASE("teacher, distill, distilled-student pipeline runs end to end") {
  TempDir dir;
  REQUIRE(run("gen --task multiref --out " + dir / "ds" +
              " --seed 3 --train 50 --test 10 --vocab 8 --len-min 2 --len-max 3"
              " --k-refs 3").exit_code == 0);
  const std::string sizing =
      " --epochs 2 --batch 8 --lr 1e-3 --seed 4 --d-model 16 --heads 2"
      " --enc-layers 1 --dec-layers 1 --ffn-mult 2";
  REQUIRE(run("train --data " + dir / "ds" + " --out " + dir / "t.ckpt" +
              " --decoder ar" + sizing).exit_code == 0);
  REQUIRE(run("distill --data " + dir / "ds" + " --teacher " + dir / "t.ckpt")
              .exit_code == 0);
  CHECK(fs::exists(dir / "ds.distilled.train.jsonl"));
  CHECK(run("train --data " + dir / "ds" + " --distilled --decoder nar"
            " --loss qctc --out " + dir / "s.ckpt" + sizing).exit_code == 0);
}

TEST_CASE("bench refuses tiny sample counts and times matched checkpoints") {
  TempDir dir;
  REQUIRE(run("gen --task copy --out " + dir / "ds" +
              " --seed 5 --train 50 --test 10 --vocab 8 --len-min 2 --len-max 3")
              .exit_code == 0);
  const std::string sizing =
      " --epochs 1 --batch 8 --seed 4 --d-model 16 --heads 2 --enc-layers 1"
      " --dec-layers 1 --ffn-mult 2";
  REQUIRE(run("train --data " + dir / "ds" + " --out " + dir / "ar.ckpt" +
              " --decoder ar" + sizing).exit_code == 0);
  REQUIRE(run("train --data " + dir / "ds" + " --out " + dir / "nar.ckpt" +
              " --decoder nar --loss qctc" + sizing).exit_code == 0);

  CHECK(run("bench --ar " + dir / "ar.ckpt" + " --nar " + dir / "nar.ckpt" +
            " --lengths 2,3 --count 10").exit_code == 2);
  CHECK(run("bench --ar " + dir / "ar.ckpt" + " --nar " + dir / "nar.ckpt" +
            " --lengths 2,3 --count 50 --warmup 2 --out " + dir / "bench.json")
            .exit_code == 0);
  auto report = nlohmann::json::parse(read_file(dir / "bench.json"));
  CHECK(report.at("rows").size() == 2);
  CHECK(report.at("rows")[0].at("nar_passes_per_seq").get<int>() == 1);
  CHECK(report.at("rows")[0].at("ar_passes_per_seq").get<int>() == 3);
  CHECK(report.at("environment").get<std::string>().find("single-threaded") !=
        std::string::npos);
  CHECK(run("bench --ar " + dir / "ar.ckpt" + " --nar " + dir / "nar.ckpt" +
            " --lengths 2,3 --count 50 --threads 2").exit_code == 2);
}

TEST_CASE("error-prop emits the csv curves for grounding checkpoints") {
  TempDir dir;
  REQUIRE(run("gen --task grounding --out " + dir / "ds" +
              " --seed 5 --train 60 --test 30 --vocab 4 --grid 8").exit_code == 0);
  const std::string sizing =
      " --epochs 1 --batch 8 --seed 4 --d-model 16 --heads 2 --enc-layers 1"
      " --dec-layers 1 --ffn-mult 2";
  REQUIRE(run("train --data " + dir / "ds" + " --out " + dir / "ar.ckpt" +
              " --decoder ar" + sizing).exit_code == 0);
  REQUIRE(run("train --data " + dir / "ds" + " --out " + dir / "nar.ckpt" +
              " --decoder nar --loss qctc --n-queries 8" + sizing).exit_code == 0);
  CHECK(run("error-prop --ar " + dir / "ar.ckpt" + " --nar " + dir / "nar.ckpt" +
            " --data " + dir / "ds" + " --out " + dir / "ep.csv").exit_code == 0);
  const std::string csv = read_file(dir / "ep.csv");
  CHECK(csv.find("threshold,ar_count_at") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') >= 2);

  // A non-grounding dataset is a usage error.
  REQUIRE(run("gen --task copy --out " + dir / "cp" +
              " --seed 5 --train 30 --test 5 --vocab 8 --len-min 2 --len-max 3")
              .exit_code == 0);
  CHECK(run("error-prop --ar " + dir / "ar.ckpt" + " --nar " + dir / "nar.ckpt" +
            " --data " + dir / "cp").exit_code == 2);
}

TEST_CASE("sweep-queries marks infeasible counts and writes csv rows") {
  TempDir dir;
  REQUIRE(run("gen --task copy --out " + dir / "ds" +
              " --seed 5 --train 60 --test 20 --vocab 8 --len-min 2 --len-max 3"
              " --no-adjacent-repeats").exit_code == 0);
  CHECK(run("sweep-queries --data " + dir / "ds" + " --n-list 2,3,6 --epochs 1"
            " --d-model 16 --heads 2 --enc-layers 1 --dec-layers 1 --ffn-mult 2"
            " --seed 4 --out " + dir / "sweep.csv").exit_code == 0);
  const std::string csv = read_file(dir / "sweep.csv");
  CHECK(csv.find("n_queries,feasible,exact_match,latency_ms") == 0);
  CHECK(csv.find("2,0,infeasible,infeasible") != std::string::npos);
  CHECK(csv.find("3,1,") != std::string::npos);
  CHECK(csv.find("6,1,") != std::string::npos);
}

TEST_CASE("infeasible query counts exit with code 3 naming the sample") {
  TempDir dir;
  REQUIRE(run("gen --task copy --out " + dir / "ds" +
              " --seed 5 --train 40 --test 10 --vocab 8 --len-min 4 --len-max 4")
              .exit_code == 0);
  RunResult r = run("train --data " + dir / "ds" + " --out " + dir / "m.ckpt" +
                    " --decoder nar --loss qctc --n-queries 2 --epochs 1"
                    " --d-model 16 --heads 2 --enc-layers 1 --dec-layers 1"
                    " --ffn-mult 2");
  CHECK(r.exit_code == 3);
  CHECK(r.out.find("train sample") != std::string::npos);
}
