#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chanrec/dataset_io.hpp"
#include "chanrec/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

// Subprocess smoke tests against the installed binary. The path comes from
// the build system.
#ifndef CHANREC_CLI_PATH
#error "CHANREC_CLI_PATH must be defined"
#endif

namespace fs = std::filesystem;
using namespace chanrec;

namespace {

int run_cli(const std::string& args) {
  const std::string command = std::string(CHANREC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};



}  // namespace

TEST_CASE("cli pipeline: generate, estimate, train, allocate, evaluate, report") {
  TempDir dir("chanrec_cli_test");
  const std::string root = dir.path.string();

  // small world config for speed
  {
    std::ofstream cfg(dir.path / "world.json");
    cfg << R"({"n_items": 240, "n_users": 120, "n_brands": 20, "seed": 5})";
  }

  REQUIRE(run_cli("generate --config " + root + "/world.json --out " + root +
                  "/world --exposures 1500 --log-seed 3") == 0);
  CHECK(fs::exists(dir.path / "world" / "catalog.jsonl"));
  CHECK(fs::exists(dir.path / "world" / "manifest.json"));

  // generated data validates
  const Dataset dataset = read_dataset_dir(dir.path / "world");
  CHECK(validate_dataset(dataset).empty());

  // same seed twice: identical bytes
  REQUIRE(run_cli("generate --config " + root + "/world.json --out " + root +
                  "/world2 --exposures 1500 --log-seed 3") == 0);
  CHECK(slurp(dir.path / "world" / "logs.jsonl") == slurp(dir.path / "world2" / "logs.jsonl"));
  CHECK(slurp(dir.path / "world" / "catalog.jsonl") ==
        slurp(dir.path / "world2" / "catalog.jsonl"));

  REQUIRE(run_cli("estimate-thresholds --data " + root + "/world --out " + root +
                  "/thresholds.json --min-support 30") == 0);
  const auto thresholds = pipeline::read_thresholds_json(dir.path / "thresholds.json");
  CHECK(!thresholds.empty());
  // idempotent re-run
  REQUIRE(run_cli("estimate-thresholds --data " + root + "/world --out " + root +
                  "/thresholds2.json --min-support 30") == 0);
  CHECK(slurp(dir.path / "thresholds.json") == slurp(dir.path / "thresholds2.json"));

  REQUIRE(run_cli("train-ctr --data " + root + "/world --out " + root +
                  "/ctr.ckpt --loss-csv " + root +
                  "/loss.csv --epochs 3 --lr 0.003 --batch 256 --seed 7") == 0);
  CHECK(fs::exists(dir.path / "ctr.ckpt"));

  // training loss decreases over the first epochs
  {
    std::ifstream loss(dir.path / "loss.csv");
    std::string header, first, last, line;
    std::getline(loss, header);
    std::getline(loss, first);
    while (std::getline(loss, line))
      if (!line.empty()) last = line;
    const double first_loss = std::stod(first.substr(first.find(',') + 1));
    const double last_loss = std::stod(last.substr(last.find(',') + 1));
    CHECK(last_loss < first_loss);
  }

  // resume equals uninterrupted
  REQUIRE(run_cli("train-ctr --data " + root + "/world --out " + root +
                  "/ctr_short.ckpt --epochs 1 --lr 0.003 --batch 256 --seed 7") == 0);
  REQUIRE(run_cli("train-ctr --data " + root + "/world --out " + root +
                  "/ctr_resumed.ckpt --resume " + root +
                  "/ctr_short.ckpt --epochs 3 --lr 0.003 --batch 256 --seed 7") == 0);
  CHECK(slurp(dir.path / "ctr.ckpt") == slurp(dir.path / "ctr_resumed.ckpt"));

  REQUIRE(run_cli("train-rerank --data " + root + "/world --ctr " + root + "/ctr.ckpt --out " +
                  root + "/rerank.ckpt --epochs 2 --lr 0.002 --batch 32 --seed 9") == 0);

  REQUIRE(run_cli("allocate --world " + root + "/world --ctr " + root +
                  "/ctr.ckpt --thresholds " + root + "/thresholds.json --out " + root +
                  "/pages.jsonl --requests 12 --seed 31") == 0);
  {
    std::ifstream pages(dir.path / "pages.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(pages, line)) {
      if (line.empty()) continue;
      ++lines;
      CHECK(line.find("\"status\":\"optimal\"") != std::string::npos);
      // overflow h=1: capacities 3,4,3 -> 4+5+4 item ids per line
    }
    CHECK(lines == 12);
  }

  REQUIRE(run_cli("evaluate --world " + root + "/world --ctr " + root + "/ctr.ckpt --rerank " +
                  root + "/rerank.ckpt --thresholds " + root + "/thresholds.json --out " + root +
                  "/eval --requests 60 --seed 17 --method dnn-topk,mmr,uci-aa,uci-aa-dhanr") == 0);
  CHECK(fs::exists(dir.path / "eval" / "report.csv"));

  // byte-identical reports under the same seed
  REQUIRE(run_cli("evaluate --world " + root + "/world --ctr " + root + "/ctr.ckpt --rerank " +
                  root + "/rerank.ckpt --thresholds " + root + "/thresholds.json --out " + root +
                  "/eval2 --requests 60 --seed 17 --method dnn-topk,mmr,uci-aa,uci-aa-dhanr") ==
          0);
  CHECK(slurp(dir.path / "eval" / "report.csv") == slurp(dir.path / "eval2" / "report.csv"));
  CHECK(slurp(dir.path / "eval" / "raw.csv") == slurp(dir.path / "eval2" / "raw.csv"));

  // report re-aggregation reproduces the evaluate-time report
  REQUIRE(run_cli("report --raw " + root + "/eval/raw.csv --out " + root + "/re_report.csv") ==
          0);
  CHECK(slurp(dir.path / "eval" / "report.csv") == slurp(dir.path / "re_report.csv"));

  // attention dump groups weights by category pair
  REQUIRE(run_cli("evaluate --world " + root + "/world --ctr " + root + "/ctr.ckpt --rerank " +
                  root + "/rerank.ckpt --thresholds " + root + "/thresholds.json --out " + root +
                  "/eval3 --requests 20 --seed 17 --method uci-aa-dhanr --attention-dump") == 0);
  {
    std::ifstream dump(dir.path / "eval3" / "attention.csv");
    REQUIRE(dump.good());
    std::string header;
    std::getline(dump, header);
    CHECK(header == "category_a,category_b,avg_weight,n");
    std::string line;
    int rows = 0;
    while (std::getline(dump, line))
      if (!line.empty()) ++rows;
    CHECK(rows > 0);
  }

  // one-shot allocation solve over file interfaces
  {
    std::ofstream scores(dir.path / "scores.csv");
    scores << "0.9,0.1,0.5,0.2\n0.8,0.2,0.4,0.3\n";
    std::ofstream cfg(dir.path / "alloc.json");
    cfg << R"({"capacities":[1,1],"overflow_h":0,"per_channel_bound":1,
               "diversity_penalty":2.0,
               "category_of":["phone","phone","food","food"],
               "thresholds":{"phone":1,"food":1}})";
  }
  REQUIRE(run_cli("solve-alloc --scores " + root + "/scores.csv --config " + root +
                  "/alloc.json --out " + root + "/solution.json") == 0);
  const std::string solution = slurp(dir.path / "solution.json");
  CHECK(solution.find("\"status\":\"optimal\"") != std::string::npos);
  CHECK(solution.find("\"objective\":1.3") != std::string::npos);
}

TEST_CASE("cli error paths use distinct exit codes") {
  TempDir dir("chanrec_cli_errors");
  const std::string root = dir.path.string();
  // missing required flag -> usage error
  CHECK(run_cli("generate") == 2);
  // unparseable config -> config error
  {
    std::ofstream cfg(dir.path / "bad.json");
    cfg << "{nope";
  }
  CHECK(run_cli("generate --config " + root + "/bad.json --out " + root + "/w") == 2);
  // missing data -> data error
  CHECK(run_cli("estimate-thresholds --data " + root + "/missing --out " + root + "/t.json") ==
        3);
  // unknown method -> config error
  CHECK(run_cli("evaluate --world " + root + "/missing --ctr x --thresholds y --out " + root +
                "/e --method bogus") == 3);
}
