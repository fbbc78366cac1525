#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "pgqa/cli.hpp"
#include "pgqa/json_io.hpp"

using namespace pgqa;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "pgqa");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

void put(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::string get(const fs::path& p) { return io::read_file(p.string()); }

void write_doc_entries(const fs::path& p) {
  std::string s;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 30; ++i) {
      io::OJson j;
      j["doc_id"] = "c" + std::to_string(c) + "_" + std::to_string(i);
      j["cluster"] = "cluster" + std::to_string(c);
      j["sub_label"] = "sub" + std::to_string(i % 3);
      j["page_count"] = 1 + (i * 7) % 40;
      s += j.dump() + "\n";
    }
  put(p, s);
}

void write_raw_pages(const fs::path& p) {
  std::string s;
  for (int doc = 0; doc < 2; ++doc)
    for (int page = 3; page >= 1; --page) {
      io::OJson j;
      j["doc_id"] = "doc" + std::to_string(doc);
      j["page_no"] = page;
      j["width_px"] = 1000;
      j["height_px"] = 1000;
      io::OJson lines = io::OJson::array();
      for (int l = 0; l < 2; ++l) {
        const int y = 100 + 30 * l;
        lines.push_back({{"text", "doc " + std::to_string(doc) + " page " + std::to_string(page) + " line " +
                                      std::to_string(l)},
                         {"box", {100, y, 900, y + 25}}});
      }
      j["lines"] = lines;
      s += j.dump() + "\n";
    }
  put(p, s);
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == cli::kExitValidation);
  CHECK(run({"frobnicate"}).code == cli::kExitValidation);
  auto r = run({"evaluate", "--bogus"});
  CHECK(r.code == cli::kExitValidation);
  CHECK(r.err.find("error:") != std::string::npos);
  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("evaluate identity run") {
  const auto dir = testing::scratch_dir("cli_eval");
  const std::string line = R"j({"id":"x","answer":"The mayor opened it (Page 4)","pages":[4]})j" "\n";
  put(dir / "pred.jsonl", line);
  put(dir / "ref.jsonl", line);
  auto r = run({"evaluate", "--pred", (dir / "pred.jsonl").string(), "--ref", (dir / "ref.jsonl").string(),
                "--output", (dir / "report.csv").string()});
  REQUIRE(r.code == cli::kExitOk);
  const auto csv = get(dir / "report.csv");
  CHECK(csv.find("none,no,no,1,1.000000,1.000000,1.000000,1.000000") != std::string::npos);
  CHECK(fs::exists(dir / "report.csv.manifest.json"));
  CHECK(r.out.find("1.0000") != std::string::npos);

  put(dir / "empty.jsonl", "");
  CHECK(run({"evaluate", "--pred", (dir / "empty.jsonl").string(), "--ref", (dir / "ref.jsonl").string()}).code ==
        cli::kExitValidation);
}

TEST_CASE("sample is reproducible and records a manifest") {
  const auto dir = testing::scratch_dir("cli_sample");
  write_doc_entries(dir / "docs.jsonl");
  auto once = [&](const std::string& out) {
    return run({"--seed", "7", "sample", "--docs", (dir / "docs.jsonl").string(), "--k", "3", "--quota", "10",
                "--test-quota", "4", "--output", (dir / out).string(), "--test-output",
                (dir / (out + ".test")).string()});
  };
  REQUIRE(once("a.txt").code == cli::kExitOk);
  REQUIRE(once("b.txt").code == cli::kExitOk);
  CHECK(get(dir / "a.txt") == get(dir / "b.txt"));
  CHECK(get(dir / "a.txt.test") == get(dir / "b.txt.test"));
  std::istringstream ids(get(dir / "a.txt"));
  std::string id;
  std::size_t n = 0;
  while (std::getline(ids, id)) n += !id.empty();
  CHECK(n == 30);

  auto manifest = io::read_json_file((dir / "a.txt.manifest.json").string());
  CHECK(manifest["command"] == "sample");
  CHECK(manifest["inputs"][(dir / "docs.jsonl").string()] == cli::sha256_file((dir / "docs.jsonl").string()));
  CHECK(fs::exists(dir / "a.txt.config.json"));
  // No timestamps: two runs agree on everything except output names.
  auto mb = io::read_json_file((dir / "b.txt.manifest.json").string());
  CHECK(mb["inputs"] == manifest["inputs"]);
  CHECK(mb["notes"] == manifest["notes"]);
  CHECK(mb["outputs"][(dir / "b.txt").string()] == manifest["outputs"][(dir / "a.txt").string()]);
}

TEST_CASE("config file values with flag overrides") {
  const auto dir = testing::scratch_dir("cli_config");
  write_doc_entries(dir / "docs.jsonl");
  put(dir / "cfg.json", R"({"seed": 7, "sample": {"k": 3, "quota": 10}})");
  auto r = run({"--config", (dir / "cfg.json").string(), "sample", "--docs", (dir / "docs.jsonl").string(),
                "--output", (dir / "cfg.txt").string()});
  REQUIRE(r.code == cli::kExitOk);
  auto direct = run({"--seed", "7", "sample", "--docs", (dir / "docs.jsonl").string(), "--k", "3", "--quota", "10",
                     "--output", (dir / "direct.txt").string()});
  REQUIRE(direct.code == cli::kExitOk);
  CHECK(get(dir / "cfg.txt") == get(dir / "direct.txt"));
  auto override_ = run({"--config", (dir / "cfg.json").string(), "sample", "--docs", (dir / "docs.jsonl").string(),
                        "--quota", "5", "--output", (dir / "small.txt").string()});
  REQUIRE(override_.code == cli::kExitOk);
  CHECK(get(dir / "small.txt").size() < get(dir / "cfg.txt").size());
  put(dir / "bad.json", R"({"no_such_key": 1})");
  CHECK(run({"--config", (dir / "bad.json").string(), "sample", "--docs", (dir / "docs.jsonl").string(), "--output",
             (dir / "x.txt").string()})
            .code == cli::kExitValidation);
}

TEST_CASE("ingest, generate, build, train pipeline") {
  const auto dir = testing::scratch_dir("cli_pipeline");
  write_raw_pages(dir / "raw.jsonl");
  REQUIRE(run({"ingest", "--input", (dir / "raw.jsonl").string(), "--output", (dir / "docs.jsonl").string()}).code ==
          cli::kExitOk);
  auto docs = io::read_jsonl_file((dir / "docs.jsonl").string());
  REQUIRE(docs.size() == 2);
  CHECK(docs[0]["pages"].size() == 3);

  put(dir / "personas.jsonl",
      R"({"id":"p1","name":"Ana","age":41,"gender":"female","major_background":"Law","previous_experience":"Clerk","hobbies":"Chess"})"
      "\n");
  put(dir / "mock.jsonl",
      R"({"role":"question_gen","prompt_hash":"*","reply":"What is on page two?"})"
      "\n"
      R"({"role":"answer_gen","prompt_hash":"*","reply":{"answerable":true,"answer":"Line text","page":2}})"
      "\n"
      R"({"role":"decomposer","prompt_hash":"*","reply":{"turns":[{"question":"a?","answer":"b"},{"question":"c?","answer":"d","page":3}]}})"
      "\n");
  auto gen = [&](const std::string& out) {
    return run({"--seed", "3", "--workers", "2", "gen-qa", "--docs", (dir / "docs.jsonl").string(), "--personas",
                (dir / "personas.jsonl").string(), "--mock", (dir / "mock.jsonl").string(), "--n-qa", "2",
                "--max-attempts", "3", "--output", (dir / out).string()});
  };
  REQUIRE(gen("qa1.jsonl").code == cli::kExitOk);
  REQUIRE(gen("qa2.jsonl").code == cli::kExitOk);
  CHECK(get(dir / "qa1.jsonl") == get(dir / "qa2.jsonl"));
  CHECK(io::read_jsonl_file((dir / "qa1.jsonl").string()).size() == 4);
  CHECK(fs::exists(dir / "qa1.jsonl.stats.jsonl"));

  REQUIRE(run({"build-train", "--docs", (dir / "docs.jsonl").string(), "--dialogues", (dir / "qa1.jsonl").string(),
               "--window", "fixed:1", "--budget", "100", "--reiteration", "--mix-ratio", "0.5", "--output",
               (dir / "train.jsonl").string()})
              .code == cli::kExitOk);
  auto train = io::read_jsonl_file((dir / "train.jsonl").string());
  CHECK(train.size() == 16);  // 8 turns, each as QA and reiteration
  CHECK(run({"build-train", "--docs", (dir / "docs.jsonl").string(), "--dialogues", (dir / "qa1.jsonl").string(),
             "--window", "wide", "--output", (dir / "bad.jsonl").string()})
            .code == cli::kExitValidation);

  REQUIRE(run({"train-finder", "--docs", (dir / "docs.jsonl").string(), "--dialogues", (dir / "qa1.jsonl").string(),
               "--batch-size", "4", "--epochs", "2", "--lr", "0.01", "--feature-dim", "512", "--embed-dim", "16",
               "--output", (dir / "enc.bin").string()})
              .code == cli::kExitOk);
  CHECK(fs::exists(dir / "enc.bin"));
  CHECK(get(dir / "enc.bin.loss.csv").rfind("epoch,mean_loss", 0) == 0);
  CHECK(run({"train-finder", "--docs", (dir / "docs.jsonl").string(), "--dialogues", (dir / "qa1.jsonl").string(),
             "--batch-size", "1", "--output", (dir / "enc2.bin").string()})
            .code == cli::kExitValidation);
}

TEST_CASE("installed binary exit codes") {
  const std::string bin = PGQA_CLI_PATH;
  CHECK(std::system((bin + " --help > /dev/null").c_str()) == 0);
  const int rc = std::system((bin + " nonsense > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(rc) == 1);
}
