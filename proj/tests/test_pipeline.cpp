#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <fstream>
#include <set>

#include <json.hpp>

#include "support/testing.hpp"
#include "tabval/errors.hpp"
#include "tabval/pipeline.hpp"

using namespace tabval;
using nlohmann::json;

namespace {

PipelineConfig error_detection_config(const std::filesystem::path& out, const std::string& script,
                                      int iterations = 2, int step = 20) {
  PipelineConfig cfg;
  cfg.task = {TaskFamily::ErrorDetection, Facet::Generative, ""};
  cfg.iterations = iterations;
  cfg.step_size = step;
  cfg.corpus_dir = testing::fixture("corpus");
  cfg.out_dir = out;
  cfg.root_seed = 7;
  cfg.base_model = ModelRef{"base", ScriptedBackend{testing::fixture("scripts/" + script)}, 0};
  return cfg;
}

std::vector<json> read_jsonl(const std::filesystem::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

json planted() { return json::parse(testing::read_file(testing::fixture("scripts/planted.json"))); }

std::string assistant(const json& line) { return line["messages"][2]["content"]; }

}  // namespace

TEST_CASE("corpus loading") {
  std::vector<std::string> skipped;
  const auto corpus = load_corpus(testing::fixture("corpus"), &skipped);
  CHECK(corpus.size() == 10);
  CHECK(skipped.empty());
  CHECK(corpus.front().name() == "car_makers");
  CHECK(std::is_sorted(corpus.begin(), corpus.end(),
                       [](const Table& a, const Table& b) { return a.name() < b.name(); }));
  CHECK(corpus_digest(corpus) == corpus_digest(load_corpus(testing::fixture("corpus"))));

  testing::TempDir dir;
  testing::write_file(dir / "b.csv", "x,y\n1,2\n");
  testing::write_file(dir / "a.csv", "only,header\n");
  testing::write_file(dir / "notes.txt", "ignored");
  const auto some = load_corpus(dir.path(), &skipped);
  REQUIRE(some.size() == 1);
  CHECK(some[0].name() == "b");
  CHECK(skipped == std::vector<std::string>{"a.csv"});

  testing::TempDir empty;
  CHECK_THROWS_AS(load_corpus(empty.path()), CorpusError);
  CHECK_THROWS_AS(load_corpus(empty / "missing"), CorpusError);
}

TEST_CASE("config bounds") {
  testing::TempDir dir;
  const PipelineConfig good = error_detection_config(dir.path(), "oracle.json");
  CHECK_NOTHROW(check_config(good));
  auto bad = good;
  bad.iterations = 0;
  CHECK_THROWS_AS(check_config(bad), ConfigError);
  bad = good;
  bad.step_size = 0;
  CHECK_THROWS_AS(check_config(bad), ConfigError);
  bad = good;
  bad.negatives_ratio = -1;
  CHECK_THROWS_AS(check_config(bad), ConfigError);
  bad = good;
  bad.validation.sample_fraction = 0;
  CHECK_THROWS_AS(check_config(bad), ConfigError);
  bad = good;
  bad.task = {TaskFamily::NlToCode, Facet::Generative, "sql-subset"};
  bad.validation.mode = ValidationMode::Execution;
  bad.second_language = "sql-subset";
  CHECK_THROWS_AS(check_config(bad), ConfigError);
  bad.task.language = "fortran";
  CHECK_THROWS_AS(check_config(bad), ConfigError);

  const json echo = config_to_json(good);
  CHECK(echo["step_size"] == 20);
  CHECK(echo["root_seed"] == 7);
  CHECK_FALSE(echo.contains("out_dir"));
}

TEST_CASE("oracle run: every admitted example is planted ground truth") {
  testing::TempDir dir;
  const PipelineConfig cfg = error_detection_config(dir.path(), "oracle.json");
  ModelClient client;
  const ExecutorRegistry reg;
  RunContext ctx{client, reg, nullptr};
  const PipelineResult res = run_pipeline(cfg, ctx);
  REQUIRE(res.reports.size() == 2);
  const json truth = planted();

  for (int i = 1; i <= 2; ++i) {
    const auto& rep = res.reports[i - 1];
    CHECK(rep.iteration == i);
    CHECK(rep.candidates == 20);
    CHECK(rep.validated == 20);
    CHECK(rep.negatives_attempted == 20);
    CHECK(rep.negatives_validated == 20);
    const auto g = read_jsonl(dir / ("iter_" + std::to_string(i) + "/train_g.jsonl"));
    const auto c = read_jsonl(dir / ("iter_" + std::to_string(i) + "/train_c.jsonl"));
    CHECK(g.size() == rep.validated);
    CHECK(c.size() == rep.validated + rep.negatives_validated);
    CHECK(g.size() == rep.train_g_size);
    CHECK(c.size() == rep.train_c_size);
    for (const auto& line : g) {
      const auto& typos = truth.at(line["meta"]["table"].get<std::string>()).at("typos");
      const auto value = json::parse(assistant(line)).at(0).get<std::string>();
      CHECK(std::find(typos.begin(), typos.end(), value) != typos.end());
      CHECK(line["meta"].contains("outcome_digest"));
      CHECK(line["messages"][0]["role"] == "system");
      CHECK(line["messages"][1]["role"] == "user");
      CHECK(line["messages"][2]["role"] == "assistant");
    }
    std::size_t negatives = 0;
    for (const auto& line : c) {
      if (line["meta"]["role"] == "negative") {
        ++negatives;
        CHECK(assistant(line) == "[]");
      }
    }
    CHECK(negatives == rep.negatives_validated);
  }

  // Each fine-tune starts from the vanilla model.
  CHECK(res.final_m_g.generation == 2);
  CHECK(res.final_m_g.id == "base-V2");
  CHECK(res.final_m_c.id == "base-V2");
  CHECK(res.reports[0].m_g.id == "base-V1");
  for (const auto& rep : res.reports) {
    REQUIRE(rep.finetunes.size() == 2);
    CHECK(rep.finetunes[0].role == "generator");
    CHECK(rep.finetunes[1].role == "validator");
    CHECK(rep.finetunes[0].status == "succeeded");
  }

  const json report = json::parse(testing::read_file(dir / "report.json"));
  CHECK(report["iterations"].size() == 2);
  CHECK(report["interrupted"] == false);
  CHECK(report["config"]["step_size"] == 20);
  CHECK(report["corpus_tables"].size() == 10);
}

TEST_CASE("admission soundness: every exported line re-validates") {
  testing::TempDir dir;
  const PipelineConfig cfg = error_detection_config(dir.path(), "oracle.json", 1, 15);
  ModelClient client;
  const ExecutorRegistry reg;
  RunContext ctx{client, reg, nullptr};
  run_pipeline(cfg, ctx);
  std::size_t n = 0;
  for (const char* file : {"iter_1/train_g.jsonl", "iter_1/train_c.jsonl"})
    for (const auto& line : read_jsonl(dir / file)) {
      const auto out = revalidate(line["meta"], client, cfg.base_model, reg);
      CHECK(out.validated);
      CHECK(outcome_digest(out) == line["meta"]["outcome_digest"].get<std::string>());
      ++n;
    }
  CHECK(n == 45);
}

TEST_CASE("reproducibility: same seed, same bytes") {
  testing::TempDir a, b, c;
  ModelClient client;
  const ExecutorRegistry reg;
  RunContext ctx{client, reg, nullptr};
  run_pipeline(error_detection_config(a.path(), "oracle.json"), ctx);
  run_pipeline(error_detection_config(b.path(), "oracle.json"), ctx);
  auto other = error_detection_config(c.path(), "oracle.json");
  other.root_seed = 8;
  run_pipeline(other, ctx);
  for (const char* f : {"iter_1/train_g.jsonl", "iter_1/train_c.jsonl", "iter_2/train_g.jsonl",
                        "iter_2/train_c.jsonl", "report.json"}) {
    CHECK_MESSAGE(testing::read_file(a / f) == testing::read_file(b / f), f);
  }
  CHECK(testing::read_file(a / "iter_1/train_g.jsonl") != testing::read_file(c / "iter_1/train_g.jsonl"));
}

TEST_CASE("adversarial run: permutation validation filters every decoy") {
  const json truth = planted();
  const auto decoys_in = [&](const std::filesystem::path& file) {
    std::size_t n = 0;
    for (const auto& line : read_jsonl(file)) {
      const auto& d = truth.at(line["meta"]["table"].get<std::string>()).at("decoys");
      const auto v = json::parse(assistant(line));
      if (v.size() == 1 && std::find(d.begin(), d.end(), v[0]) != d.end()) ++n;
    }
    return n;
  };
  ModelClient client;
  const ExecutorRegistry reg;
  RunContext ctx{client, reg, nullptr};

  testing::TempDir guarded;
  auto cfg = error_detection_config(guarded.path(), "adversarial.json", 2, 50);
  const auto res = run_pipeline(cfg, ctx);
  std::size_t rejected = 0;
  for (int i = 1; i <= 2; ++i) {
    CHECK(decoys_in(guarded / ("iter_" + std::to_string(i) + "/train_g.jsonl")) == 0);
    CHECK(decoys_in(guarded / ("iter_" + std::to_string(i) + "/train_c.jsonl")) == 0);
    for (const auto& [reason, count] : res.reports[i - 1].rejected_by_reason) rejected += count;
  }
  CHECK(rejected > 0);

  testing::TempDir open;
  cfg = error_detection_config(open.path(), "adversarial.json", 2, 50);
  cfg.flags.no_permutation = true;
  run_pipeline(cfg, ctx);
  std::size_t admitted = 0;
  for (int i = 1; i <= 2; ++i) admitted += decoys_in(open / ("iter_" + std::to_string(i) + "/train_g.jsonl"));
  CHECK(admitted >= 1);
}

TEST_CASE("export-only and skipped fine-tunes") {
  testing::TempDir dir;
  auto cfg = error_detection_config(dir.path(), "oracle.json", 1, 5);
  cfg.flags.export_only = true;
  ModelClient client;
  const ExecutorRegistry reg;
  RunContext ctx{client, reg, nullptr};
  const auto res = run_pipeline(cfg, ctx);
  CHECK(res.final_m_g.generation == 0);
  CHECK(res.reports[0].finetunes[0].status == "export_only");

  testing::TempDir dir2;
  cfg = error_detection_config(dir2.path(), "oracle.json", 1, 5);
  cfg.flags.no_generator_finetune = true;
  const auto res2 = run_pipeline(cfg, ctx);
  CHECK(res2.final_m_g.generation == 0);
  CHECK(res2.final_m_c.generation == 1);
  CHECK(res2.reports[0].finetunes[0].status == "skipped");
}

TEST_CASE("interruption finalizes the report") {
  testing::TempDir dir;
  std::atomic<bool> cancel{true};
  ModelClient client;
  const ExecutorRegistry reg;
  RunContext ctx{client, reg, &cancel};
  const auto res = run_pipeline(error_detection_config(dir.path(), "oracle.json"), ctx);
  CHECK(res.interrupted);
  CHECK(res.reports.size() == 1);
  CHECK(res.reports[0].finetunes.empty());
  CHECK(json::parse(testing::read_file(dir / "report.json"))["interrupted"] == true);
}

TEST_CASE("export format") {
  testing::TempDir dir;
  TrainingSet ts;
  TaskInstance t;
  t.system = "sys";
  t.instruction = "user";
  ts.push_back({t, ErrorSet{{"Ohiio"}}, json{{"k", 1}}});
  CHECK(export_training_jsonl(ts, dir / "nested/out.jsonl") == 1);
  CHECK(testing::read_file(dir / "nested/out.jsonl") ==
        "{\"messages\":[{\"role\":\"system\",\"content\":\"sys\"},{\"role\":\"user\",\"content\":\"user\"},"
        "{\"role\":\"assistant\",\"content\":\"[\\\"Ohiio\\\"]\"}],\"meta\":{\"k\":1}}\n");
  export_training_jsonl(ts, dir / "bare.jsonl", true);
  CHECK_FALSE(json::parse(testing::read_file(dir / "bare.jsonl")).contains("meta"));
  export_training_jsonl({}, dir / "empty.jsonl");
  CHECK(testing::read_file(dir / "empty.jsonl").empty());
}

TEST_CASE("execution-validated code pipeline") {
  testing::TempDir dir;
  const json script = {
      {"entries",
       {{{"match", "nl_to_code.brainstorm*"}, {"answer", "Question: How many rows are there?"}},
        {{"match", "nl_to_code.generative.sql-subset|*"}, {"answer", "```sql\nSELECT COUNT(*) FROM t\n```"}},
        {{"match", "nl_to_code.generative.table-dsl|*"}, {"answer", "```\ncount()\n```"}}}}};
  testing::write_file(dir / "code.json", script.dump());
  PipelineConfig cfg;
  cfg.task = {TaskFamily::NlToCode, Facet::Generative, "sql-subset"};
  cfg.iterations = 1;
  cfg.step_size = 12;
  cfg.validation.mode = ValidationMode::Execution;
  cfg.corpus_dir = testing::fixture("corpus");
  cfg.out_dir = dir / "out";
  cfg.root_seed = 3;
  cfg.base_model = ModelRef{"base", ScriptedBackend{dir / "code.json"}, 0};
  cfg.finetune.export_only = true;
  ModelClient client;
  const ExecutorRegistry reg;
  RunContext ctx{client, reg, nullptr};
  const auto res = run_pipeline(cfg, ctx);
  const auto& rep = res.reports[0];
  CHECK(rep.candidates == 12);
  const auto dup = rep.rejected_by_reason.count("Duplicate") ? rep.rejected_by_reason.at("Duplicate") : 0;
  // One question per table, so repeats are the only rejections.
  CHECK(rep.validated + dup == 12);
  CHECK(rep.validated <= 10);
  CHECK(rep.validated >= 2);
  CHECK(rep.negatives_attempted == 0);
  const auto g = read_jsonl(dir / "out/iter_1/train_g.jsonl");
  const auto g2 = read_jsonl(dir / "out/iter_1/train_g_table-dsl.jsonl");
  const auto c = read_jsonl(dir / "out/iter_1/train_c.jsonl");
  CHECK(g.size() == rep.validated);
  CHECK(g2.size() == rep.validated);
  CHECK(c.size() == rep.validated);
  CHECK(assistant(g2.front()).find("count()") != std::string::npos);
  CHECK(assistant(c.front()).rfind("yes", 0) == 0);
  for (const auto& line : g) CHECK(revalidate(line["meta"], client, cfg.base_model, reg).validated);
}
