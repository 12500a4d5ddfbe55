#include "tabval/eval.hpp"

#include <fstream>

#include "tabval/errors.hpp"
#include "tabval/rng.hpp"

namespace tabval {

using nlohmann::json;

namespace {

Table column_table(const std::string& name, const json& col) {
  std::vector<Row> rows;
  for (const auto& c : col.at("cells")) {
    if (c.is_null()) rows.push_back({CellValue::null()});
    else if (c.is_string()) rows.push_back({CellValue::parse(c.get<std::string>())});
    else rows.push_back({CellValue::parse(c.dump())});
  }
  return Table(name, {col.at("header").get<std::string>()}, std::move(rows));
}

std::string pair_key(const std::string& id, const ColumnPair& p) {
  return id + "\x1f" + p.first + "\x1f" + p.second;
}

}  // namespace

BenchmarkCase case_from_json(const json& j) {
  BenchmarkCase c;
  c.id = j.at("id").get<std::string>();
  if (j.contains("column")) {
    c.kind = {TaskFamily::ErrorDetection, Facet::Classification, ""};
    c.tables = {column_table(c.id, j.at("column"))};
    for (const auto& e : j.value("gold_errors", json::array()))
      c.gold_errors.insert(e.is_string() ? e.get<std::string>() : e.dump());
  } else if (j.contains("table_a")) {
    c.kind = {TaskFamily::SchemaMatching, Facet::Classification, ""};
    c.tables = {table_from_json(j.at("table_a"), c.id + "_a"),
                table_from_json(j.at("table_b"), c.id + "_b")};
    for (const auto& p : j.value("gold_mappings", json::array()))
      c.gold_mappings.emplace(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  } else {
    const std::string lang = j.at("language").get<std::string>();
    if (j.contains("examples")) {
      c.kind = {TaskFamily::DataTransformByExample, Facet::Generative, lang};
      for (const auto& e : j.at("examples"))
        c.context.examples.push_back({e.at(0).get<std::string>(), e.at(1).get<std::string>()});
    } else {
      c.kind = {TaskFamily::NlToCode, Facet::Generative, lang};
      c.context.question = j.at("question").get<std::string>();
    }
    c.tables = {table_from_json(j.at("table"), c.id)};
    c.gold_result = table_from_json(j.at("gold_result"), "gold");
    if (j.contains("gold_code")) c.gold_code = Code{lang, j.at("gold_code").get<std::string>()};
  }
  return c;
}

json case_to_json(const BenchmarkCase& c) {
  const auto plain = [](const Table& t) {
    json j = table_to_json(t);
    j.erase("name");
    return j;
  };
  json j = {{"id", c.id}};
  switch (c.kind.family) {
    case TaskFamily::ErrorDetection: {
      json cells = json::array();
      for (const auto& row : c.tables.at(0).rows())
        cells.push_back(row[0].is_null() ? json(nullptr) : json(row[0].render()));
      j["column"] = {{"header", c.tables.at(0).headers().at(0)}, {"cells", cells}};
      j["gold_errors"] = c.gold_errors;
      break;
    }
    case TaskFamily::SchemaMatching: {
      j["table_a"] = plain(c.tables.at(0));
      j["table_b"] = plain(c.tables.at(1));
      json pairs = json::array();
      for (const auto& p : c.gold_mappings) pairs.push_back({p.first, p.second});
      j["gold_mappings"] = pairs;
      break;
    }
    default: {
      j["language"] = c.kind.language;
      if (c.context.question) j["question"] = *c.context.question;
      if (!c.context.examples.empty()) {
        json ex = json::array();
        for (const auto& e : c.context.examples) ex.push_back({e.input, e.output});
        j["examples"] = ex;
      }
      j["table"] = plain(c.tables.at(0));
      if (c.gold_result) j["gold_result"] = plain(*c.gold_result);
      if (c.gold_code) j["gold_code"] = c.gold_code->source;
    }
  }
  return j;
}

std::vector<BenchmarkCase> load_benchmark(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read benchmark " + path.string());
  std::vector<BenchmarkCase> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(case_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw CorpusError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

TaskInstance case_task(const BenchmarkCase& c, const TemplateSet& templates) {
  const std::uint64_t seed = fnv1a(c.id);
  if (c.kind.is_code())
    return instantiate_generative(c.kind, c.tables.at(0), seed, c.context, templates);
  TaskInstance t;
  t.kind = c.kind;
  t.tables = c.tables;
  t.seed = seed;
  return render_task(std::move(t), templates);
}

Scores precision_recall_f1(std::size_t tp, std::size_t predicted, std::size_t gold) {
  Scores s;
  s.precision = predicted == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(predicted);
  s.recall = gold == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(gold);
  const double sum = s.precision + s.recall;
  s.f1 = sum == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / sum;
  return s;
}

double accuracy_from_records(const std::vector<CaseRecord>& records) {
  if (records.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& r : records) hit += r.matched ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(records.size());
}

Scores micro_scores_from_records(const std::vector<CaseRecord>& records) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& r : records) {
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
  }
  return precision_recall_f1(tp, tp + fp, tp + fn);
}

json eval_report_to_json(const EvalReport& r) {
  json recs = json::array();
  for (const auto& c : r.records) {
    json j = {{"id", c.id}, {"predicted", c.predicted}, {"matched", c.matched}};
    if (r.metric == "f1") {
      j["tp"] = c.tp;
      j["fp"] = c.fp;
      j["fn"] = c.fn;
    }
    recs.push_back(std::move(j));
  }
  json out = {{"metric", r.metric}, {"model", r.model}, {"cases", r.records.size()},
              {"records", recs}};
  if (r.metric == "f1")
    out["aggregate"] = {{"precision", r.scores.precision},
                        {"recall", r.scores.recall},
                        {"f1", r.scores.f1}};
  else
    out["aggregate"] = {{"execution_accuracy", r.execution_accuracy}};
  return out;
}

EvalReport evaluate_execution_accuracy(ModelClient& client, const ModelRef& m,
                                       const std::vector<BenchmarkCase>& cases,
                                       const ExecutorRegistry& registry,
                                       const TemplateSet& templates) {
  EvalReport rep;
  rep.metric = "execution_accuracy";
  rep.model = model_spec(m);
  for (const auto& c : cases) {
    CaseRecord rec;
    rec.id = c.id;
    try {
      const TaskInstance t = case_task(c, templates);
      rec.predicted = client.complete(m, make_prompt(t, 0.0));
      const Completion got = parse_completion(t.kind, rec.predicted);
      const auto& code = std::get<Code>(got);
      const ExecResult r = execute({code.language, code.source}, c.tables.at(0), registry);
      const ExecResult gold = finish_result(c.gold_result.value(), false, ExecLimits{});
      rec.matched = results_equal(r, gold);
    } catch (const std::exception& e) {
      if (rec.predicted.empty()) rec.predicted = std::string("error: ") + e.what();
      rec.matched = false;
    }
    rep.records.push_back(std::move(rec));
  }
  rep.execution_accuracy = accuracy_from_records(rep.records);
  return rep;
}

EvalReport evaluate_classification(ModelClient& client, const ModelRef& m,
                                   const std::vector<BenchmarkCase>& cases,
                                   const TemplateSet& templates) {
  EvalReport rep;
  rep.metric = "f1";
  rep.model = model_spec(m);
  for (const auto& c : cases) {
    CaseRecord rec;
    rec.id = c.id;
    std::set<std::string> predicted, gold;
    if (c.kind.family == TaskFamily::SchemaMatching)
      for (const auto& p : c.gold_mappings) gold.insert(pair_key(c.id, p));
    else
      for (const auto& v : c.gold_errors) gold.insert(c.id + "\x1f" + v);
    try {
      const TaskInstance t = case_task(c, templates);
      const std::string raw = client.complete(m, make_prompt(t, 0.0));
      const Completion got = parse_completion(t.kind, raw);
      rec.predicted = render_completion(got);
      if (const auto* e = std::get_if<ErrorSet>(&got))
        for (const auto& v : e->values) predicted.insert(c.id + "\x1f" + v);
      else if (const auto* ml = std::get_if<MappingList>(&got))
        for (const auto& p : ml->pairs) predicted.insert(pair_key(c.id, p));
    } catch (const std::exception& e) {
      rec.predicted = std::string("error: ") + e.what();
    }
    for (const auto& p : predicted) rec.tp += gold.count(p);
    rec.fp = predicted.size() - rec.tp;
    rec.fn = gold.size() - rec.tp;
    rec.matched = rec.fp == 0 && rec.fn == 0;
    rep.records.push_back(std::move(rec));
  }
  rep.scores = micro_scores_from_records(rep.records);
  return rep;
}

EvalReport evaluate(ModelClient& client, const ModelRef& m, const std::vector<BenchmarkCase>& cases,
                    const ExecutorRegistry& registry, const TemplateSet& templates) {
  if (!cases.empty() && cases.front().kind.is_code())
    return evaluate_execution_accuracy(client, m, cases, registry, templates);
  return evaluate_classification(client, m, cases, templates);
}

json gold_echo_script(const std::vector<BenchmarkCase>& cases, const TemplateSet& templates) {
  json entries = json::array();
  for (const auto& c : cases) {
    const TaskInstance t = case_task(c, templates);
    std::string answer;
    if (c.kind.is_code()) {
      if (!c.gold_code) throw ConfigError("case " + c.id + " has no gold program");
      answer = render_completion(*c.gold_code);
    } else if (c.kind.family == TaskFamily::SchemaMatching) {
      answer = render_completion(MappingList{c.gold_mappings});
    } else {
      answer = render_completion(ErrorSet{c.gold_errors});
    }
    entries.push_back({{"match", fingerprint(make_prompt(t, 0.0)).key(false)},
                       {"key_mode", "exact"},
                       {"answer", answer}});
  }
  return {{"key_mode", "exact"}, {"entries", entries}};
}

}  // namespace tabval
