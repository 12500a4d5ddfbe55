#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabval/executors.hpp"
#include "tabval/model_client.hpp"
#include "tabval/tasks.hpp"

namespace tabval {

/// One benchmark line. Code cases carry gold result values (and optionally a
/// gold program); classification cases carry gold sets.
struct BenchmarkCase {
  std::string id;
  TaskKind kind;
  std::vector<Table> tables;
  TaskContext context;
  std::optional<Table> gold_result;
  std::optional<Code> gold_code;
  std::set<std::string> gold_errors;
  std::set<ColumnPair> gold_mappings;
};

/// Throws CorpusError with the line number on malformed input.
std::vector<BenchmarkCase> load_benchmark(const std::filesystem::path& path);
BenchmarkCase case_from_json(const nlohmann::json& j);
nlohmann::json case_to_json(const BenchmarkCase& c);

/// The prompt-bearing instance the model is asked to solve.
TaskInstance case_task(const BenchmarkCase& c, const TemplateSet& templates = TemplateSet::defaults());

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Empty prediction has precision 1; empty gold has recall 1; F1 is 0 when
/// precision + recall is 0.
Scores precision_recall_f1(std::size_t true_positive, std::size_t predicted_size,
                           std::size_t gold_size);

template <typename T>
Scores precision_recall_f1(const std::set<T>& predicted, const std::set<T>& gold) {
  std::size_t tp = 0;
  for (const auto& p : predicted) tp += gold.count(p);
  return precision_recall_f1(tp, predicted.size(), gold.size());
}

struct CaseRecord {
  std::string id;
  std::string predicted;
  bool matched = false;
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  std::string metric;  // "execution_accuracy" or "f1"
  std::string model;
  std::vector<CaseRecord> records;
  double execution_accuracy = 0.0;
  Scores scores;
};

nlohmann::json eval_report_to_json(const EvalReport& r);

/// Accuracy of the pooled records; micro-averaged scores of the pooled counts.
double accuracy_from_records(const std::vector<CaseRecord>& records);
Scores micro_scores_from_records(const std::vector<CaseRecord>& records);

EvalReport evaluate_execution_accuracy(ModelClient& client, const ModelRef& m,
                                       const std::vector<BenchmarkCase>& cases,
                                       const ExecutorRegistry& registry,
                                       const TemplateSet& templates = TemplateSet::defaults());

EvalReport evaluate_classification(ModelClient& client, const ModelRef& m,
                                   const std::vector<BenchmarkCase>& cases,
                                   const TemplateSet& templates = TemplateSet::defaults());

/// Dispatches on the first case's kind.
EvalReport evaluate(ModelClient& client, const ModelRef& m, const std::vector<BenchmarkCase>& cases,
                    const ExecutorRegistry& registry,
                    const TemplateSet& templates = TemplateSet::defaults());

/// Scripted-model file that answers every case with its gold answer (the gold
/// program for code cases). Throws ConfigError for a code case without one.
nlohmann::json gold_echo_script(const std::vector<BenchmarkCase>& cases,
                                const TemplateSet& templates = TemplateSet::defaults());

}  // namespace tabval
