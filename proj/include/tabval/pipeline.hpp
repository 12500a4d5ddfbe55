#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabval/executors.hpp"
#include "tabval/model_client.hpp"
#include "tabval/tasks.hpp"
#include "tabval/validators.hpp"

namespace tabval {

struct ModeFlags {
  bool no_permutation = false;
  bool no_execution_validation = false;
  bool no_generator_finetune = false;
  bool export_only = false;
};

struct PipelineConfig {
  TaskKind task;  // generative facet; language set for code families
  /// Second language for execution validation (code families only).
  std::string second_language = "table-dsl";
  int iterations = 3;
  int step_size = 3000;
  ValidationConfig validation;
  std::filesystem::path corpus_dir;
  std::filesystem::path out_dir;
  std::uint64_t root_seed = 0;
  ModelRef base_model;
  /// Generator for the second language; the vanilla base model when unset.
  std::optional<ModelRef> second_model;
  /// Fine-tune the second-language generator alongside M_G.
  bool lockstep = false;
  double negatives_ratio = 1.0;
  ModeFlags flags;
  Hyperparameters hyperparameters;
  FineTuneOptions finetune;
  TemplateSet templates = TemplateSet::defaults();
};

/// Throws ConfigError on a violated bound.
void check_config(const PipelineConfig& cfg);
nlohmann::json config_to_json(const PipelineConfig& cfg);

struct TrainingExample {
  TaskInstance task;
  Completion completion;
  nlohmann::json provenance;
};

using TrainingSet = std::vector<TrainingExample>;

enum class CandidateResult {
  Validated,
  ParseFailure,
  ValidationFailed,
  TransportAbort,
  CandidateSkipped,
  Duplicate
};
std::string result_name(CandidateResult r);

struct FineTuneRecord {
  std::string role;  // "generator", "validator", "generator_<lang>"
  std::string status;  // "succeeded", "failed", "skipped", "export_only"
  std::string detail;
};

struct IterationReport {
  int iteration = 0;  // 1-based
  std::size_t candidates = 0;
  std::size_t validated = 0;
  std::map<std::string, std::size_t> rejected_by_reason;
  std::size_t negatives_attempted = 0;
  std::size_t negatives_validated = 0;
  std::size_t train_g_size = 0;
  std::size_t train_c_size = 0;
  std::size_t train_g_second_size = 0;
  ModelRef m_g;
  ModelRef m_c;
  std::optional<ModelRef> m_g_second;
  std::vector<FineTuneRecord> finetunes;
  std::vector<std::string> warnings;
  bool interrupted = false;
};

nlohmann::json report_to_json(const IterationReport& r);

struct IterationOutput {
  IterationReport report;
  TrainingSet train_g;
  TrainingSet train_c;
  TrainingSet train_g_second;  // execution mode only
};

/// Tables of every *.csv file in dir, sorted by file name; the file stem is
/// the table name. Unreadable files are skipped and named in `skipped`.
/// Throws CorpusError when nothing usable remains.
std::vector<Table> load_corpus(const std::filesystem::path& dir,
                               std::vector<std::string>* skipped = nullptr);

/// Digest over table names and exact contents.
std::string corpus_digest(const std::vector<Table>& corpus);

struct RunContext {
  ModelClient& client;
  const ExecutorRegistry& registry;
  const std::atomic<bool>* cancel = nullptr;
};

/// One pass of candidate generation and validation; no export, no fine-tune.
/// Models in `report` are left as given.
IterationOutput run_iteration(const PipelineConfig& cfg, const std::vector<Table>& corpus,
                              const ModelRef& m_g, const ModelRef& m_c,
                              const ModelRef& m_g_second, int iteration, RunContext& ctx);

/// Writes one chat-format JSON object per line; returns the line count.
/// Creates parent directories. With strip_meta the provenance is omitted.
std::size_t export_training_jsonl(const TrainingSet& ts, const std::filesystem::path& path,
                                  bool strip_meta = false);

struct PipelineResult {
  std::vector<IterationReport> reports;
  ModelRef final_m_g;
  ModelRef final_m_c;
  bool interrupted = false;
};

/// The full loop: k iterations of run_iteration, export to
/// out_dir/iter_<i>/, fine-tune, and a report.json in out_dir.
PipelineResult run_pipeline(const PipelineConfig& cfg, RunContext& ctx);

/// Re-runs the validation recorded in one exported line's provenance.
ValidationOutcome revalidate(const nlohmann::json& provenance, ModelClient& client,
                             const ModelRef& m_c, const ExecutorRegistry& registry,
                             const TemplateSet& templates = TemplateSet::defaults());

}  // namespace tabval
