#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tabval/model_client.hpp"
#include "tabval/table.hpp"

namespace tabval {

enum class TaskFamily { ErrorDetection, SchemaMatching, NlToCode, DataTransformByExample };
/// Brainstorm is the pre-step prompt that asks for a question or examples
/// before a code task can be instantiated.
enum class Facet { Generative, Classification, Brainstorm };

struct TaskKind {
  TaskFamily family = TaskFamily::ErrorDetection;
  Facet facet = Facet::Generative;
  /// Target language tag for code families; empty otherwise.
  std::string language;

  bool is_code() const {
    return family == TaskFamily::NlToCode ||
           family == TaskFamily::DataTransformByExample;
  }
  TaskKind with_facet(Facet f) const { return {family, f, language}; }
  /// Template key, e.g. "error_detection.generative".
  std::string template_key() const;
  /// Stable id used in prompt fingerprints, e.g. "nl_to_code.generative.sql-subset".
  std::string id() const;

  friend bool operator==(const TaskKind&, const TaskKind&) = default;
};

std::string family_name(TaskFamily f);  // "error-detection", ...
TaskFamily parse_family(std::string_view name);  // throws ConfigError

/// True for the built-in languages and any "external:<name>" tag.
bool is_known_language(std::string_view lang);

// ---- completions -----------------------------------------------------------

using ColumnPair = std::pair<std::string, std::string>;

struct ErrorSet {
  std::set<std::string> values;
};
struct MappingList {
  std::set<ColumnPair> pairs;
};
struct Code {
  std::string language;
  std::string source;
};
struct GeneratedTableWithMappings {
  Table table;
  std::set<ColumnPair> pairs;
};
struct Question {
  std::string text;
};
/// Answer of the code verifier: "yes" plus an echo of the code, or "no".
struct Verdict {
  bool accept = false;
  Code code;
};

using Completion = std::variant<ErrorSet, MappingList, Code,
                                GeneratedTableWithMappings, Question, Verdict>;

/// Canonical text rendering; parse_completion inverts it.
std::string render_completion(const Completion& c);

/// Throws UnparseableCompletion.
Completion parse_completion(const TaskKind& kind, std::string_view raw);

/// Set semantics for ErrorSet/MappingList, exact source for Code, case and
/// whitespace insensitive for Question. Throws VariantMismatch.
bool completions_equal(const Completion& a, const Completion& b);

// ---- templates -------------------------------------------------------------

struct PromptTemplate {
  std::string system;
  std::string user;
};

/// One template per (family, facet) plus the brainstorm prompts. Placeholders
/// are `{{name}}` with name in: table, table_b, column, question, examples,
/// code, language.
class TemplateSet {
 public:
  static const TemplateSet& defaults();
  /// Reads `<key>.txt` files from dir; each file is a system block, a line
  /// containing only `---`, then the user block. Missing keys keep defaults.
  static TemplateSet load_dir(const std::filesystem::path& dir);

  const PromptTemplate& get(const std::string& key) const;
  const std::map<std::string, PromptTemplate>& all() const { return templates_; }
  void set(std::string key, PromptTemplate t);

 private:
  std::map<std::string, PromptTemplate> templates_;
};

/// Substitutes `{{name}}` placeholders; unknown names throw std::invalid_argument.
std::string fill_template(std::string_view text,
                          const std::map<std::string, std::string>& vars);

PromptTemplate parse_template_file(std::string_view text);
std::string format_template_file(const PromptTemplate& t);

// ---- task instances ----------------------------------------------------------

struct ExamplePair {
  std::string input;
  std::string output;
  friend bool operator==(const ExamplePair&, const ExamplePair&) = default;
};

struct TaskContext {
  std::optional<std::string> question;
  std::vector<ExamplePair> examples;
  std::optional<Code> code;  // candidate code shown to the verifier
};

struct TaskInstance {
  TaskKind kind;
  std::string system;
  std::string instruction;  // rendered user message
  std::vector<Table> tables;
  TaskContext context;
  std::optional<Completion> expected;
  std::uint64_t seed = 0;
};

/// Rebuilds system/instruction from the instance's kind, tables and context.
TaskInstance render_task(TaskInstance t,
                         const TemplateSet& templates = TemplateSet::defaults());

/// Same task over different tables (used by the permutation validator).
TaskInstance with_tables(const TaskInstance& t, std::vector<Table> tables,
                         const TemplateSet& templates = TemplateSet::defaults());

/// Same generative code task asking for another target language.
TaskInstance retarget_language(const TaskInstance& t, std::string language,
                               const TemplateSet& templates = TemplateSet::defaults());

/// Prompt asking the model for a question (NL-to-code) or input/output
/// examples (transform-by-example) about r.
TaskInstance instantiate_brainstorm(TaskFamily family, const Table& r,
                                    std::uint64_t seed,
                                    const TemplateSet& templates = TemplateSet::defaults());

/// Throws UnparseableCompletion.
TaskContext parse_brainstorm(TaskFamily family, std::string_view raw);

/// Throws EmptyTable, MissingContext (code kinds without question/examples),
/// UnsupportedKind (unknown language).
TaskInstance instantiate_generative(const TaskKind& kind, const Table& r,
                                    std::uint64_t seed, TaskContext context = {},
                                    const TemplateSet& templates = TemplateSet::defaults());

/// The transform f: builds the classification dual of a generative instance
/// given the generator's completion. Throws VariantMismatch.
TaskInstance apply_dual_transform(const TaskInstance& gen, const Completion& c,
                                  const TemplateSet& templates = TemplateSet::defaults());

struct NegativeInstance {
  TaskInstance task;
  Completion expected;
};

/// Classification instance over untouched data with an empty expected answer.
/// SchemaMatching needs `other`, an unrelated table. Throws UnsupportedKind.
NegativeInstance sample_negative_instance(const TaskKind& kind, const Table& r,
                                          std::uint64_t seed,
                                          const Table* other = nullptr,
                                          const TemplateSet& templates = TemplateSet::defaults());

/// Digest of kind + rendered prompt.
std::string task_digest(const TaskInstance& t);

ChatPrompt make_prompt(const TaskInstance& t, double temperature,
                       std::optional<std::uint64_t> seed = std::nullopt);

// ---- JSON ------------------------------------------------------------------

nlohmann::json table_to_json(const Table& t);
Table table_from_json(const nlohmann::json& j, std::string name = {});
nlohmann::json kind_to_json(const TaskKind& k);
TaskKind kind_from_json(const nlohmann::json& j);
nlohmann::json task_to_json(const TaskInstance& t);
TaskInstance task_from_json(const nlohmann::json& j);

}  // namespace tabval
