#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tabval/table.hpp"

namespace tabval {

struct HttpBackend {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model_name;
  std::string auth_env_var = "TABVAL_API_KEY";
};

struct ScriptedBackend {
  std::filesystem::path script_path;
};

/// Handle to one version of a completion model. generation 0 is the vanilla
/// model ("V0"); each fine-tune registration yields generation + 1.
struct ModelRef {
  std::string id;
  std::variant<HttpBackend, ScriptedBackend> backend;
  int generation = 0;

  std::string version_name() const { return "V" + std::to_string(generation); }
};

/// Parses `scripted:<path>` or `http:<url>#<model-name>`. Throws ConfigError.
ModelRef parse_model_spec(std::string_view spec);
std::string model_spec(const ModelRef& m);
nlohmann::json model_to_json(const ModelRef& m);

struct DecodeOptions {
  double temperature = 0.0;
  int max_tokens = 1024;
  std::optional<std::uint64_t> seed;
};

/// Structured description of what a prompt is about. The scripted backend
/// keys its answers on it; HTTP backends ignore it.
struct PromptMeta {
  std::string task_key;
  std::vector<Table> tables;
  std::string context_digest;
};

struct ChatPrompt {
  std::string system;
  std::string user;
  DecodeOptions decode;
  PromptMeta meta;
};

struct Fingerprint {
  std::string task_key;
  std::string table_names;  // comma separated
  std::string exact;        // digest of the rendered prompt
  std::string invariant;    // digest invariant to row/column permutation

  /// "<task_key>|<table_names>|<digest>" with the digest for key_mode.
  std::string key(bool permutation_invariant) const;
};

Fingerprint fingerprint(const ChatPrompt& p);

/// Deterministic test double. File format (JSON):
///
///   {
///     "key_mode": "permutation_invariant" | "exact",
///     "entries": [
///       {"match": "<glob over fingerprint key>",
///        "key_mode": "...",            // optional per-entry override
///        "contains_cell": "<value>",   // optional: some table cell equals it
///        "contains_text": "<substr>",  // optional: user prompt contains it
///        "answer": "<text>" | "answers": ["<text>", ...]},
///       ...
///     ],
///     "default": "<text>"               // optional
///   }
///
/// The first matching entry wins. With "answers", the answer is picked by a
/// hash of the exact fingerprint, which makes the entry permutation
/// sensitive. Glob supports `*` and `?`.
class ScriptedModel {
 public:
  static ScriptedModel load(const std::filesystem::path& path);
  static ScriptedModel from_json(const nlohmann::json& j);

  /// Throws ScriptMissError when nothing matches and there is no default.
  std::string answer(const ChatPrompt& p) const;

 private:
  struct Entry {
    std::string pattern;
    bool invariant = true;
    std::optional<std::string> contains_cell;
    std::optional<std::string> contains_text;
    std::vector<std::string> answers;
  };
  std::vector<Entry> entries_;
  std::optional<std::string> default_;
};

bool glob_match(std::string_view pattern, std::string_view text);

struct CallRecord {
  std::string model_id;
  std::string prompt_digest;
  double latency_ms = 0.0;
  std::string outcome;  // "ok", "transport_error", "script_miss"
};

struct Hyperparameters {
  double lr_multiplier = 0.5;
  double batch_fraction = 0.01;  // batch size = max(1, round(fraction * lines))
  int epochs = 3;
};

struct FineTunePending {};
struct FineTuneRunning {};
struct FineTuneSucceeded {
  ModelRef new_model;
};
struct FineTuneFailed {
  std::string reason;
};
using FineTuneStatus =
    std::variant<FineTunePending, FineTuneRunning, FineTuneSucceeded, FineTuneFailed>;

struct FineTuneJob {
  ModelRef base;
  std::filesystem::path training_file;
  Hyperparameters hyperparameters;
  /// Generation the resulting model is registered as.
  int target_generation = 1;
  FineTuneStatus status = FineTunePending{};
  std::string job_id;
};

struct FineTuneOptions {
  bool export_only = false;
  /// Scripted backends: generation -> script used by the fine-tuned model.
  std::map<int, std::filesystem::path> generation_scripts;
  std::chrono::milliseconds poll_interval{2000};
  std::chrono::milliseconds poll_timeout{std::chrono::hours(6)};
};

struct ClientOptions {
  int max_attempts = 3;
  std::chrono::milliseconds backoff{500};  // doubled after each failed attempt
  std::chrono::milliseconds http_timeout{60000};
  int max_in_flight = 8;
};

/// Uniform front end over HTTP and scripted backends. Thread safe.
class ModelClient {
 public:
  explicit ModelClient(ClientOptions opts = {});

  /// Raw completion text. Throws TransportError after the retry budget is
  /// spent and ScriptMissError on a scripted miss.
  std::string complete(const ModelRef& m, const ChatPrompt& p);

  /// Throws EmptyTrainingSet when the training file is missing or empty.
  FineTuneJob submit_finetune(FineTuneJob job, const FineTuneOptions& opts = {});

  std::vector<CallRecord> call_log() const;
  std::size_t call_count() const;

 private:
  std::string complete_http(const HttpBackend& b, const ChatPrompt& p);
  const ScriptedModel& script(const std::filesystem::path& path);
  void log(CallRecord r);

  ClientOptions opts_;
  std::counting_semaphore<1024> in_flight_;
  mutable std::mutex mu_;
  std::vector<CallRecord> log_;
  std::map<std::filesystem::path, std::shared_ptr<const ScriptedModel>> scripts_;
};

/// Batch size for a training file of `lines` examples.
int batch_size_for(const Hyperparameters& h, std::size_t lines);

/// Request body for the fine-tune endpoint; hyperparameters echoed verbatim.
nlohmann::json finetune_request_body(const FineTuneJob& job, std::size_t lines);

/// Request body for the chat endpoint.
nlohmann::json chat_request_body(const std::string& model, const ChatPrompt& p);

}  // namespace tabval
