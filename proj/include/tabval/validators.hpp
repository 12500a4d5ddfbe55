#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabval/executors.hpp"
#include "tabval/model_client.hpp"
#include "tabval/tasks.hpp"

namespace tabval {

enum class ValidationMode { Permutation, Execution, ModelBasedForCode };

struct ValidationConfig {
  int n_rounds = 5;
  std::uint64_t seed = 0;
  ValidationMode mode = ValidationMode::Permutation;
  double sample_fraction = 0.5;
  bool include_full_table_first = true;
  /// Off only for the no-permutation ablation: the verifier is asked N times
  /// about the unpermuted table.
  bool permute_tables = true;
};

std::string mode_name(ValidationMode m);
ValidationMode parse_mode(std::string_view s);  // throws ConfigError

enum class RejectReason { None, Mismatch, ParseFailure, ExecutionError, TransportAbort };
std::string reason_name(RejectReason r);

struct RoundRecord {
  int round = 0;  // 1-based
  /// Permutation mode: one entry per table. Execution mode: empty.
  std::vector<Permutation> permutations;
  /// Execution mode: digest of R_S and its row count.
  std::string sample_digest;
  std::size_t sample_rows = 0;
  std::string observed;  // completion or first result, rendered
  std::string expected;  // c, or the second result
  bool agreed = false;
};

struct ValidationOutcome {
  bool validated = false;
  int rounds_run = 0;
  std::optional<int> failure_round;
  RejectReason reason = RejectReason::None;
  std::vector<RoundRecord> detail;
};

nlohmann::json outcome_to_json(const ValidationOutcome& o);
/// Digest of the JSON form; stored in training-example provenance.
std::string outcome_digest(const ValidationOutcome& o);

/// Permutation-invariance check. Each round permutes every table of t_c
/// (rows and columns), asks m_c again, and compares the answer with c.
ValidationOutcome validate_classification(ModelClient& client, const ModelRef& m_c,
                                          const TaskInstance& t_c, const Completion& c,
                                          const ValidationConfig& cfg,
                                          const TemplateSet& templates = TemplateSet::defaults());

/// Code duals checked by the verifier model through the permutation path.
ValidationOutcome validate_code_model_based(ModelClient& client, const ModelRef& m_c,
                                            const TaskInstance& t_c, const Completion& c,
                                            const ValidationConfig& cfg,
                                            const TemplateSet& templates = TemplateSet::defaults());

struct ExecutionValidation {
  ValidationOutcome outcome;
  std::optional<Code> c_l;
  std::optional<Code> c_lprime;
};

/// Asks m_l for t_g in its own language and m_lprime for t_g retargeted to
/// `lprime`, then runs check_execution_invariance on the pair. A completion
/// that fails to parse rejects with ParseFailure at round 0.
ExecutionValidation validate_generative_execution(ModelClient& client, const ModelRef& m_l,
                                                  const ModelRef& m_lprime,
                                                  const TaskInstance& t_g,
                                                  const std::string& lprime,
                                                  const ValidationConfig& cfg,
                                                  const ExecutorRegistry& registry,
                                                  const TemplateSet& templates = TemplateSet::defaults());

/// Rounds of the execution check over an already generated pair. Round 1 is
/// the full table when include_full_table_first; other rounds sample
/// max(1, round(sample_fraction * rows)) rows. Throws RegistryError.
ValidationOutcome check_execution_invariance(const Code& c_l, const Code& c_lprime,
                                             const Table& r, const ValidationConfig& cfg,
                                             const ExecutorRegistry& registry);

/// Sample size used by the execution check.
std::size_t execution_sample_size(std::size_t rows, double fraction);

}  // namespace tabval
