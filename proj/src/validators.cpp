#include "tabval/validators.hpp"

#include <cmath>

#include "tabval/errors.hpp"
#include "tabval/rng.hpp"

namespace tabval {

using nlohmann::json;

std::string mode_name(ValidationMode m) {
  switch (m) {
    case ValidationMode::Permutation: return "permutation";
    case ValidationMode::Execution: return "execution";
    case ValidationMode::ModelBasedForCode: return "model-based";
  }
  return "?";
}

ValidationMode parse_mode(std::string_view s) {
  if (s == "permutation") return ValidationMode::Permutation;
  if (s == "execution") return ValidationMode::Execution;
  if (s == "model-based") return ValidationMode::ModelBasedForCode;
  throw ConfigError("unknown validation mode '" + std::string(s) + "'");
}

std::string reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::None: return "none";
    case RejectReason::Mismatch: return "mismatch";
    case RejectReason::ParseFailure: return "parse_failure";
    case RejectReason::ExecutionError: return "execution_error";
    case RejectReason::TransportAbort: return "transport_abort";
  }
  return "?";
}

json outcome_to_json(const ValidationOutcome& o) {
  json rounds = json::array();
  for (const auto& r : o.detail) {
    json j = {{"round", r.round}, {"agreed", r.agreed}, {"observed", r.observed},
              {"expected", r.expected}};
    if (!r.permutations.empty()) {
      json perms = json::array();
      for (const auto& p : r.permutations)
        perms.push_back({{"seed", p.seed}, {"rows", p.row_order}, {"cols", p.col_order}});
      j["permutations"] = std::move(perms);
    }
    if (!r.sample_digest.empty()) {
      j["sample_digest"] = r.sample_digest;
      j["sample_rows"] = r.sample_rows;
    }
    rounds.push_back(std::move(j));
  }
  json out = {{"validated", o.validated},
              {"rounds_run", o.rounds_run},
              {"reason", reason_name(o.reason)},
              {"rounds", std::move(rounds)}};
  out["failure_round"] = o.failure_round ? json(*o.failure_round) : json(nullptr);
  return out;
}

std::string outcome_digest(const ValidationOutcome& o) {
  return to_hex(fnv1a(outcome_to_json(o).dump()));
}

namespace {

void reject(ValidationOutcome& o, int round, RejectReason why) {
  o.validated = false;
  o.failure_round = round;
  o.reason = why;
}

}  // namespace

ValidationOutcome validate_classification(ModelClient& client, const ModelRef& m_c,
                                          const TaskInstance& t_c, const Completion& c,
                                          const ValidationConfig& cfg,
                                          const TemplateSet& templates) {
  if (cfg.n_rounds < 1) throw ConfigError("n_rounds must be at least 1");
  ValidationOutcome out;
  const std::string want = render_completion(c);
  for (int i = 1; i <= cfg.n_rounds; ++i) {
    RoundRecord rec;
    rec.round = i;
    rec.expected = want;
    std::vector<Table> tables;
    for (std::size_t k = 0; k < t_c.tables.size(); ++k) {
      const Table& t = t_c.tables[k];
      if (cfg.permute_tables) {
        auto p = permute(t, derive_seed(cfg.seed, "perm-round", i, k));
        tables.push_back(std::move(p.table));
        rec.permutations.push_back(std::move(p.permutation));
      } else {
        tables.push_back(t);
      }
    }
    const TaskInstance round_task = with_tables(t_c, std::move(tables), templates);
    ++out.rounds_run;

    std::string raw;
    try {
      raw = client.complete(m_c, make_prompt(round_task, 0.0));
    } catch (const TransportError& e) {
      rec.observed = std::string("transport error: ") + e.what();
      out.detail.push_back(std::move(rec));
      reject(out, i, RejectReason::TransportAbort);
      return out;
    }
    rec.observed = raw;
    try {
      const Completion got = parse_completion(round_task.kind, raw);
      rec.observed = render_completion(got);
      rec.agreed = got.index() == c.index() && completions_equal(got, c);
    } catch (const UnparseableCompletion&) {
      out.detail.push_back(std::move(rec));
      reject(out, i, RejectReason::ParseFailure);
      return out;
    }
    const bool agreed = rec.agreed;
    out.detail.push_back(std::move(rec));
    if (!agreed) {
      reject(out, i, RejectReason::Mismatch);
      return out;
    }
  }
  out.validated = true;
  return out;
}

ValidationOutcome validate_code_model_based(ModelClient& client, const ModelRef& m_c,
                                            const TaskInstance& t_c, const Completion& c,
                                            const ValidationConfig& cfg,
                                            const TemplateSet& templates) {
  return validate_classification(client, m_c, t_c, c, cfg, templates);
}

std::size_t execution_sample_size(std::size_t rows, double fraction) {
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows)));
  return std::max<std::size_t>(1, std::min(k, rows));
}

ValidationOutcome check_execution_invariance(const Code& c_l, const Code& c_lprime,
                                             const Table& r, const ValidationConfig& cfg,
                                             const ExecutorRegistry& registry) {
  if (cfg.n_rounds < 1) throw ConfigError("n_rounds must be at least 1");
  // Unknown languages surface before any round runs.
  registry.get(c_l.language);
  registry.get(c_lprime.language);
  if (r.empty()) throw EmptyTable();

  ValidationOutcome out;
  const std::size_t k = execution_sample_size(r.num_rows(), cfg.sample_fraction);
  for (int i = 1; i <= cfg.n_rounds; ++i) {
    const Table rs = (i == 1 && cfg.include_full_table_first)
                         ? r
                         : sample_rows(r, k, derive_seed(cfg.seed, "exec-round", i));
    RoundRecord rec;
    rec.round = i;
    rec.sample_digest = table_digest(rs);
    rec.sample_rows = rs.num_rows();
    const ExecResult a = execute({c_l.language, c_l.source}, rs, registry);
    const ExecResult b = execute({c_lprime.language, c_lprime.source}, rs, registry);
    rec.observed = describe(a);
    rec.expected = describe(b);
    rec.agreed = results_equal(a, b);
    ++out.rounds_run;
    out.detail.push_back(std::move(rec));
    if (is_error(a) || is_error(b)) {
      reject(out, i, RejectReason::ExecutionError);
      return out;
    }
    if (!out.detail.back().agreed) {
      reject(out, i, RejectReason::Mismatch);
      return out;
    }
  }
  out.validated = true;
  return out;
}

ExecutionValidation validate_generative_execution(ModelClient& client, const ModelRef& m_l,
                                                  const ModelRef& m_lprime,
                                                  const TaskInstance& t_g,
                                                  const std::string& lprime,
                                                  const ValidationConfig& cfg,
                                                  const ExecutorRegistry& registry,
                                                  const TemplateSet& templates) {
  if (!t_g.kind.is_code() || t_g.kind.facet != Facet::Generative)
    throw UnsupportedKind("execution validation needs a generative code task");
  if (t_g.kind.language == lprime)
    throw ConfigError("execution validation needs two different languages");
  registry.get(t_g.kind.language);
  registry.get(lprime);

  ExecutionValidation out;
  const TaskInstance t_gp = retarget_language(t_g, lprime, templates);
  const auto generate = [&](const ModelRef& m, const TaskInstance& t,
                            std::string_view tag) -> std::optional<Code> {
    const std::string raw =
        client.complete(m, make_prompt(t, 0.7, derive_seed(t.seed, tag)));
    try {
      const Completion c = parse_completion(t.kind, raw);
      if (const auto* code = std::get_if<Code>(&c)) return *code;
    } catch (const UnparseableCompletion&) {
    }
    return std::nullopt;
  };
  try {
    out.c_l = generate(m_l, t_g, "gen-l");
    out.c_lprime = generate(m_lprime, t_gp, "gen-lprime");
  } catch (const TransportError&) {
    out.outcome.reason = RejectReason::TransportAbort;
    out.outcome.failure_round = 0;
    return out;
  }
  if (!out.c_l || !out.c_lprime) {
    out.outcome.reason = RejectReason::ParseFailure;
    out.outcome.failure_round = 0;
    return out;
  }
  out.outcome = check_execution_invariance(*out.c_l, *out.c_lprime, t_g.tables.at(0), cfg,
                                           registry);
  return out;
}

}  // namespace tabval
