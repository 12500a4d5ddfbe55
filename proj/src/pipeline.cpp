#include "tabval/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "tabval/errors.hpp"
#include "tabval/rng.hpp"

namespace tabval {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string dump_line(const json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

json code_json(const Code& c) { return {{"language", c.language}, {"source", c.source}}; }

Code code_from(const json& j) {
  return {j.at("language").get<std::string>(), j.at("source").get<std::string>()};
}

json validation_json(const ValidationConfig& v) {
  return {{"mode", mode_name(v.mode)},
          {"n_rounds", v.n_rounds},
          {"seed", v.seed},
          {"sample_fraction", v.sample_fraction},
          {"include_full_table_first", v.include_full_table_first},
          {"permute_tables", v.permute_tables}};
}

ValidationConfig validation_from(const json& j) {
  ValidationConfig v;
  v.mode = parse_mode(j.at("mode").get<std::string>());
  v.n_rounds = j.at("n_rounds").get<int>();
  v.seed = j.at("seed").get<std::uint64_t>();
  v.sample_fraction = j.value("sample_fraction", 0.5);
  v.include_full_table_first = j.value("include_full_table_first", true);
  v.permute_tables = j.value("permute_tables", true);
  return v;
}

bool execution_mode(const PipelineConfig& cfg) {
  return cfg.task.is_code() && cfg.validation.mode == ValidationMode::Execution &&
         !cfg.flags.no_execution_validation;
}

bool has_negatives(TaskFamily f) {
  return f == TaskFamily::ErrorDetection || f == TaskFamily::SchemaMatching;
}

std::string sanitize(std::string s) {
  for (auto& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) c = '_';
  return s;
}

class IterationRunner {
 public:
  IterationRunner(const PipelineConfig& cfg, const std::vector<Table>& corpus,
                  const ModelRef& m_g, const ModelRef& m_c, const ModelRef& m_g2, int iteration,
                  RunContext& ctx)
      : cfg_(cfg), corpus_(corpus), m_g_(m_g), m_c_(m_c), m_g2_(m_g2), iter_(iteration),
        ctx_(ctx) {}

  IterationOutput run() {
    IterationOutput& out = out_;
    out.report.iteration = iter_;
    out.report.m_g = m_g_;
    out.report.m_c = m_c_;
    if (execution_mode(cfg_)) out.report.m_g_second = m_g2_;
    if (cfg_.negatives_ratio > 0 && !has_negatives(cfg_.task.family))
      out.report.warnings.push_back("negatives are not defined for " +
                                    family_name(cfg_.task.family) + "; none sampled");
    std::size_t negative_index = 0;
    for (int j = 0; j < cfg_.step_size; ++j) {
      if (ctx_.cancel && ctx_.cancel->load()) {
        out.report.interrupted = true;
        break;
      }
      const CandidateResult r = attempt(j);
      ++out.report.candidates;
      if (r == CandidateResult::Validated) ++out.report.validated;
      else ++out.report.rejected_by_reason[result_name(r)];

      if (cfg_.negatives_ratio > 0 && has_negatives(cfg_.task.family)) {
        const auto due = std::llround(cfg_.negatives_ratio * (j + 1)) -
                         std::llround(cfg_.negatives_ratio * j);
        for (long long n = 0; n < due; ++n) negative(negative_index++);
      }
    }
    out.report.train_g_size = out.train_g.size();
    out.report.train_c_size = out.train_c.size();
    out.report.train_g_second_size = out.train_g_second.size();
    if (out.train_g.empty() && out.train_c.empty())
      out.report.warnings.push_back("NoValidatedData: no candidate was validated");
    return std::move(out_);
  }

 private:
  const Table& pick_table(std::uint64_t seed, std::size_t* index = nullptr) {
    SplitMix64 rng(seed);
    const auto i = static_cast<std::size_t>(rng.below(corpus_.size()));
    if (index) *index = i;
    return corpus_[i];
  }

  json provenance(std::string_view role, int j, std::uint64_t seed, const Table& table,
                  const ValidationConfig& v, const ValidationOutcome& o) const {
    return {{"iteration", iter_},
            {"candidate", j},
            {"role", role},
            {"table", table.name()},
            {"seed", seed},
            {"validation", validation_json(v)},
            {"outcome_digest", outcome_digest(o)}};
  }

  bool first_sighting(const std::string& tag, const Table& table, const TaskInstance& t) {
    return seen_.insert(tag + "|" + table_digest(table) + "|" + task_digest(t)).second;
  }

  CandidateResult attempt(int j) {
    const std::uint64_t s = derive_seed(cfg_.root_seed, "candidate", iter_, j);
    const Table& table = pick_table(derive_seed(s, "table"));
    const TemplateSet& tpl = cfg_.templates;

    TaskContext context;
    try {
      if (cfg_.task.is_code()) {
        const TaskInstance b =
            instantiate_brainstorm(cfg_.task.family, table, derive_seed(s, "brainstorm"), tpl);
        const std::string raw =
            ctx_.client.complete(m_g_, make_prompt(b, 0.7, derive_seed(s, "brainstorm-call")));
        context = parse_brainstorm(cfg_.task.family, raw);
      }
    } catch (const TransportError&) {
      return CandidateResult::TransportAbort;
    } catch (const UnparseableCompletion&) {
      return CandidateResult::ParseFailure;
    } catch (const EmptyTable&) {
      return CandidateResult::CandidateSkipped;
    }

    TaskInstance t_g;
    try {
      t_g = instantiate_generative(cfg_.task, table, derive_seed(s, "task"), context, tpl);
    } catch (const EmptyTable&) {
      return CandidateResult::CandidateSkipped;
    } catch (const MissingContext&) {
      return CandidateResult::CandidateSkipped;
    }
    if (!first_sighting("pos", table, t_g)) return CandidateResult::Duplicate;

    ValidationConfig v = cfg_.validation;
    v.seed = derive_seed(s, "validate");
    v.permute_tables = !cfg_.flags.no_permutation;

    if (execution_mode(cfg_)) {
      v.mode = ValidationMode::Execution;
      const ExecutionValidation ev = validate_generative_execution(
          ctx_.client, m_g_, m_g2_, t_g, cfg_.second_language, v, ctx_.registry, tpl);
      if (!ev.outcome.validated) {
        if (ev.outcome.reason == RejectReason::ParseFailure) return CandidateResult::ParseFailure;
        if (ev.outcome.reason == RejectReason::TransportAbort)
          return CandidateResult::TransportAbort;
        return CandidateResult::ValidationFailed;
      }
      json prov = provenance("positive", j, s, table, v, ev.outcome);
      prov["check"] = {{"code_l", code_json(*ev.c_l)},
                       {"code_lprime", code_json(*ev.c_lprime)},
                       {"table", table_to_json(t_g.tables.at(0))}};
      const TaskInstance t_c = apply_dual_transform(t_g, *ev.c_l, tpl);
      const TaskInstance t_g2 = retarget_language(t_g, cfg_.second_language, tpl);
      out_.train_g.push_back({t_g, *ev.c_l, prov});
      out_.train_g_second.push_back({t_g2, *ev.c_lprime, prov});
      out_.train_c.push_back({t_c, *t_c.expected, prov});
      return CandidateResult::Validated;
    }

    Completion c;
    TaskInstance t_c;
    try {
      const std::string raw =
          ctx_.client.complete(m_g_, make_prompt(t_g, 0.7, derive_seed(s, "generate")));
      c = parse_completion(t_g.kind, raw);
      t_c = apply_dual_transform(t_g, c, tpl);
    } catch (const TransportError&) {
      return CandidateResult::TransportAbort;
    } catch (const UnparseableCompletion&) {
      return CandidateResult::ParseFailure;
    } catch (const VariantMismatch&) {
      return CandidateResult::ParseFailure;
    }
    if (cfg_.task.is_code()) v.mode = ValidationMode::ModelBasedForCode;
    else v.mode = ValidationMode::Permutation;
    const ValidationOutcome o =
        cfg_.task.is_code()
            ? validate_code_model_based(ctx_.client, m_c_, t_c, *t_c.expected, v, tpl)
            : validate_classification(ctx_.client, m_c_, t_c, *t_c.expected, v, tpl);
    if (!o.validated)
      return o.reason == RejectReason::TransportAbort ? CandidateResult::TransportAbort
                                                      : CandidateResult::ValidationFailed;
    json prov = provenance("positive", j, s, table, v, o);
    prov["check"] = {{"task", task_to_json(t_c)}};
    out_.train_g.push_back({t_g, c, prov});
    out_.train_c.push_back({t_c, *t_c.expected, std::move(prov)});
    return CandidateResult::Validated;
  }

  void negative(std::size_t idx) {
    ++out_.report.negatives_attempted;
    const std::uint64_t s = derive_seed(cfg_.root_seed, "negative", iter_, idx);
    std::size_t ti = 0;
    const Table& table = pick_table(derive_seed(s, "table"), &ti);
    const Table* other = nullptr;
    if (cfg_.task.family == TaskFamily::SchemaMatching) {
      if (corpus_.size() < 2) return;
      SplitMix64 rng(derive_seed(s, "other"));
      const auto k = static_cast<std::size_t>(rng.below(corpus_.size() - 1));
      other = &corpus_[k >= ti ? k + 1 : k];
    }
    NegativeInstance neg;
    try {
      neg = sample_negative_instance(cfg_.task, table, derive_seed(s, "task"), other,
                                     cfg_.templates);
    } catch (const EmptyTable&) {
      return;
    }
    if (!first_sighting("neg", table, neg.task)) return;
    ValidationConfig v = cfg_.validation;
    v.mode = ValidationMode::Permutation;
    v.seed = derive_seed(s, "validate");
    v.permute_tables = !cfg_.flags.no_permutation;
    const ValidationOutcome o = validate_classification(ctx_.client, m_c_, neg.task,
                                                        neg.expected, v, cfg_.templates);
    if (!o.validated) return;
    ++out_.report.negatives_validated;
    json prov = provenance("negative", static_cast<int>(idx), s, table, v, o);
    prov["check"] = {{"task", task_to_json(neg.task)}};
    out_.train_c.push_back({neg.task, neg.expected, std::move(prov)});
  }

  const PipelineConfig& cfg_;
  const std::vector<Table>& corpus_;
  ModelRef m_g_, m_c_, m_g2_;
  int iter_;
  RunContext& ctx_;
  IterationOutput out_;
  std::set<std::string> seen_;
};

json model_json_or_null(const std::optional<ModelRef>& m) {
  return m ? model_to_json(*m) : json(nullptr);
}

}  // namespace

std::string result_name(CandidateResult r) {
  switch (r) {
    case CandidateResult::Validated: return "validated";
    case CandidateResult::ParseFailure: return "ParseFailure";
    case CandidateResult::ValidationFailed: return "ValidationFailed";
    case CandidateResult::TransportAbort: return "TransportAbort";
    case CandidateResult::CandidateSkipped: return "CandidateSkipped";
    case CandidateResult::Duplicate: return "Duplicate";
  }
  return "?";
}

void check_config(const PipelineConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("iterations must be at least 1");
  if (cfg.step_size < 1) throw ConfigError("step size must be at least 1");
  if (!(cfg.negatives_ratio >= 0)) throw ConfigError("negatives ratio must be non-negative");
  if (cfg.validation.n_rounds < 1) throw ConfigError("validation rounds must be at least 1");
  if (!(cfg.validation.sample_fraction > 0 && cfg.validation.sample_fraction <= 1))
    throw ConfigError("sample fraction must be in (0, 1]");
  if (cfg.task.is_code()) {
    if (!is_known_language(cfg.task.language))
      throw ConfigError("unknown language '" + cfg.task.language + "'");
    if (execution_mode(cfg) && cfg.second_language == cfg.task.language)
      throw ConfigError("execution validation needs a second, different language");
  }
}

json config_to_json(const PipelineConfig& cfg) {
  json flags = {{"no_permutation", cfg.flags.no_permutation},
                {"no_execution_validation", cfg.flags.no_execution_validation},
                {"no_generator_finetune", cfg.flags.no_generator_finetune},
                {"export_only", cfg.flags.export_only}};
  json j = {{"task", kind_to_json(cfg.task)},
            {"iterations", cfg.iterations},
            {"step_size", cfg.step_size},
            {"validation", validation_json(cfg.validation)},
            {"corpus_dir", cfg.corpus_dir.string()},
            {"root_seed", cfg.root_seed},
            {"base_model", model_to_json(cfg.base_model)},
            {"negatives_ratio", cfg.negatives_ratio},
            {"flags", flags},
            {"hyperparameters",
             {{"lr_multiplier", cfg.hyperparameters.lr_multiplier},
              {"batch_fraction", cfg.hyperparameters.batch_fraction},
              {"epochs", cfg.hyperparameters.epochs}}}};
  if (cfg.task.is_code()) {
    j["second_language"] = cfg.second_language;
    j["second_model"] = model_json_or_null(cfg.second_model);
    j["lockstep"] = cfg.lockstep;
  }
  return j;
}

json report_to_json(const IterationReport& r) {
  json ft = json::array();
  for (const auto& f : r.finetunes)
    ft.push_back({{"role", f.role}, {"status", f.status}, {"detail", f.detail}});
  json models = {{"m_g", model_to_json(r.m_g)}, {"m_c", model_to_json(r.m_c)}};
  if (r.m_g_second) models["m_g_second"] = model_to_json(*r.m_g_second);
  return {{"iteration", r.iteration},
          {"candidates", r.candidates},
          {"validated", r.validated},
          {"rejected_by_reason", r.rejected_by_reason},
          {"negatives_attempted", r.negatives_attempted},
          {"negatives_validated", r.negatives_validated},
          {"train_g_size", r.train_g_size},
          {"train_c_size", r.train_c_size},
          {"train_g_second_size", r.train_g_second_size},
          {"new_models", models},
          {"finetunes", ft},
          {"warnings", r.warnings},
          {"interrupted", r.interrupted}};
}

std::vector<Table> load_corpus(const fs::path& dir, std::vector<std::string>* skipped) {
  if (!fs::is_directory(dir)) throw CorpusError("corpus directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Table> out;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      Table t = parse_table_csv(ss.str(), f.stem().string());
      if (t.empty()) throw CorpusError("empty table");
      out.push_back(std::move(t));
    } catch (const CorpusError&) {
      if (skipped) skipped->push_back(f.filename().string());
    }
  }
  if (out.empty()) throw CorpusError("no parseable tables in " + dir.string());
  return out;
}

std::string corpus_digest(const std::vector<Table>& corpus) {
  std::uint64_t h = fnv1a("corpus");
  for (const auto& t : corpus) h = fnv1a(t.name() + "\n" + table_digest(t), h);
  return to_hex(h);
}

IterationOutput run_iteration(const PipelineConfig& cfg, const std::vector<Table>& corpus,
                              const ModelRef& m_g, const ModelRef& m_c,
                              const ModelRef& m_g_second, int iteration, RunContext& ctx) {
  check_config(cfg);
  if (corpus.empty()) throw CorpusError("empty corpus");
  return IterationRunner(cfg, corpus, m_g, m_c, m_g_second, iteration, ctx).run();
}

std::size_t export_training_jsonl(const TrainingSet& ts, const fs::path& path, bool strip_meta) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& ex : ts) {
    using ojson = nlohmann::ordered_json;
    const auto msg = [](const char* role, const std::string& content) {
      ojson m;
      m["role"] = role;
      m["content"] = content;
      return m;
    };
    ojson j;
    j["messages"] = ojson::array({msg("system", ex.task.system), msg("user", ex.task.instruction),
                                  msg("assistant", render_completion(ex.completion))});
    if (!strip_meta) j["meta"] = ojson::parse(dump_line(ex.provenance));
    out << j.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
  }
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
  return ts.size();
}

namespace {

ModelRef finetune(ModelClient& client, const PipelineConfig& cfg, const ModelRef& current,
                  const TrainingSet& ts, const fs::path& file, const std::string& role,
                  IterationReport& report) {
  if (cfg.flags.export_only) {
    report.finetunes.push_back({role, "export_only", ""});
    return current;
  }
  if (ts.empty()) {
    report.finetunes.push_back({role, "skipped", "NoValidatedData"});
    return current;
  }
  FineTuneJob job;
  job.base = cfg.base_model;
  job.training_file = file;
  job.hyperparameters = cfg.hyperparameters;
  job.target_generation = current.generation + 1;
  try {
    job = client.submit_finetune(std::move(job), cfg.finetune);
  } catch (const EmptyTrainingSet& e) {
    report.finetunes.push_back({role, "skipped", e.what()});
    return current;
  }
  if (const auto* ok = std::get_if<FineTuneSucceeded>(&job.status)) {
    report.finetunes.push_back({role, "succeeded", ok->new_model.id});
    return ok->new_model;
  }
  const auto* failed = std::get_if<FineTuneFailed>(&job.status);
  report.finetunes.push_back({role, "failed", failed ? failed->reason : "unfinished"});
  report.warnings.push_back(role + " fine-tune did not succeed; previous model kept");
  return current;
}

void write_report(const PipelineConfig& cfg, const std::vector<Table>& corpus,
                  const std::vector<std::string>& skipped, const PipelineResult& res) {
  json iters = json::array();
  for (const auto& r : res.reports) iters.push_back(report_to_json(r));
  json names = json::array();
  for (const auto& t : corpus) names.push_back(t.name());
  const json j = {{"config", config_to_json(cfg)},
                  {"corpus_digest", corpus_digest(corpus)},
                  {"corpus_tables", names},
                  {"skipped_files", skipped},
                  {"iterations", iters},
                  {"final_models",
                   {{"m_g", model_to_json(res.final_m_g)}, {"m_c", model_to_json(res.final_m_c)}}},
                  {"interrupted", res.interrupted}};
  fs::create_directories(cfg.out_dir);
  std::ofstream(cfg.out_dir / "report.json", std::ios::binary | std::ios::trunc)
      << j.dump(2, ' ', false, json::error_handler_t::replace) << '\n';
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, RunContext& ctx) {
  check_config(cfg);
  std::vector<std::string> skipped;
  const std::vector<Table> corpus = load_corpus(cfg.corpus_dir, &skipped);

  PipelineResult res;
  ModelRef m_g = cfg.base_model;
  ModelRef m_c = cfg.base_model;
  ModelRef m_g2 = cfg.second_model.value_or(cfg.base_model);
  const bool exec = execution_mode(cfg);

  for (int i = 1; i <= cfg.iterations; ++i) {
    IterationOutput out = run_iteration(cfg, corpus, m_g, m_c, m_g2, i, ctx);
    const fs::path dir = cfg.out_dir / ("iter_" + std::to_string(i));
    const fs::path g_file = dir / "train_g.jsonl";
    const fs::path c_file = dir / "train_c.jsonl";
    const fs::path g2_file = dir / ("train_g_" + sanitize(cfg.second_language) + ".jsonl");
    export_training_jsonl(out.train_g, g_file);
    export_training_jsonl(out.train_c, c_file);
    if (exec) export_training_jsonl(out.train_g_second, g2_file);

    if (!out.report.interrupted) {
      if (cfg.flags.no_generator_finetune)
        out.report.finetunes.push_back({"generator", "skipped", "no_generator_finetune"});
      else
        m_g = finetune(ctx.client, cfg, m_g, out.train_g, g_file, "generator", out.report);
      m_c = finetune(ctx.client, cfg, m_c, out.train_c, c_file, "validator", out.report);
      if (exec && cfg.lockstep)
        m_g2 = finetune(ctx.client, cfg, m_g2, out.train_g_second, g2_file,
                        "generator_" + cfg.second_language, out.report);
    }
    out.report.m_g = m_g;
    out.report.m_c = m_c;
    if (exec) out.report.m_g_second = m_g2;

    res.interrupted = out.report.interrupted;
    res.reports.push_back(std::move(out.report));
    res.final_m_g = m_g;
    res.final_m_c = m_c;
    write_report(cfg, corpus, skipped, res);
    if (res.interrupted) break;
  }
  return res;
}

ValidationOutcome revalidate(const json& provenance, ModelClient& client, const ModelRef& m_c,
                             const ExecutorRegistry& registry, const TemplateSet& templates) {
  const ValidationConfig v = validation_from(provenance.at("validation"));
  const json& check = provenance.at("check");
  if (v.mode == ValidationMode::Execution)
    return check_execution_invariance(code_from(check.at("code_l")),
                                      code_from(check.at("code_lprime")),
                                      table_from_json(check.at("table")), v, registry);
  TaskInstance t = task_from_json(check.at("task"));
  t = with_tables(t, t.tables, templates);
  if (!t.expected) throw ConfigError("provenance task has no expected completion");
  return validate_classification(client, m_c, t, *t.expected, v, templates);
}

}  // namespace tabval
