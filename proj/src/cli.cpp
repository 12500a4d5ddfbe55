#include "tabval/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <sstream>

#include "tabval/errors.hpp"
#include "tabval/eval.hpp"
#include "tabval/executors.hpp"
#include "tabval/pipeline.hpp"

namespace tabval {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct PipelineFlags {
  std::string task = "error-detection";
  std::string language = "sql-subset";
  std::string second_language = "table-dsl";
  int iterations = 3;
  int step_size = 3000;
  int rounds = 5;
  std::uint64_t seed = 0;
  std::string corpus;
  std::string out_dir = "out";
  std::vector<std::string> models;
  double negatives_ratio = 1.0;
  std::string mode = "permutation";
  double sample_fraction = 0.5;
  bool no_full_table_first = false;
  bool export_only = false;
  bool no_permutation = false;
  bool no_execution_validation = false;
  bool no_generator_finetune = false;
  bool lockstep = false;
  double lr_multiplier = 0.5;
  double batch_fraction = 0.01;
  int epochs = 3;
  std::vector<std::string> generation_scripts;
  std::string templates;
  std::string auth_env;
  int poll_timeout_s = 6 * 3600;
};

struct SharedFlags {
  std::vector<std::string> externals;  // NAME=INTERPRETER
  int exec_timeout_ms = 2000;
};

void add_pipeline_flags(CLI::App* sub, PipelineFlags& f) {
  sub->add_option("--task", f.task,
                  "error-detection | schema-matching | nl-to-code | transform-by-example")
      ->capture_default_str();
  sub->add_option("--language", f.language, "target language L for code tasks")
      ->capture_default_str();
  sub->add_option("--second-language", f.second_language,
                  "language L' for execution validation")
      ->capture_default_str();
  sub->add_option("--iterations", f.iterations, "Generator-Validator iterations (k)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--step-size", f.step_size, "candidates per iteration")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--rounds", f.rounds, "validation rounds per candidate (N)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--seed", f.seed, "root seed")->capture_default_str();
  sub->add_option("--corpus", f.corpus, "directory of CSV tables")->required();
  sub->add_option("--out-dir", f.out_dir, "output directory")->capture_default_str();
  sub->add_option("--model", f.models,
                  "scripted:<path> or http:<url>#<name>; repeat to give the L' generator")
      ->required();
  sub->add_option("--negatives-ratio", f.negatives_ratio, "negatives per candidate")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--mode", f.mode, "permutation | execution | model-based")
      ->capture_default_str();
  sub->add_option("--sample-fraction", f.sample_fraction, "row fraction per execution round")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  sub->add_flag("--no-full-table-first", f.no_full_table_first,
                "sample rows in the first execution round too");
  sub->add_flag("--export-only", f.export_only, "export training sets, skip fine-tuning");
  sub->add_flag("--no-permutation", f.no_permutation, "ablation: validate without permuting");
  sub->add_flag("--no-execution-validation", f.no_execution_validation,
                "ablation: validate code with the verifier model instead of execution");
  sub->add_flag("--no-generator-finetune", f.no_generator_finetune,
                "ablation: fine-tune only the validator");
  sub->add_flag("--lockstep", f.lockstep, "fine-tune the L' generator as well");
  sub->add_option("--lr-multiplier", f.lr_multiplier, "fine-tune learning-rate multiplier")
      ->capture_default_str();
  sub->add_option("--batch-fraction", f.batch_fraction, "fine-tune batch size as data fraction")
      ->capture_default_str();
  sub->add_option("--epochs", f.epochs, "fine-tune epochs")->capture_default_str();
  sub->add_option("--generation-script", f.generation_scripts,
                  "GEN=PATH: script served by scripted models after fine-tune GEN");
  sub->add_option("--templates", f.templates, "directory of prompt template overrides");
  sub->add_option("--auth-env", f.auth_env, "environment variable holding the API token");
  sub->add_option("--poll-timeout", f.poll_timeout_s, "fine-tune poll timeout in seconds")
      ->capture_default_str();
}

void add_shared_flags(CLI::App* sub, SharedFlags& f) {
  sub->add_option("--external", f.externals,
                  "NAME=INTERPRETER: run language external:NAME as a subprocess");
  sub->add_option("--exec-timeout-ms", f.exec_timeout_ms, "per-snippet execution time limit")
      ->capture_default_str();
}

ModelRef load_model(const std::string& spec, const std::string& auth_env) {
  ModelRef m = parse_model_spec(spec);
  if (auto* h = std::get_if<HttpBackend>(&m.backend); h && !auth_env.empty())
    h->auth_env_var = auth_env;
  return m;
}

ExecutorRegistry make_registry(const SharedFlags& f) {
  ExecutorRegistry reg;
  ExecLimits limits;
  limits.timeout = std::chrono::milliseconds(f.exec_timeout_ms);
  reg.add("sql-subset", std::make_shared<SqlSubsetExecutor>(), limits);
  reg.add("table-dsl", std::make_shared<TableDslExecutor>(), limits);
  for (const auto& e : f.externals) {
    const auto eq = e.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--external expects NAME=INTERPRETER, got '" + e + "'");
    reg.add("external:" + e.substr(0, eq),
            std::make_shared<SubprocessExecutor>(e.substr(eq + 1)), limits);
  }
  return reg;
}

PipelineConfig build_config(const PipelineFlags& f) {
  PipelineConfig cfg;
  const TaskFamily fam = parse_family(f.task);
  cfg.task = {fam, Facet::Generative, ""};
  if (cfg.task.is_code()) cfg.task.language = f.language;
  cfg.second_language = f.second_language;
  cfg.iterations = f.iterations;
  cfg.step_size = f.step_size;
  cfg.validation.n_rounds = f.rounds;
  cfg.validation.mode = parse_mode(f.mode);
  cfg.validation.sample_fraction = f.sample_fraction;
  cfg.validation.include_full_table_first = !f.no_full_table_first;
  cfg.corpus_dir = f.corpus;
  cfg.out_dir = f.out_dir;
  cfg.root_seed = f.seed;
  if (f.models.empty()) throw ConfigError("--model is required");
  cfg.base_model = load_model(f.models[0], f.auth_env);
  if (f.models.size() > 1) cfg.second_model = load_model(f.models[1], f.auth_env);
  if (f.models.size() > 2) throw ConfigError("at most two --model values");
  cfg.lockstep = f.lockstep;
  cfg.negatives_ratio = f.negatives_ratio;
  cfg.flags = {f.no_permutation, f.no_execution_validation, f.no_generator_finetune,
               f.export_only};
  cfg.hyperparameters = {f.lr_multiplier, f.batch_fraction, f.epochs};
  for (const auto& g : f.generation_scripts) {
    const auto eq = g.find('=');
    if (eq == std::string::npos) throw ConfigError("--generation-script expects GEN=PATH");
    int gen = 0;
    try {
      gen = std::stoi(g.substr(0, eq));
    } catch (const std::exception&) {
      throw ConfigError("bad generation in '" + g + "'");
    }
    cfg.finetune.generation_scripts[gen] = g.substr(eq + 1);
  }
  cfg.finetune.poll_timeout = std::chrono::seconds(f.poll_timeout_s);
  if (!f.templates.empty()) cfg.templates = TemplateSet::load_dir(f.templates);
  check_config(cfg);
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_call_log(const ModelClient& client, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "calls.jsonl", std::ios::binary | std::ios::trunc);
  for (const auto& c : client.call_log())
    out << json{{"model", c.model_id},
                {"prompt", c.prompt_digest},
                {"latency_ms", c.latency_ms},
                {"outcome", c.outcome}}
               .dump()
        << '\n';
}

void print_summary(std::ostream& out, const PipelineResult& res, const fs::path& out_dir) {
  for (const auto& r : res.reports) {
    out << "iteration " << r.iteration << ": candidates=" << r.candidates
        << " validated=" << r.validated << " train_g=" << r.train_g_size
        << " train_c=" << r.train_c_size << " negatives=" << r.negatives_validated << "/"
        << r.negatives_attempted << " m_g=" << r.m_g.version_name()
        << " m_c=" << r.m_c.version_name() << "\n";
    for (const auto& w : r.warnings) out << "  warning: " << w << "\n";
  }
  out << "report: " << (out_dir / "report.json").string() << "\n";
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                const std::atomic<bool>* cancel) {
  CLI::App app("Generate, validate and export training data for table tasks", "tabval");
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML file; keys go under [<subcommand>] sections");

  PipelineFlags run_flags, gen_flags;
  SharedFlags run_shared, gen_shared, val_shared, eval_shared, exec_shared;

  auto* run = app.add_subcommand("run", "full Generator-Validator loop with fine-tuning");
  add_pipeline_flags(run, run_flags);
  add_shared_flags(run, run_shared);

  auto* gen = app.add_subcommand("generate", "one iteration of generation and validation");
  add_pipeline_flags(gen, gen_flags);
  add_shared_flags(gen, gen_shared);

  std::string val_in, val_model, val_auth, val_templates, val_report;
  auto* val = app.add_subcommand("validate", "re-validate exported JSONL lines");
  val->add_option("--in", val_in, "exported JSONL with meta")->required();
  val->add_option("--model", val_model, "validator model spec")->required();
  val->add_option("--auth-env", val_auth, "environment variable holding the API token");
  val->add_option("--templates", val_templates, "directory of prompt template overrides");
  val->add_option("--report", val_report, "write per-line outcomes as JSONL");
  add_shared_flags(val, val_shared);

  std::string exp_in, exp_out;
  bool exp_strip = false;
  auto* exp = app.add_subcommand("export", "rewrite an exported training set");
  exp->add_option("--in", exp_in, "exported JSONL")->required();
  exp->add_option("--out", exp_out, "destination JSONL")->required();
  exp->add_flag("--strip-meta", exp_strip, "drop provenance, keep only chat messages");

  std::string ev_bench, ev_model, ev_auth, ev_report, ev_templates;
  auto* ev = app.add_subcommand("evaluate", "score a model on a benchmark file");
  ev->add_option("--benchmark", ev_bench, "benchmark JSONL")->required();
  ev->add_option("--model", ev_model, "model spec")->required();
  ev->add_option("--auth-env", ev_auth, "environment variable holding the API token");
  ev->add_option("--report", ev_report, "write the evaluation report as JSON");
  ev->add_option("--templates", ev_templates, "directory of prompt template overrides");
  add_shared_flags(ev, eval_shared);

  std::string ex_lang = "sql-subset", ex_code, ex_code_file, ex_table;
  auto* ex = app.add_subcommand("exec", "run one snippet on one CSV table");
  ex->add_option("--language", ex_lang, "snippet language")->capture_default_str();
  auto* code_opt = ex->add_option("--code", ex_code, "snippet source");
  ex->add_option("--code-file", ex_code_file, "file holding the snippet")->excludes(code_opt);
  ex->add_option("--table", ex_table, "input CSV")->required();
  add_shared_flags(ex, exec_shared);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*run || *gen) {
      const bool is_run = static_cast<bool>(*run);
      PipelineConfig cfg = build_config(is_run ? run_flags : gen_flags);
      if (!is_run) {
        cfg.iterations = 1;
        cfg.flags.export_only = true;
      }
      const ExecutorRegistry registry = make_registry(is_run ? run_shared : gen_shared);
      ModelClient client;
      RunContext ctx{client, registry, cancel};
      const PipelineResult res = run_pipeline(cfg, ctx);
      write_call_log(client, cfg.out_dir);
      print_summary(out, res, cfg.out_dir);
      if (res.interrupted) return kExitInterrupted;
      for (const auto& rep : res.reports)
        if (rep.rejected_by_reason.count("TransportAbort")) {
          err << "backend error: " << rep.rejected_by_reason.at("TransportAbort")
              << " candidates aborted on transport failures in iteration " << rep.iteration << "\n";
          return kExitBackend;
        }
      return kExitOk;
    }

    if (*val) {
      const ExecutorRegistry registry = make_registry(val_shared);
      const ModelRef m = load_model(val_model, val_auth);
      const TemplateSet templates =
          val_templates.empty() ? TemplateSet::defaults() : TemplateSet::load_dir(val_templates);
      ModelClient client;
      std::ifstream in(val_in, std::ios::binary);
      if (!in) throw ConfigError("cannot read " + val_in);
      std::ofstream rep;
      if (!val_report.empty()) rep.open(val_report, std::ios::binary | std::ios::trunc);
      std::size_t total = 0, ok = 0, lineno = 0;
      std::string line;
      while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const json::exception& e) {
          throw ConfigError(val_in + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("meta")) throw ConfigError("line " + std::to_string(lineno) + " has no meta");
        const ValidationOutcome o = revalidate(j["meta"], client, m, registry, templates);
        ++total;
        if (o.validated) ++ok;
        if (rep) rep << json{{"line", lineno}, {"outcome", outcome_to_json(o)}}.dump() << '\n';
      }
      out << "revalidated " << ok << "/" << total << "\n";
      return kExitOk;
    }

    if (*exp) {
      std::ifstream in(exp_in, std::ios::binary);
      if (!in) throw ConfigError("cannot read " + exp_in);
      if (fs::path(exp_out).has_parent_path()) fs::create_directories(fs::path(exp_out).parent_path());
      std::ofstream o(exp_out, std::ios::binary | std::ios::trunc);
      std::size_t n = 0, lineno = 0;
      std::string line;
      while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const json::exception& e) {
          throw ConfigError(exp_in + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("messages")) throw ConfigError("line " + std::to_string(lineno) + " has no messages");
        if (exp_strip) j.erase("meta");
        o << j.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
        ++n;
      }
      out << "exported " << n << " lines to " << exp_out << "\n";
      return kExitOk;
    }

    if (*ev) {
      const ExecutorRegistry registry = make_registry(eval_shared);
      const ModelRef m = load_model(ev_model, ev_auth);
      const TemplateSet templates =
          ev_templates.empty() ? TemplateSet::defaults() : TemplateSet::load_dir(ev_templates);
      const auto cases = load_benchmark(ev_bench);
      ModelClient client;
      const EvalReport r = evaluate(client, m, cases, registry, templates);
      if (r.metric == "f1")
        out << "precision " << r.scores.precision << " recall " << r.scores.recall << " f1 "
            << r.scores.f1 << " (" << r.records.size() << " cases)\n";
      else
        out << "execution_accuracy " << r.execution_accuracy << " (" << r.records.size()
            << " cases)\n";
      if (!ev_report.empty())
        std::ofstream(ev_report, std::ios::binary | std::ios::trunc)
            << eval_report_to_json(r).dump(2) << '\n';
      return kExitOk;
    }

    if (*ex) {
      const ExecutorRegistry registry = make_registry(exec_shared);
      if (ex_code.empty() && ex_code_file.empty()) throw ConfigError("--code or --code-file is required");
      const std::string source = ex_code_file.empty() ? ex_code : read_file(ex_code_file);
      const Table t = parse_table_csv(read_file(ex_table), fs::path(ex_table).stem().string());
      const ExecResult r = execute({ex_lang, source}, t, registry);
      if (const auto* e = std::get_if<ExecError>(&r)) {
        err << describe(r) << "\n";
        (void)e;
        return kExitConfig;
      }
      if (const auto* s = std::get_if<Scalar>(&r)) out << s->value.render() << "\n";
      else out << serialize_table_csv(std::get<ResultTable>(r).table);
      return kExitOk;
    }
  } catch (const TransportError& e) {
    err << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const ScriptMissError& e) {
    err << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitUsage;
}

}  // namespace tabval
