#include "tabval/model_client.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "tabval/errors.hpp"
#include "tabval/rng.hpp"

namespace tabval {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw ConfigError("base url needs a scheme: " + url);
  const auto path_begin = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_begin);
  out.prefix = path_begin == std::string::npos ? "" : url.substr(path_begin);
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

httplib::Headers auth_headers(const HttpBackend& b) {
  httplib::Headers h;
  if (!b.auth_env_var.empty())
    if (const char* tok = std::getenv(b.auth_env_var.c_str()); tok && *tok)
      h.emplace("Authorization", std::string("Bearer ") + tok);
  return h;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ModelRef parse_model_spec(std::string_view spec) {
  ModelRef m;
  if (spec.starts_with("scripted:")) {
    std::filesystem::path p(std::string(spec.substr(9)));
    if (p.empty()) throw ConfigError("scripted model needs a path");
    m.id = p.stem().string();
    m.backend = ScriptedBackend{p};
    return m;
  }
  if (spec.starts_with("http:") || spec.starts_with("https:")) {
    // http:<url>#<name>; the url itself may or may not repeat the scheme.
    std::string rest(spec.starts_with("http:") ? spec.substr(5) : spec);
    const auto hash = rest.rfind('#');
    if (hash == std::string::npos || hash + 1 == rest.size())
      throw ConfigError("http model spec needs '#<model-name>': " + std::string(spec));
    std::string url = rest.substr(0, hash);
    if (url.find("://") == std::string::npos) url = "http://" + url;
    HttpBackend b{url, rest.substr(hash + 1)};
    m.id = b.model_name;
    m.backend = std::move(b);
    return m;
  }
  throw ConfigError("model spec must be scripted:<path> or http:<url>#<name>: " +
                    std::string(spec));
}

std::string model_spec(const ModelRef& m) {
  if (const auto* s = std::get_if<ScriptedBackend>(&m.backend))
    return "scripted:" + s->script_path.string();
  const auto& h = std::get<HttpBackend>(m.backend);
  return "http:" + h.base_url + "#" + h.model_name;
}

json model_to_json(const ModelRef& m) {
  return json{{"id", m.id},
              {"spec", model_spec(m)},
              {"generation", m.generation},
              {"version", m.version_name()}};
}

// ---- fingerprints and scripts ------------------------------------------------

std::string Fingerprint::key(bool permutation_invariant) const {
  return task_key + "|" + table_names + "|" + (permutation_invariant ? invariant : exact);
}

Fingerprint fingerprint(const ChatPrompt& p) {
  Fingerprint f;
  f.task_key = p.meta.task_key;
  for (std::size_t i = 0; i < p.meta.tables.size(); ++i) {
    if (i) f.table_names += ",";
    f.table_names += p.meta.tables[i].name();
  }
  f.exact = to_hex(fnv1a(p.user, fnv1a(p.system, fnv1a(p.meta.task_key))));
  std::uint64_t h = fnv1a(p.meta.context_digest, fnv1a(p.meta.task_key));
  for (const auto& t : p.meta.tables) h = fnv1a(table_invariant_digest(t), h);
  f.invariant = to_hex(h);
  return f;
}

bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

ScriptedModel ScriptedModel::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw ConfigError("bad script " + path.string() + ": " + e.what());
  }
}

ScriptedModel ScriptedModel::from_json(const json& j) {
  ScriptedModel m;
  const auto mode_of = [](const std::string& s) {
    if (s == "permutation_invariant") return true;
    if (s == "exact") return false;
    throw ConfigError("key_mode must be exact or permutation_invariant, got " + s);
  };
  const bool file_invariant = mode_of(j.value("key_mode", "permutation_invariant"));
  for (const auto& e : j.value("entries", json::array())) {
    Entry entry;
    entry.pattern = e.value("match", "*");
    entry.invariant =
        e.contains("key_mode") ? mode_of(e["key_mode"].get<std::string>()) : file_invariant;
    if (e.contains("contains_cell"))
      entry.contains_cell = e["contains_cell"].get<std::string>();
    if (e.contains("contains_text"))
      entry.contains_text = e["contains_text"].get<std::string>();
    if (e.contains("answer")) entry.answers.push_back(e["answer"].get<std::string>());
    if (e.contains("answers"))
      for (const auto& a : e["answers"]) entry.answers.push_back(a.get<std::string>());
    if (entry.answers.empty()) throw ConfigError("script entry without answer");
    m.entries_.push_back(std::move(entry));
  }
  if (j.contains("default") && !j["default"].is_null())
    m.default_ = j["default"].get<std::string>();
  return m;
}

std::string ScriptedModel::answer(const ChatPrompt& p) const {
  const Fingerprint f = fingerprint(p);
  for (const auto& e : entries_) {
    if (!glob_match(e.pattern, f.key(e.invariant))) continue;
    if (e.contains_text && p.user.find(*e.contains_text) == std::string::npos)
      continue;
    if (e.contains_cell) {
      bool found = false;
      for (const auto& t : p.meta.tables) {
        for (const auto& row : t.rows()) {
          for (const auto& cell : row)
            if (!cell.is_null() && cell.render() == *e.contains_cell) {
              found = true;
              break;
            }
          if (found) break;
        }
        if (found) break;
      }
      if (!found) continue;
    }
    if (e.answers.size() == 1) return e.answers.front();
    SplitMix64 g(fnv1a(f.exact));
    return e.answers[static_cast<std::size_t>(g.below(e.answers.size()))];
  }
  if (default_) return *default_;
  throw ScriptMissError("no scripted answer for " + f.key(true) + " / " + f.exact);
}

// ---- client ----------------------------------------------------------------

ModelClient::ModelClient(ClientOptions opts)
    : opts_(opts), in_flight_(std::max(1, std::min(opts.max_in_flight, 1024))) {}

const ScriptedModel& ModelClient::script(const std::filesystem::path& path) {
  std::lock_guard lock(mu_);
  auto it = scripts_.find(path);
  if (it == scripts_.end())
    it = scripts_.emplace(path, std::make_shared<const ScriptedModel>(ScriptedModel::load(path)))
             .first;
  return *it->second;
}

void ModelClient::log(CallRecord r) {
  std::lock_guard lock(mu_);
  log_.push_back(std::move(r));
}

std::vector<CallRecord> ModelClient::call_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::size_t ModelClient::call_count() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

json chat_request_body(const std::string& model, const ChatPrompt& p) {
  json messages = json::array();
  if (!p.system.empty()) messages.push_back({{"role", "system"}, {"content", p.system}});
  messages.push_back({{"role", "user"}, {"content", p.user}});
  json body{{"model", model},
            {"messages", messages},
            {"temperature", p.decode.temperature},
            {"max_tokens", p.decode.max_tokens}};
  if (p.decode.seed) body["seed"] = *p.decode.seed;
  return body;
}

std::string ModelClient::complete_http(const HttpBackend& b, const ChatPrompt& p) {
  const SplitUrl url = split_url(b.base_url);
  const std::string body = chat_request_body(b.model_name, p).dump();
  auto backoff = opts_.backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= opts_.max_attempts; ++attempt) {
    httplib::Client cli(url.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opts_.http_timeout);
    cli.set_connection_timeout(secs.count(), 0);
    cli.set_read_timeout(secs.count(), 0);
    auto res = cli.Post(url.prefix + "/chat/completions", auth_headers(b), body,
                        "application/json");
    if (!res) {
      last_error = "transport: " + httplib::to_string(res.error());
    } else if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
    } else {
      try {
        const json j = json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception& e) {
        last_error = std::string("malformed response: ") + e.what();
      }
    }
    if (attempt < opts_.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw TransportError(b.base_url + ": " + last_error + " after " +
                       std::to_string(opts_.max_attempts) + " attempts");
}

std::string ModelClient::complete(const ModelRef& m, const ChatPrompt& p) {
  if (p.user.empty()) throw std::invalid_argument("prompt user message is empty");
  CallRecord rec;
  rec.model_id = m.id + ":" + m.version_name();
  rec.prompt_digest = fingerprint(p).exact;
  const auto start = std::chrono::steady_clock::now();
  const auto finish = [&](std::string outcome) {
    rec.latency_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    rec.outcome = std::move(outcome);
    log(rec);
  };
  try {
    std::string out;
    if (const auto* s = std::get_if<ScriptedBackend>(&m.backend)) {
      out = script(s->script_path).answer(p);
    } else {
      in_flight_.acquire();
      try {
        out = complete_http(std::get<HttpBackend>(m.backend), p);
      } catch (...) {
        in_flight_.release();
        throw;
      }
      in_flight_.release();
    }
    finish("ok");
    return out;
  } catch (const TransportError&) {
    finish("transport_error");
    throw;
  } catch (const ScriptMissError&) {
    finish("script_miss");
    throw;
  }
}

int batch_size_for(const Hyperparameters& h, std::size_t lines) {
  const double raw = h.batch_fraction * static_cast<double>(lines);
  return std::max(1, static_cast<int>(raw + 0.5));
}

json finetune_request_body(const FineTuneJob& job, std::size_t lines) {
  std::string model;
  if (const auto* h = std::get_if<HttpBackend>(&job.base.backend))
    model = h->model_name;
  else
    model = job.base.id;
  return json{{"model", model},
              {"training_file", job.training_file.string()},
              {"hyperparameters",
               {{"learning_rate_multiplier", job.hyperparameters.lr_multiplier},
                {"batch_size", batch_size_for(job.hyperparameters, lines)},
                {"n_epochs", job.hyperparameters.epochs}}}};
}

FineTuneJob ModelClient::submit_finetune(FineTuneJob job, const FineTuneOptions& opts) {
  if (!std::filesystem::exists(job.training_file))
    throw EmptyTrainingSet("training file does not exist: " + job.training_file.string());
  std::size_t lines = 0;
  {
    std::ifstream in(job.training_file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (!json::accept(line)) {
        job.status = FineTuneFailed{"training file line " + std::to_string(lines + 1) +
                                    " is not valid JSON"};
        return job;
      }
      ++lines;
    }
  }
  if (lines == 0)
    throw EmptyTrainingSet("training file is empty: " + job.training_file.string());

  if (opts.export_only) {
    job.status = FineTuneSucceeded{job.base};
    return job;
  }

  if (const auto* s = std::get_if<ScriptedBackend>(&job.base.backend)) {
    ModelRef next = job.base;
    next.generation = job.target_generation;
    next.id = job.base.id + "-" + next.version_name();
    const auto it = opts.generation_scripts.find(job.target_generation);
    next.backend = ScriptedBackend{it != opts.generation_scripts.end() ? it->second
                                                                       : s->script_path};
    job.job_id = "scripted-" + next.id;
    job.status = FineTuneSucceeded{std::move(next)};
    return job;
  }

  const auto& http = std::get<HttpBackend>(job.base.backend);
  const SplitUrl url = split_url(http.base_url);
  httplib::Client cli(url.origin);
  auto res = cli.Post(url.prefix + "/fine_tuning/jobs", auth_headers(http),
                      finetune_request_body(job, lines).dump(), "application/json");
  if (!res) throw TransportError("fine-tune submit: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    job.status = FineTuneFailed{"submit rejected with HTTP " + std::to_string(res->status) +
                                ": " + res->body};
    return job;
  }
  json submitted;
  try {
    submitted = json::parse(res->body);
    job.job_id = submitted.at("id").get<std::string>();
  } catch (const json::exception& e) {
    job.status = FineTuneFailed{std::string("malformed submit response: ") + e.what()};
    return job;
  }
  job.status = FineTuneRunning{};

  const auto deadline = std::chrono::steady_clock::now() + opts.poll_timeout;
  json state = submitted;
  for (;;) {
    const std::string status = state.value("status", "");
    if (status == "succeeded") {
      ModelRef next;
      next.id = state.value("fine_tuned_model", "");
      if (next.id.empty()) {
        job.status = FineTuneFailed{"succeeded without fine_tuned_model"};
        return job;
      }
      next.backend = HttpBackend{http.base_url, next.id, http.auth_env_var};
      next.generation = job.target_generation;
      job.status = FineTuneSucceeded{std::move(next)};
      return job;
    }
    if (status == "failed" || status == "cancelled") {
      std::string reason = status;
      if (state.contains("error") && !state["error"].is_null()) reason += ": " + state["error"].dump();
      job.status = FineTuneFailed{reason};
      return job;
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      job.status = FineTuneFailed{"timed out waiting for job " + job.job_id};
      return job;
    }
    std::this_thread::sleep_for(opts.poll_interval);
    auto poll = cli.Get(url.prefix + "/fine_tuning/jobs/" + job.job_id, auth_headers(http));
    if (!poll || poll->status != 200) continue;
    try {
      state = json::parse(poll->body);
    } catch (const json::exception&) {
      continue;
    }
  }
}

}  // namespace tabval
