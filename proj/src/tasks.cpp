#include "tabval/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "tabval/errors.hpp"
#include "tabval/rng.hpp"

namespace tabval {

using nlohmann::json;

// ---- kinds -------------------------------------------------------------------

namespace {

std::string family_key(TaskFamily f) {
  switch (f) {
    case TaskFamily::ErrorDetection: return "error_detection";
    case TaskFamily::SchemaMatching: return "schema_matching";
    case TaskFamily::NlToCode: return "nl_to_code";
    case TaskFamily::DataTransformByExample: return "transform_by_example";
  }
  return "unknown";
}

std::string facet_key(Facet f) {
  switch (f) {
    case Facet::Generative: return "generative";
    case Facet::Classification: return "classification";
    case Facet::Brainstorm: return "brainstorm";
  }
  return "unknown";
}

Facet parse_facet(std::string_view s) {
  if (s == "generative") return Facet::Generative;
  if (s == "classification") return Facet::Classification;
  if (s == "brainstorm") return Facet::Brainstorm;
  throw ConfigError("unknown facet " + std::string(s));
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

std::string collapse_ws(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : trim(s)) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      pending = true;
      continue;
    }
    if (pending && !out.empty()) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

std::string language_description(const std::string& lang) {
  if (lang == "sql-subset")
    return "SQL (a single SELECT statement over the table t)";
  if (lang == "table-dsl")
    return "table-dsl (a pipeline of stages such as filter, project, sort_by, "
           "top_by, limit, count, sum, avg, min, max, group_by, separated by |)";
  if (lang.starts_with("external:")) return lang.substr(9);
  return lang;
}

std::string render_examples(const std::vector<ExamplePair>& ex) {
  std::string out;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    if (i) out += "\n";
    out += "- `" + ex[i].input + "` -> `" + ex[i].output + "`";
  }
  return out;
}

}  // namespace

std::string TaskKind::template_key() const {
  return family_key(family) + "." + facet_key(facet);
}

std::string TaskKind::id() const {
  std::string s = template_key();
  if (!language.empty()) s += "." + language;
  return s;
}

std::string family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::ErrorDetection: return "error-detection";
    case TaskFamily::SchemaMatching: return "schema-matching";
    case TaskFamily::NlToCode: return "nl-to-code";
    case TaskFamily::DataTransformByExample: return "transform-by-example";
  }
  return "unknown";
}

TaskFamily parse_family(std::string_view name) {
  const std::string n = lowercase(name);
  if (n == "error-detection" || n == "error_detection") return TaskFamily::ErrorDetection;
  if (n == "schema-matching" || n == "schema_matching") return TaskFamily::SchemaMatching;
  if (n == "nl-to-code" || n == "nl_to_code" || n == "nl2code") return TaskFamily::NlToCode;
  if (n == "transform-by-example" || n == "transform_by_example" ||
      n == "data-transform-by-example")
    return TaskFamily::DataTransformByExample;
  throw ConfigError("unknown task " + std::string(name));
}

bool is_known_language(std::string_view lang) {
  return lang == "sql-subset" || lang == "table-dsl" ||
         (lang.starts_with("external:") && lang.size() > 9);
}

// ---- templates -------------------------------------------------------------

namespace {

TemplateSet make_defaults() {
  TemplateSet s;
  const std::string data_quality =
      "You are a data quality expert who knows the kinds of errors that occur in "
      "real spreadsheet and database columns.";
  const std::string schema =
      "You are a data integration expert who matches columns across tables.";
  const std::string analyst =
      "You are a data analyst who writes precise code over tables.";
  const std::string reviewer =
      "You are a careful code reviewer who checks whether code answers a task over "
      "a table.";

  s.set("error_detection.generative",
        {data_quality,
         "Below is a column named \"{{column}}\" sampled from a real table.\n\n"
         "{{table}}\n\n"
         "Produce a realistic data error (for example a typo, a misspelling, or an "
         "inconsistent value) that could plausibly appear in this column. The value "
         "must not already appear in the column. Answer with a JSON list containing "
         "exactly one string: the erroneous value."});
  s.set("error_detection.classification",
        {data_quality,
         "Below is a column named \"{{column}}\" from a real table.\n\n"
         "{{table}}\n\n"
         "Identify the data errors in this column (typos, misspellings, or values "
         "inconsistent with the rest of the column). Answer with a JSON list of the "
         "erroneous values, or [] if the column has no errors."});
  s.set("schema_matching.generative",
        {schema,
         "Here is Table-A:\n\n"
         "{{table}}\n\n"
         "Create a realistic Table-B from a different source that describes similar "
         "entities, using different column names for related concepts. Then list the "
         "column mappings between Table-A and Table-B. Answer with a JSON object "
         "{\"table_b\": {\"headers\": [...], \"rows\": [[...], ...]}, \"mappings\": "
         "[[\"<Table-A column>\", \"<Table-B column>\"], ...]}."});
  s.set("schema_matching.classification",
        {schema,
         "Here are two tables.\n\n"
         "Table-A:\n\n{{table}}\n\n"
         "Table-B:\n\n{{table_b}}\n\n"
         "Identify the pairs of columns from Table-A and Table-B that refer to the "
         "same concept. Answer with a JSON list of pairs [[\"<Table-A column>\", "
         "\"<Table-B column>\"], ...], or [] if no columns match."});
  s.set("nl_to_code.brainstorm",
        {analyst,
         "Here is a table:\n\n{{table}}\n\n"
         "Brainstorm one question a data analyst might ask about this table that can "
         "be answered by a query over it. Answer with the question only, on a single "
         "line."});
  s.set("nl_to_code.generative",
        {analyst,
         "Here is a table named t:\n\n{{table}}\n\n"
         "Write {{language}} code that answers the question: {{question}}\n\n"
         "Return only the code in a fenced code block."});
  s.set("nl_to_code.classification",
        {reviewer,
         "Here is a table named t:\n\n{{table}}\n\n"
         "Question: {{question}}\n\n"
         "Candidate {{language}} code:\n```\n{{code}}\n```\n\n"
         "Is this code a correct solution to the question? Answer \"yes\" followed "
         "by the code repeated in a fenced code block, or answer \"no\"."});
  s.set("transform_by_example.brainstorm",
        {analyst,
         "Here is a table named t:\n\n{{table}}\n\n"
         "Propose a transformation of this table and give two to four input/output "
         "examples of it. Answer with a JSON list of [\"<input>\", \"<output>\"] "
         "pairs."});
  s.set("transform_by_example.generative",
        {analyst,
         "Here is a table named t:\n\n{{table}}\n\n"
         "Write {{language}} code that performs the transformation shown by these "
         "input/output examples:\n\n{{examples}}\n\n"
         "Return only the code in a fenced code block."});
  s.set("transform_by_example.classification",
        {reviewer,
         "Here is a table named t:\n\n{{table}}\n\n"
         "Input/output examples:\n\n{{examples}}\n\n"
         "Candidate {{language}} code:\n```\n{{code}}\n```\n\n"
         "Is this code a correct solution for these examples? Answer \"yes\" "
         "followed by the code repeated in a fenced code block, or answer \"no\"."});
  return s;
}

const std::set<std::string>& placeholder_names() {
  static const std::set<std::string> names{"table",    "table_b", "column",  "question",
                                           "examples", "code",    "language"};
  return names;
}

}  // namespace

const TemplateSet& TemplateSet::defaults() {
  static const TemplateSet s = make_defaults();
  return s;
}

void TemplateSet::set(std::string key, PromptTemplate t) {
  templates_[std::move(key)] = std::move(t);
}

const PromptTemplate& TemplateSet::get(const std::string& key) const {
  const auto it = templates_.find(key);
  if (it == templates_.end()) throw ConfigError("no prompt template for " + key);
  return it->second;
}

PromptTemplate parse_template_file(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line, system, user;
  bool in_user = false;
  while (std::getline(in, line)) {
    if (!in_user && trim(line) == "---") {
      in_user = true;
      continue;
    }
    std::string& dst = in_user ? user : system;
    if (!dst.empty()) dst += "\n";
    dst += line;
  }
  if (!in_user) throw ConfigError("template file has no '---' separator line");
  return {trim(system), trim(user)};
}

std::string format_template_file(const PromptTemplate& t) {
  return t.system + "\n---\n" + t.user + "\n";
}

TemplateSet TemplateSet::load_dir(const std::filesystem::path& dir) {
  TemplateSet s = defaults();
  for (const auto& [key, _] : defaults().all()) {
    const auto path = dir / (key + ".txt");
    if (!std::filesystem::exists(path)) continue;
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    PromptTemplate t = parse_template_file(ss.str());
    fill_template(t.user, {});  // validates placeholder names
    s.set(key, std::move(t));
  }
  return s;
}

std::string fill_template(std::string_view text, const std::map<std::string, std::string>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto open = text.find("{{", i);
    if (open == std::string_view::npos) {
      out.append(text.substr(i));
      break;
    }
    const auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos)
      throw std::invalid_argument("unterminated placeholder in template");
    out.append(text.substr(i, open - i));
    const std::string name(text.substr(open + 2, close - open - 2));
    if (!placeholder_names().contains(name))
      throw std::invalid_argument("unknown template placeholder {{" + name + "}}");
    if (const auto it = vars.find(name); it != vars.end()) out += it->second;
    i = close + 2;
  }
  return out;
}

// ---- completions -------------------------------------------------------------

namespace {

json pairs_json(const std::set<ColumnPair>& pairs) {
  json arr = json::array();
  for (const auto& [a, b] : pairs) arr.push_back(json::array({a, b}));
  return arr;
}

std::string fence(const Code& c) {
  return "```" + c.language + "\n" + c.source + "\n```";
}

// Positions of balanced top-level JSON values starting with `open`, scanning
// left to right and honouring string literals. Returns the last span that
// parses.
std::optional<json> last_json_value(std::string_view s, char open) {
  const char close = open == '[' ? ']' : '}';
  std::optional<json> found;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != open) {
      ++i;
      continue;
    }
    int depth = 0;
    bool in_str = false, esc = false;
    std::size_t end = std::string_view::npos;
    for (std::size_t k = i; k < s.size(); ++k) {
      const char c = s[k];
      if (in_str) {
        if (esc) esc = false;
        else if (c == '\\') esc = true;
        else if (c == '"') in_str = false;
        continue;
      }
      if (c == '"') in_str = true;
      else if (c == '[' || c == '{') ++depth;
      else if (c == ']' || c == '}') {
        if (--depth == 0) {
          if (c == close) end = k;
          break;
        }
      }
    }
    if (end != std::string_view::npos) {
      json j = json::parse(s.substr(i, end - i + 1), nullptr, false);
      if (!j.is_discarded()) {
        found = std::move(j);
        i = end + 1;
        continue;
      }
    }
    ++i;
  }
  return found;
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.dump();
  throw UnparseableCompletion("expected a string value, got " + v.dump());
}

std::set<ColumnPair> parse_pairs(const json& arr) {
  if (!arr.is_array()) throw UnparseableCompletion("mappings must be a JSON list");
  std::set<ColumnPair> out;
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2)
      throw UnparseableCompletion("mapping must be a two-element list: " + p.dump());
    out.emplace(trim(scalar_text(p[0])), trim(scalar_text(p[1])));
  }
  return out;
}

std::optional<std::string> last_fenced_block(std::string_view s) {
  std::vector<std::size_t> fences;
  std::size_t pos = 0;
  while ((pos = s.find("```", pos)) != std::string_view::npos) {
    fences.push_back(pos);
    pos += 3;
  }
  if (fences.size() < 2) return std::nullopt;
  const std::size_t pairs = fences.size() / 2;
  const std::size_t open = fences[2 * pairs - 2], close = fences[2 * pairs - 1];
  std::size_t body = s.find('\n', open);
  if (body == std::string_view::npos || body > close) body = open + 3;
  else ++body;
  return trim(s.substr(body, close - body));
}

}  // namespace

std::string render_completion(const Completion& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ErrorSet>) {
          json arr = json::array();
          for (const auto& s : v.values) arr.push_back(s);
          return arr.dump();
        } else if constexpr (std::is_same_v<T, MappingList>) {
          return pairs_json(v.pairs).dump();
        } else if constexpr (std::is_same_v<T, Code>) {
          return fence(v);
        } else if constexpr (std::is_same_v<T, GeneratedTableWithMappings>) {
          json t = table_to_json(v.table);
          t.erase("name");
          return json{{"table_b", t}, {"mappings", pairs_json(v.pairs)}}.dump();
        } else if constexpr (std::is_same_v<T, Question>) {
          return v.text;
        } else {
          return v.accept ? "yes\n" + fence(v.code) : std::string("no");
        }
      },
      c);
}

Completion parse_completion(const TaskKind& kind, std::string_view raw) {
  const std::string text = trim(raw);
  switch (kind.family) {
    case TaskFamily::ErrorDetection: {
      ErrorSet out;
      const auto arr = last_json_value(text, '[');
      if (!arr) {
        const std::string low = lowercase(text);
        if (kind.facet == Facet::Classification &&
            (low.find("no error") != std::string::npos || low == "none"))
          return out;
        throw UnparseableCompletion("no JSON list in answer");
      }
      for (const auto& v : *arr) {
        std::string s = trim(scalar_text(v));
        if (!s.empty()) out.values.insert(std::move(s));
      }
      if (kind.facet == Facet::Generative && out.values.size() != 1)
        throw UnparseableCompletion("generative error detection must produce exactly one value");
      return out;
    }
    case TaskFamily::SchemaMatching: {
      if (kind.facet == Facet::Generative) {
        const auto obj = last_json_value(text, '{');
        if (!obj || !obj->contains("table_b") || !obj->contains("mappings"))
          throw UnparseableCompletion("expected a JSON object with table_b and mappings");
        GeneratedTableWithMappings out;
        try {
          out.table = table_from_json((*obj)["table_b"], "table_b");
        } catch (const std::exception& e) {
          throw UnparseableCompletion(std::string("bad table_b: ") + e.what());
        }
        if (out.table.num_cols() == 0) throw UnparseableCompletion("table_b has no columns");
        out.pairs = parse_pairs((*obj)["mappings"]);
        return out;
      }
      const auto arr = last_json_value(text, '[');
      if (!arr) throw UnparseableCompletion("no JSON list in answer");
      // A bare [] has no pairs; a list of pairs parses as such.
      return MappingList{parse_pairs(*arr)};
    }
    case TaskFamily::NlToCode:
    case TaskFamily::DataTransformByExample: {
      if (kind.facet == Facet::Classification) {
        std::string word;
        for (char c : text) {
          if (std::isalpha(static_cast<unsigned char>(c))) word.push_back(c);
          else break;
        }
        word = lowercase(word);
        if (word != "yes" && word != "no")
          throw UnparseableCompletion("verifier answer must start with yes or no");
        Verdict v;
        v.accept = word == "yes";
        v.code.language = kind.language;
        if (v.accept)
          if (auto block = last_fenced_block(text)) v.code.source = *block;
        return v;
      }
      const auto block = last_fenced_block(text);
      if (!block || block->empty()) throw UnparseableCompletion("no fenced code block");
      return Code{kind.language, *block};
    }
  }
  throw UnparseableCompletion("unsupported task kind");
}

bool completions_equal(const Completion& a, const Completion& b) {
  if (a.index() != b.index()) throw VariantMismatch("comparing different completion variants");
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const auto& y = std::get<T>(b);
        if constexpr (std::is_same_v<T, ErrorSet>) {
          std::set<std::string> p, q;
          for (const auto& s : x.values) p.insert(trim(s));
          for (const auto& s : y.values) q.insert(trim(s));
          return p == q;
        } else if constexpr (std::is_same_v<T, MappingList>) {
          return x.pairs == y.pairs;
        } else if constexpr (std::is_same_v<T, Code>) {
          return x.language == y.language && x.source == y.source;
        } else if constexpr (std::is_same_v<T, GeneratedTableWithMappings>) {
          return x.pairs == y.pairs && tables_semantically_equal(x.table, y.table, false);
        } else if constexpr (std::is_same_v<T, Question>) {
          return lowercase(collapse_ws(x.text)) == lowercase(collapse_ws(y.text));
        } else {
          return x.accept == y.accept && trim(x.code.source) == trim(y.code.source);
        }
      },
      a);
}

// ---- instances ---------------------------------------------------------------

namespace {

std::string context_digest(const TaskContext& c) {
  std::uint64_t h = fnv1a("ctx");
  if (c.question) h = fnv1a(*c.question, fnv1a("q", h));
  for (const auto& e : c.examples) h = fnv1a(e.output, fnv1a(e.input, fnv1a("e", h)));
  if (c.code) h = fnv1a(c.code->source, fnv1a(c.code->language, fnv1a("c", h)));
  return to_hex(h);
}

void require_tables(const TaskInstance& t, std::size_t n) {
  if (t.tables.size() != n)
    throw std::invalid_argument(t.kind.id() + " needs exactly " + std::to_string(n) +
                                " table(s)");
}

// Column index chosen for error detection: prefer mostly-text columns.
std::size_t pick_error_column(const Table& r, SplitMix64& rng) {
  std::vector<std::size_t> textual, nonempty;
  for (std::size_t c = 0; c < r.num_cols(); ++c) {
    std::size_t text = 0, num = 0;
    for (const auto& row : r.rows()) {
      if (row[c].is_text() && !trim(row[c].as_text()).empty()) ++text;
      else if (row[c].is_number()) ++num;
    }
    if (text + num == 0) continue;
    nonempty.push_back(c);
    if (text > num) textual.push_back(c);
  }
  const auto& pool = textual.empty() ? nonempty : textual;
  if (pool.empty()) throw EmptyTable();
  return pool[static_cast<std::size_t>(rng.below(pool.size()))];
}

Table error_detection_column(const Table& r, std::uint64_t seed) {
  SplitMix64 rng(derive_seed(seed, "column"));
  const std::size_t c = pick_error_column(r, rng);
  std::vector<Row> rows;
  for (const auto& row : r.rows())
    if (!row[c].is_null()) rows.push_back({row[c]});
  Table col(r.name(), {r.headers()[c]}, std::move(rows));
  const std::size_t n = col.num_rows();
  const std::size_t lo = std::min<std::size_t>(n, 8), hi = std::min<std::size_t>(n, 20);
  const std::size_t k = lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
  return sample_rows(col, std::max<std::size_t>(k, 1), derive_seed(seed, "rows"));
}

Table shuffle_columns(const Table& t, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return t.select_columns(shuffled_indices(t.num_cols(), rng));
}

}  // namespace

TaskInstance render_task(TaskInstance t, const TemplateSet& templates) {
  const PromptTemplate& tpl = templates.get(t.kind.template_key());
  std::map<std::string, std::string> vars;
  if (!t.tables.empty()) {
    vars["table"] = render_table_for_prompt(t.tables[0]);
    if (t.tables[0].num_cols() > 0) vars["column"] = t.tables[0].headers()[0];
  }
  if (t.tables.size() > 1) vars["table_b"] = render_table_for_prompt(t.tables[1]);
  if (t.context.question) vars["question"] = *t.context.question;
  vars["examples"] = render_examples(t.context.examples);
  if (t.context.code) vars["code"] = t.context.code->source;
  vars["language"] = language_description(t.kind.language);
  t.system = tpl.system;
  t.instruction = fill_template(tpl.user, vars);
  return t;
}

TaskInstance with_tables(const TaskInstance& t, std::vector<Table> tables,
                         const TemplateSet& templates) {
  TaskInstance out = t;
  out.tables = std::move(tables);
  return render_task(std::move(out), templates);
}

TaskInstance retarget_language(const TaskInstance& t, std::string language,
                               const TemplateSet& templates) {
  if (!t.kind.is_code()) throw UnsupportedKind("only code tasks have a target language");
  if (!is_known_language(language)) throw UnsupportedKind("unknown language " + language);
  TaskInstance out = t;
  out.kind.language = std::move(language);
  out.expected.reset();
  return render_task(std::move(out), templates);
}

TaskInstance instantiate_brainstorm(TaskFamily family, const Table& r, std::uint64_t seed,
                                    const TemplateSet& templates) {
  if (family != TaskFamily::NlToCode && family != TaskFamily::DataTransformByExample)
    throw UnsupportedKind("brainstorm prompts exist only for code tasks");
  if (r.empty()) throw EmptyTable();
  TaskInstance t;
  t.kind = {family, Facet::Brainstorm, ""};
  t.tables = {r};
  t.seed = seed;
  return render_task(std::move(t), templates);
}

TaskContext parse_brainstorm(TaskFamily family, std::string_view raw) {
  TaskContext ctx;
  if (family == TaskFamily::NlToCode) {
    std::istringstream in{std::string(trim(raw))};
    std::string line;
    while (std::getline(in, line)) {
      line = trim(line);
      if (line.empty()) continue;
      if (lowercase(line).starts_with("question:")) line = trim(line.substr(9));
      if (line.size() >= 2 && line.front() == '"' && line.back() == '"')
        line = line.substr(1, line.size() - 2);
      if (!line.empty()) {
        ctx.question = line;
        return ctx;
      }
    }
    throw UnparseableCompletion("empty brainstormed question");
  }
  if (family == TaskFamily::DataTransformByExample) {
    const auto arr = last_json_value(raw, '[');
    if (!arr) throw UnparseableCompletion("no JSON list of examples");
    for (const auto& p : *arr) {
      if (!p.is_array() || p.size() != 2)
        throw UnparseableCompletion("example must be an [input, output] pair");
      ctx.examples.push_back({scalar_text(p[0]), scalar_text(p[1])});
    }
    if (ctx.examples.empty()) throw UnparseableCompletion("no examples");
    return ctx;
  }
  throw UnsupportedKind("brainstorm prompts exist only for code tasks");
}

TaskInstance instantiate_generative(const TaskKind& kind, const Table& r, std::uint64_t seed,
                                    TaskContext context, const TemplateSet& templates) {
  if (r.empty()) throw EmptyTable();
  TaskInstance t;
  t.kind = kind.with_facet(Facet::Generative);
  t.seed = seed;
  switch (kind.family) {
    case TaskFamily::ErrorDetection:
      t.kind.language.clear();
      t.tables = {error_detection_column(r, seed)};
      break;
    case TaskFamily::SchemaMatching:
      t.kind.language.clear();
      t.tables = {r};
      break;
    case TaskFamily::NlToCode:
      if (!context.question || trim(*context.question).empty())
        throw MissingContext("NL-to-code task needs a question");
      [[fallthrough]];
    case TaskFamily::DataTransformByExample:
      if (kind.family == TaskFamily::DataTransformByExample && context.examples.empty())
        throw MissingContext("transform-by-example task needs examples");
      if (!is_known_language(kind.language))
        throw UnsupportedKind("unknown target language '" + kind.language + "'");
      t.tables = {r};
      context.code.reset();
      t.context = std::move(context);
      break;
  }
  return render_task(std::move(t), templates);
}

TaskInstance apply_dual_transform(const TaskInstance& gen, const Completion& c,
                                  const TemplateSet& templates) {
  if (gen.kind.facet != Facet::Generative)
    throw VariantMismatch("dual transform needs a generative instance");
  TaskInstance out;
  out.kind = gen.kind.with_facet(Facet::Classification);
  out.seed = gen.seed;
  out.context = gen.context;
  switch (gen.kind.family) {
    case TaskFamily::ErrorDetection: {
      const auto* errors = std::get_if<ErrorSet>(&c);
      if (!errors || errors->values.size() != 1)
        throw VariantMismatch("error detection dual needs a single-value ErrorSet");
      require_tables(gen, 1);
      const Table& col = gen.tables[0];
      SplitMix64 rng(derive_seed(gen.seed, "insert"));
      const auto pos = static_cast<std::size_t>(rng.below(col.num_rows() + 1));
      std::vector<Row> rows = col.rows();
      rows.insert(rows.begin() + static_cast<std::ptrdiff_t>(pos),
                  Row{CellValue::parse(*errors->values.begin())});
      out.tables = {Table(col.name(), col.headers(), std::move(rows))};
      out.expected = *errors;
      break;
    }
    case TaskFamily::SchemaMatching: {
      const auto* gt = std::get_if<GeneratedTableWithMappings>(&c);
      if (!gt) throw VariantMismatch("schema matching dual needs GeneratedTableWithMappings");
      require_tables(gen, 1);
      Table a = shuffle_columns(gen.tables[0], derive_seed(gen.seed, "shuffle-a"));
      Table b = shuffle_columns(gt->table, derive_seed(gen.seed, "shuffle-b"));
      out.tables = {std::move(a), std::move(b).renamed(gt->table.name().empty()
                                                           ? std::string("table_b")
                                                           : gt->table.name())};
      out.expected = MappingList{gt->pairs};
      break;
    }
    case TaskFamily::NlToCode:
    case TaskFamily::DataTransformByExample: {
      const auto* code = std::get_if<Code>(&c);
      if (!code) throw VariantMismatch("code task dual needs a Code completion");
      require_tables(gen, 1);
      out.tables = gen.tables;
      out.context.code = *code;
      out.expected = Verdict{true, *code};
      break;
    }
  }
  return render_task(std::move(out), templates);
}

NegativeInstance sample_negative_instance(const TaskKind& kind, const Table& r,
                                          std::uint64_t seed, const Table* other,
                                          const TemplateSet& templates) {
  TaskInstance t;
  t.kind = kind.with_facet(Facet::Classification);
  t.seed = seed;
  switch (kind.family) {
    case TaskFamily::ErrorDetection: {
      if (r.empty()) throw EmptyTable();
      t.tables = {error_detection_column(r, seed)};
      t.expected = ErrorSet{};
      break;
    }
    case TaskFamily::SchemaMatching: {
      if (!other) throw MissingContext("schema matching negatives need an unrelated table");
      if (r.empty() || other->empty()) throw EmptyTable();
      t.tables = {shuffle_columns(r, derive_seed(seed, "shuffle-a")),
                  shuffle_columns(*other, derive_seed(seed, "shuffle-b"))};
      t.expected = MappingList{};
      break;
    }
    default:
      throw UnsupportedKind("negative instances are not defined for " +
                            family_name(kind.family));
  }
  t.kind.language.clear();
  Completion expected = *t.expected;
  return {render_task(std::move(t), templates), std::move(expected)};
}

std::string task_digest(const TaskInstance& t) {
  return to_hex(fnv1a(t.instruction, fnv1a(t.system, fnv1a(t.kind.id()))));
}

ChatPrompt make_prompt(const TaskInstance& t, double temperature,
                       std::optional<std::uint64_t> seed) {
  ChatPrompt p;
  p.system = t.system;
  p.user = t.instruction;
  p.decode.temperature = temperature;
  p.decode.seed = seed;
  p.meta.task_key = t.kind.id();
  p.meta.tables = t.tables;
  p.meta.context_digest = context_digest(t.context);
  return p;
}

// ---- JSON ------------------------------------------------------------------

json table_to_json(const Table& t) {
  json rows = json::array();
  for (const auto& row : t.rows()) {
    json r = json::array();
    for (const auto& c : row) r.push_back(c.is_null() ? json(nullptr) : json(c.render()));
    rows.push_back(std::move(r));
  }
  return json{{"name", t.name()}, {"headers", t.headers()}, {"rows", std::move(rows)}};
}

Table table_from_json(const json& j, std::string name) {
  if (!j.is_object()) throw std::invalid_argument("table must be a JSON object");
  std::vector<std::string> headers;
  for (const auto& h : j.at("headers")) headers.push_back(scalar_text(h));
  std::vector<Row> rows;
  for (const auto& r : j.value("rows", json::array())) {
    if (!r.is_array()) throw std::invalid_argument("table row must be a list");
    Row row;
    for (const auto& c : r) {
      if (c.is_null()) row.push_back(CellValue::null());
      else if (c.is_string()) row.push_back(CellValue::parse(c.get<std::string>()));
      else if (c.is_number()) row.push_back(CellValue::parse(c.dump()));
      else if (c.is_boolean()) row.push_back(CellValue::text(c.get<bool>() ? "true" : "false"));
      else throw std::invalid_argument("unsupported cell " + c.dump());
    }
    rows.push_back(std::move(row));
  }
  if (name.empty()) name = j.value("name", "");
  return Table(std::move(name), std::move(headers), std::move(rows));
}

json kind_to_json(const TaskKind& k) {
  json j{{"family", family_name(k.family)}, {"facet", facet_key(k.facet)}};
  if (!k.language.empty()) j["language"] = k.language;
  return j;
}

TaskKind kind_from_json(const json& j) {
  return {parse_family(j.at("family").get<std::string>()),
          parse_facet(j.at("facet").get<std::string>()), j.value("language", "")};
}

json task_to_json(const TaskInstance& t) {
  json tables = json::array();
  for (const auto& tb : t.tables) tables.push_back(table_to_json(tb));
  json ctx = json::object();
  if (t.context.question) ctx["question"] = *t.context.question;
  if (!t.context.examples.empty()) {
    json ex = json::array();
    for (const auto& e : t.context.examples) ex.push_back(json::array({e.input, e.output}));
    ctx["examples"] = ex;
  }
  if (t.context.code)
    ctx["code"] = {{"language", t.context.code->language}, {"source", t.context.code->source}};
  return json{{"kind", kind_to_json(t.kind)},
              {"tables", tables},
              {"context", ctx},
              {"expected", t.expected ? json(render_completion(*t.expected)) : json(nullptr)},
              {"seed", t.seed}};
}

TaskInstance task_from_json(const json& j) {
  TaskInstance t;
  t.kind = kind_from_json(j.at("kind"));
  for (const auto& tb : j.at("tables")) t.tables.push_back(table_from_json(tb));
  const json& ctx = j.value("context", json::object());
  if (ctx.contains("question")) t.context.question = ctx["question"].get<std::string>();
  if (ctx.contains("examples"))
    for (const auto& e : ctx["examples"])
      t.context.examples.push_back({e.at(0).get<std::string>(), e.at(1).get<std::string>()});
  if (ctx.contains("code"))
    t.context.code = Code{ctx["code"].at("language").get<std::string>(),
                          ctx["code"].at("source").get<std::string>()};
  if (j.contains("expected") && j["expected"].is_string())
    t.expected = parse_completion(t.kind, j["expected"].get<std::string>());
  t.seed = j.value("seed", std::uint64_t{0});
  return render_task(std::move(t));
}

}  // namespace tabval
