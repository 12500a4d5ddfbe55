#include <map>

#include "exec_common.hpp"
#include "tabval/executors.hpp"

namespace tabval {

namespace {

using namespace detail;

std::string lower_agg(AggFn fn) {
  std::string s = agg_name(fn);
  for (auto& c : s) c = static_cast<char>(c - 'A' + 'a');
  return s;
}

struct Stage {
  enum class Op { Filter, Project, SortBy, TopBy, Limit, Agg, GroupBy } op = Op::Filter;
  std::vector<std::string> cols;
  CmpOp cmp = CmpOp::Eq;
  CellValue literal;
  bool desc = false;
  std::size_t n = 0;
  AggFn fn = AggFn::Count;
  bool count_rows = false;  // count() with no column
  std::string agg_col;
};

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  std::vector<Stage> parse() {
    std::vector<Stage> stages;
    if (peek().kind == Tok::End) parse_fail("empty pipeline");
    do {
      stages.push_back(stage());
    } while (accept("|"));
    if (peek().kind != Tok::End) parse_fail("unexpected '" + peek().text + "'");
    return stages;
  }

 private:
  const Token& peek() const { return toks_[std::min(pos_, toks_.size() - 1)]; }
  const Token& next() {
    const Token& t = peek();
    if (pos_ < toks_.size() - 1) ++pos_;
    return t;
  }
  bool accept(std::string_view sym) {
    if (peek().kind != Tok::Symbol || peek().text != sym) return false;
    next();
    return true;
  }
  void expect(std::string_view sym) {
    if (!accept(sym)) parse_fail("expected '" + std::string(sym) + "' near '" + peek().text + "'");
  }
  std::string column() {
    const Token& t = next();
    if (t.kind == Tok::Ident || t.kind == Tok::QuotedIdent) return t.text;
    parse_fail("expected a column name near '" + t.text + "'");
  }
  std::size_t count_literal() {
    const Token& t = next();
    if (t.kind != Tok::Number || t.text.find_first_of(".-") != std::string::npos)
      parse_fail("expected a non-negative integer near '" + t.text + "'");
    return std::stoull(t.text);
  }

  void agg_call(Stage& s, AggFn fn) {
    s.fn = fn;
    expect("(");
    if (fn == AggFn::Count && accept(")")) {
      s.count_rows = true;
      return;
    }
    s.agg_col = column();
    expect(")");
  }

  Stage stage() {
    const Token& name = next();
    if (name.kind != Tok::Ident) parse_fail("expected a stage name near '" + name.text + "'");
    Stage s;
    const std::string& n = name.text;
    if (n == "filter") {
      s.op = Stage::Op::Filter;
      expect("(");
      s.cols.push_back(column());
      const Token& op = next();
      const auto cmp = op.kind == Tok::Symbol ? parse_cmp(op.text) : std::nullopt;
      if (!cmp) parse_fail("expected a comparison operator near '" + op.text + "'");
      s.cmp = *cmp;
      const Token& lit = next();
      if (lit.kind == Tok::Number) s.literal = number_literal(lit.text);
      else if (lit.kind == Tok::String) s.literal = CellValue::text(lit.text);
      else parse_fail("expected a literal near '" + lit.text + "'");
      expect(")");
    } else if (n == "project") {
      s.op = Stage::Op::Project;
      expect("(");
      do {
        s.cols.push_back(column());
      } while (accept(","));
      expect(")");
    } else if (n == "sort_by") {
      s.op = Stage::Op::SortBy;
      expect("(");
      s.cols.push_back(column());
      if (keyword_is(peek(), "desc")) {
        next();
        s.desc = true;
      } else if (keyword_is(peek(), "asc")) {
        next();
      }
      expect(")");
    } else if (n == "top_by") {
      s.op = Stage::Op::TopBy;
      expect("(");
      s.cols.push_back(column());
      expect(")");
    } else if (n == "limit") {
      s.op = Stage::Op::Limit;
      expect("(");
      s.n = count_literal();
      expect(")");
    } else if (n == "group_by") {
      s.op = Stage::Op::GroupBy;
      expect("(");
      s.cols.push_back(column());
      expect(";");
      const Token& fn = next();
      const auto agg = fn.kind == Tok::Ident ? parse_agg(fn.text) : std::nullopt;
      if (!agg) parse_fail("expected an aggregate near '" + fn.text + "'");
      agg_call(s, *agg);
      expect(")");
    } else if (const auto agg = parse_agg(n); agg && n == lower_agg(*agg)) {
      s.op = Stage::Op::Agg;
      agg_call(s, *agg);
    } else {
      parse_fail("unknown stage '" + n + "'");
    }
    return s;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

CellValue run_agg(const Stage& s, const std::vector<const Row*>& rows, std::size_t col) {
  if (s.count_rows) return CellValue::number(static_cast<double>(rows.size()), 0);
  std::vector<CellValue> vals;
  vals.reserve(rows.size());
  for (const Row* r : rows) vals.push_back((*r)[col]);
  return aggregate(s.fn, false, vals);
}

ExecResult run_pipeline(const std::vector<Stage>& stages, const Table& input,
                        const ExecLimits& limits) {
  const Deadline deadline(limits.timeout);
  std::vector<std::string> headers = input.headers();
  std::vector<Row> rows = input.rows();
  std::optional<CellValue> scalar;
  bool ordered = false;
  const auto resolve = [&](const std::string& name) {
    return resolve_column(Table("cur", headers, {}), name);
  };

  for (const auto& s : stages) {
    check(deadline);
    if (scalar) runtime_fail("stage applied to a scalar result");
    switch (s.op) {
      case Stage::Op::Filter: {
        const std::size_t c = resolve(s.cols[0]);
        std::vector<Row> kept;
        for (auto& r : rows) {
          check(deadline);
          if (compare(r[c], s.cmp, s.literal) == Truth::True) kept.push_back(std::move(r));
        }
        rows = std::move(kept);
        break;
      }
      case Stage::Op::Project: {
        std::vector<std::size_t> idx;
        std::vector<std::string> nh;
        for (const auto& name : s.cols) {
          idx.push_back(resolve(name));
          nh.push_back(headers[idx.back()]);
        }
        for (auto& r : rows) {
          Row nr;
          for (auto i : idx) nr.push_back(r[i]);
          r = std::move(nr);
        }
        headers = std::move(nh);
        break;
      }
      case Stage::Op::SortBy:
        stable_sort_rows(rows, resolve(s.cols[0]), s.desc, deadline);
        ordered = true;
        break;
      case Stage::Op::TopBy:
        stable_sort_rows(rows, resolve(s.cols[0]), true, deadline);
        if (rows.size() > 1) rows.resize(1);
        ordered = true;
        break;
      case Stage::Op::Limit:
        if (rows.size() > s.n) rows.resize(s.n);
        break;
      case Stage::Op::Agg: {
        const std::size_t c = s.count_rows ? 0 : resolve(s.agg_col);
        std::vector<const Row*> all;
        for (const auto& r : rows) all.push_back(&r);
        scalar = run_agg(s, all, c);
        break;
      }
      case Stage::Op::GroupBy: {
        const std::size_t key = resolve(s.cols[0]);
        const std::size_t c = s.count_rows ? 0 : resolve(s.agg_col);
        std::vector<std::vector<const Row*>> groups;
        std::map<std::string, std::size_t> index;
        for (const auto& r : rows) {
          check(deadline);
          auto [it, inserted] = index.emplace(cell_key(r[key]), groups.size());
          if (inserted) groups.emplace_back();
          groups[it->second].push_back(&r);
        }
        std::vector<Row> out;
        for (const auto& g : groups) out.push_back({(*g.front())[key], run_agg(s, g, c)});
        headers = {headers[key], lower_agg(s.fn) + "(" + (s.count_rows ? "" : headers[c]) + ")"};
        rows = std::move(out);
        break;
      }
    }
  }
  if (scalar) return Scalar{*scalar};
  return finish_result(Table("result", std::move(headers), std::move(rows)), ordered, limits);
}

}  // namespace

ExecResult execute_table_dsl(std::string_view source, const Table& r, const ExecLimits& limits) {
  try {
    Parser p(lex(source, LexOptions{false, false}));
    return run_pipeline(p.parse(), r, limits);
  } catch (const ExecFailure& f) {
    return ExecError{f.phase, f.message};
  } catch (const std::exception& e) {
    return ExecError{ExecPhase::Runtime, e.what()};
  }
}

}  // namespace tabval
