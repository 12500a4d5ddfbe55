#include <map>
#include <memory>
#include <variant>

#include "exec_common.hpp"
#include "tabval/executors.hpp"

namespace tabval {

namespace {

using namespace detail;

struct ColumnRef {
  std::string name;
};

struct AggExpr {
  AggFn fn = AggFn::Count;
  bool distinct = false;
  bool star = false;  // COUNT(*)
  std::string column;
};

using Term = std::variant<ColumnRef, AggExpr>;

struct SelectItem {
  Term term;
  std::string label;
};

using Operand = std::variant<ColumnRef, CellValue>;

struct Condition {
  enum class Kind { Compare, And, Or, Not } kind = Kind::Compare;
  Operand lhs, rhs;
  CmpOp op = CmpOp::Eq;
  std::vector<std::unique_ptr<Condition>> children;
};

struct OrderBy {
  Term term;
  bool desc = false;
};

struct Query {
  bool star = false;
  std::vector<SelectItem> items;
  std::unique_ptr<Condition> where;
  std::vector<std::string> group_by;
  std::optional<OrderBy> order;
  std::optional<std::size_t> limit;
};

bool is_reserved(const Token& t) {
  static constexpr std::string_view kw[] = {"select", "from", "where", "group", "by",
                                            "order",  "asc",  "desc",  "limit", "and",
                                            "or",     "not",  "as",    "distinct"};
  for (auto k : kw)
    if (keyword_is(t, k)) return true;
  return false;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  Query parse() {
    Query q;
    expect_kw("SELECT");
    if (peek_sym("*")) {
      next();
      q.star = true;
    } else {
      do {
        q.items.push_back(select_item());
      } while (accept_sym(","));
    }
    expect_kw("FROM");
    const Token& from = next();
    if (!((from.kind == Tok::Ident || from.kind == Tok::QuotedIdent) &&
          (from.text == "t" || from.text == "T")))
      parse_fail("FROM must name the input table t, got '" + from.text + "'");
    if (accept_kw("WHERE")) q.where = condition();
    if (accept_kw("GROUP")) {
      expect_kw("BY");
      do {
        q.group_by.push_back(column_name());
      } while (accept_sym(","));
    }
    if (accept_kw("ORDER")) {
      expect_kw("BY");
      OrderBy ob{term(), false};
      // An output label (alias) names its select item.
      if (const auto* c = std::get_if<ColumnRef>(&ob.term))
        for (const auto& item : q.items)
          if (item.label == c->name) {
            ob.term = item.term;
            break;
          }
      if (accept_kw("DESC")) ob.desc = true;
      else accept_kw("ASC");
      q.order = std::move(ob);
    }
    if (accept_kw("LIMIT")) {
      const Token& n = next();
      if (n.kind != Tok::Number || n.text.find_first_of(".-") != std::string::npos)
        parse_fail("LIMIT needs a non-negative integer");
      q.limit = std::stoull(n.text);
    }
    accept_sym(";");
    if (peek().kind != Tok::End) parse_fail("unexpected '" + peek().text + "' after query");
    return q;
  }

 private:
  const Token& peek(std::size_t k = 0) const {
    return toks_[std::min(pos_ + k, toks_.size() - 1)];
  }
  const Token& next() {
    const Token& t = peek();
    if (pos_ < toks_.size() - 1) ++pos_;
    return t;
  }
  bool peek_sym(std::string_view s) const {
    return peek().kind == Tok::Symbol && peek().text == s;
  }
  bool accept_sym(std::string_view s) {
    if (!peek_sym(s)) return false;
    next();
    return true;
  }
  void expect_sym(std::string_view s) {
    if (!accept_sym(s))
      parse_fail("expected '" + std::string(s) + "' near '" + peek().text + "'");
  }
  bool accept_kw(std::string_view kw) {
    if (!keyword_is(peek(), kw)) return false;
    next();
    return true;
  }
  void expect_kw(std::string_view kw) {
    if (!accept_kw(kw))
      parse_fail("expected " + std::string(kw) + " near '" + peek().text + "'");
  }

  std::string column_name() {
    const Token& t = next();
    if (t.kind == Tok::QuotedIdent) return t.text;
    if (t.kind == Tok::Ident && !is_reserved(t)) return t.text;
    parse_fail("expected a column name near '" + t.text + "'");
  }

  Term term() {
    if (peek().kind == Tok::Ident && peek(1).kind == Tok::Symbol && peek(1).text == "(") {
      const auto fn = parse_agg(peek().text);
      if (!fn) parse_fail("unknown function " + peek().text);
      next();
      next();
      AggExpr agg;
      agg.fn = *fn;
      if (peek_sym("*")) {
        if (agg.fn != AggFn::Count) parse_fail("only COUNT accepts *");
        next();
        agg.star = true;
      } else {
        agg.distinct = accept_kw("DISTINCT");
        agg.column = column_name();
      }
      expect_sym(")");
      return agg;
    }
    return ColumnRef{column_name()};
  }

  SelectItem select_item() {
    SelectItem item{term(), {}};
    if (const auto* c = std::get_if<ColumnRef>(&item.term)) {
      item.label = c->name;
    } else {
      const auto& a = std::get<AggExpr>(item.term);
      item.label = agg_name(a.fn) + "(" + (a.star ? "*" : (a.distinct ? "DISTINCT " : "") + a.column) + ")";
    }
    if (accept_kw("AS")) item.label = column_name();
    return item;
  }

  Operand operand() {
    const Token& t = peek();
    if (t.kind == Tok::Number) {
      next();
      return number_literal(t.text);
    }
    if (t.kind == Tok::String) {
      next();
      return CellValue::text(t.text);
    }
    return ColumnRef{column_name()};
  }

  std::unique_ptr<Condition> condition() {
    auto left = and_condition();
    while (accept_kw("OR")) {
      auto node = std::make_unique<Condition>();
      node->kind = Condition::Kind::Or;
      node->children.push_back(std::move(left));
      node->children.push_back(and_condition());
      left = std::move(node);
    }
    return left;
  }

  std::unique_ptr<Condition> and_condition() {
    auto left = not_condition();
    while (accept_kw("AND")) {
      auto node = std::make_unique<Condition>();
      node->kind = Condition::Kind::And;
      node->children.push_back(std::move(left));
      node->children.push_back(not_condition());
      left = std::move(node);
    }
    return left;
  }

  std::unique_ptr<Condition> not_condition() {
    if (accept_kw("NOT")) {
      auto node = std::make_unique<Condition>();
      node->kind = Condition::Kind::Not;
      node->children.push_back(not_condition());
      return node;
    }
    if (accept_sym("(")) {
      auto inner = condition();
      expect_sym(")");
      return inner;
    }
    auto node = std::make_unique<Condition>();
    node->lhs = operand();
    const Token& op = next();
    const auto cmp = op.kind == Tok::Symbol ? parse_cmp(op.text) : std::nullopt;
    if (!cmp) parse_fail("expected a comparison operator near '" + op.text + "'");
    node->op = *cmp;
    node->rhs = operand();
    return node;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

// ---- evaluation ------------------------------------------------------------

struct Bound {
  const Table& t;
  std::map<std::string, std::size_t> cache;

  std::size_t col(const std::string& name) {
    auto it = cache.find(name);
    if (it == cache.end()) it = cache.emplace(name, resolve_column(t, name)).first;
    return it->second;
  }
};

Truth eval(const Condition& c, const Row& row, Bound& b) {
  switch (c.kind) {
    case Condition::Kind::And: return eval(*c.children[0], row, b) && eval(*c.children[1], row, b);
    case Condition::Kind::Or: return eval(*c.children[0], row, b) || eval(*c.children[1], row, b);
    case Condition::Kind::Not: return !eval(*c.children[0], row, b);
    case Condition::Kind::Compare: break;
  }
  const auto value = [&](const Operand& o) -> CellValue {
    if (const auto* ref = std::get_if<ColumnRef>(&o)) return row[b.col(ref->name)];
    return std::get<CellValue>(o);
  };
  return compare(value(c.lhs), c.op, value(c.rhs));
}

void bind_condition(const Condition& c, Bound& b) {
  for (const auto& ch : c.children) bind_condition(*ch, b);
  if (c.kind != Condition::Kind::Compare) return;
  for (const Operand* o : {&c.lhs, &c.rhs})
    if (const auto* ref = std::get_if<ColumnRef>(o)) b.col(ref->name);
}

CellValue eval_agg(const AggExpr& a, const std::vector<const Row*>& rows, Bound& b) {
  if (a.star) return CellValue::number(static_cast<double>(rows.size()), 0);
  const std::size_t c = b.col(a.column);
  std::vector<CellValue> vals;
  vals.reserve(rows.size());
  for (const Row* r : rows) vals.push_back((*r)[c]);
  return aggregate(a.fn, a.distinct, vals);
}

ExecResult run_query(const Query& q, const Table& r, const ExecLimits& limits) {
  const Deadline deadline(limits.timeout);
  Bound b{r, {}};

  bool aggregated = !q.group_by.empty();
  for (const auto& item : q.items)
    if (std::holds_alternative<AggExpr>(item.term)) aggregated = true;
  if (q.order && std::holds_alternative<AggExpr>(q.order->term)) aggregated = true;
  if (aggregated && q.star) parse_fail("SELECT * cannot be combined with aggregation");

  // Structural checks before touching data.
  if (aggregated) {
    const auto grouped = [&](const std::string& name) {
      for (const auto& g : q.group_by)
        if (g == name) return true;
      return false;
    };
    for (const auto& item : q.items)
      if (const auto* c = std::get_if<ColumnRef>(&item.term); c && !grouped(c->name))
        parse_fail("column '" + c->name + "' must appear in GROUP BY or an aggregate");
    if (q.order)
      if (const auto* c = std::get_if<ColumnRef>(&q.order->term); c && !grouped(c->name))
        parse_fail("ORDER BY column '" + c->name + "' must appear in GROUP BY");
  }

  // Resolve every column up front so unknown names fail even on empty input.
  if (q.where) bind_condition(*q.where, b);
  for (const auto& g : q.group_by) b.col(g);
  for (const auto& item : q.items) {
    if (const auto* c = std::get_if<ColumnRef>(&item.term)) b.col(c->name);
    else if (const auto& a = std::get<AggExpr>(item.term); !a.star) b.col(a.column);
  }
  if (q.order) {
    if (const auto* c = std::get_if<ColumnRef>(&q.order->term)) b.col(c->name);
    else if (const auto& a = std::get<AggExpr>(q.order->term); !a.star) b.col(a.column);
  }

  std::vector<const Row*> kept;
  for (const auto& row : r.rows()) {
    check(deadline);
    if (!q.where || eval(*q.where, row, b) == Truth::True) kept.push_back(&row);
  }

  std::vector<std::string> headers;
  std::vector<Row> out;

  if (!aggregated) {
    std::vector<Row> rows;
    rows.reserve(kept.size());
    for (const Row* row : kept) rows.push_back(*row);
    if (q.order) {
      const std::size_t key = b.col(std::get<ColumnRef>(q.order->term).name);
      stable_sort_rows(rows, key, q.order->desc, deadline);
    }
    if (q.limit && rows.size() > *q.limit) rows.resize(*q.limit);
    if (q.star) {
      headers = r.headers();
      out = std::move(rows);
    } else {
      std::vector<std::size_t> cols;
      for (const auto& item : q.items) {
        cols.push_back(b.col(std::get<ColumnRef>(item.term).name));
        headers.push_back(item.label);
      }
      for (const auto& row : rows) {
        check(deadline);
        Row nr;
        for (auto c : cols) nr.push_back(row[c]);
        out.push_back(std::move(nr));
      }
    }
  } else {
    // Groups in order of first appearance.
    std::vector<std::vector<const Row*>> groups;
    if (q.group_by.empty()) {
      groups.push_back(kept);
    } else {
      std::map<std::string, std::size_t> index;
      for (const Row* row : kept) {
        check(deadline);
        std::string key;
        for (const auto& g : q.group_by) key += cell_key((*row)[b.col(g)]) + '\x1f';
        auto [it, inserted] = index.emplace(key, groups.size());
        if (inserted) groups.emplace_back();
        groups[it->second].push_back(row);
      }
    }
    for (const auto& item : q.items) headers.push_back(item.label);
    struct Keyed {
      Row row;
      CellValue key;
    };
    std::vector<Keyed> rows;
    for (const auto& g : groups) {
      check(deadline);
      Keyed k;
      for (const auto& item : q.items) {
        if (const auto* c = std::get_if<ColumnRef>(&item.term))
          k.row.push_back((*g.front())[b.col(c->name)]);
        else
          k.row.push_back(eval_agg(std::get<AggExpr>(item.term), g, b));
      }
      if (q.order) {
        if (const auto* c = std::get_if<ColumnRef>(&q.order->term))
          k.key = (*g.front())[b.col(c->name)];
        else
          k.key = eval_agg(std::get<AggExpr>(q.order->term), g, b);
      }
      rows.push_back(std::move(k));
    }
    if (q.order) {
      const bool desc = q.order->desc;
      std::stable_sort(rows.begin(), rows.end(), [&](const Keyed& a, const Keyed& c) {
        const int cmp = compare_cells(a.key, c.key);
        return desc ? cmp > 0 : cmp < 0;
      });
    }
    if (q.limit && rows.size() > *q.limit) rows.resize(*q.limit);
    for (auto& k : rows) out.push_back(std::move(k.row));
  }

  return finish_result(Table("result", std::move(headers), std::move(out)), q.order.has_value(),
                       limits);
}

}  // namespace

ExecResult execute_sql_subset(std::string_view source, const Table& r, const ExecLimits& limits) {
  try {
    Parser p(lex(source, LexOptions{true, true}));
    const Query q = p.parse();
    return run_query(q, r, limits);
  } catch (const ExecFailure& f) {
    return ExecError{f.phase, f.message};
  } catch (const std::exception& e) {
    return ExecError{ExecPhase::Runtime, e.what()};
  }
}

}  // namespace tabval
