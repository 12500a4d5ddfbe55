#pragma once

// Pieces shared by the sql-subset and table-dsl interpreters: lexer, value
// comparison, aggregates, column lookup.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tabval/executors.hpp"

namespace tabval::detail {

struct ExecFailure {
  ExecPhase phase;
  std::string message;
};

[[noreturn]] inline void parse_fail(std::string msg) {
  throw ExecFailure{ExecPhase::Parse, std::move(msg)};
}
[[noreturn]] inline void runtime_fail(std::string msg) {
  throw ExecFailure{ExecPhase::Runtime, std::move(msg)};
}
inline void check(const Deadline& d) {
  if (d.expired()) throw ExecFailure{ExecPhase::Timeout, "time limit exceeded"};
}

enum class Tok { Ident, QuotedIdent, Number, String, Symbol, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  std::size_t pos = 0;
};

struct LexOptions {
  bool double_quote_is_ident = true;  // SQL: "col"; DSL: "text"
  bool brackets_are_ident = true;     // SQL: [col]
};

std::vector<Token> lex(std::string_view src, const LexOptions& opts);

bool keyword_is(const Token& t, std::string_view kw);  // case-insensitive ident match

CellValue number_literal(std::string_view text);

enum class CmpOp { Eq, Ne, Lt, Le, Gt, Ge };
std::optional<CmpOp> parse_cmp(std::string_view sym);

enum class Truth { False, True, Unknown };
Truth operator&&(Truth a, Truth b);
Truth operator||(Truth a, Truth b);
Truth operator!(Truth a);

/// Null on either side is Unknown. Two numbers compare numerically; anything
/// else compares the shortest renderings as bytes.
Truth compare(const CellValue& a, CmpOp op, const CellValue& b);

enum class AggFn { Count, Sum, Avg, Min, Max };
std::optional<AggFn> parse_agg(std::string_view name);
std::string agg_name(AggFn fn);

/// Aggregate over a column's values. Nulls are skipped; COUNT counts the
/// remaining values. Empty input gives null (COUNT gives 0).
CellValue aggregate(AggFn fn, bool distinct, const std::vector<CellValue>& values);

/// Exact header match first, then ASCII case-insensitive; first hit wins.
std::size_t resolve_column(const Table& t, std::string_view name);

/// Grouping / DISTINCT key. Numbers with equal value share a key.
std::string cell_key(const CellValue& c);

void stable_sort_rows(std::vector<Row>& rows, std::size_t col, bool desc, const Deadline& d);

}  // namespace tabval::detail
