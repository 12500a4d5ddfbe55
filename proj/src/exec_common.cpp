#include "exec_common.hpp"

#include <algorithm>
#include <charconv>
#include <set>

namespace tabval::detail {

namespace {

bool ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }
bool digit(char c) { return c >= '0' && c <= '9'; }

char fold(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (fold(a[i]) != fold(b[i])) return false;
  return true;
}

std::string shortest(const CellValue& c) {
  if (c.is_number()) return CellValue::number(c.as_number().value).render();
  return c.render();
}

}  // namespace

std::vector<Token> lex(std::string_view src, const LexOptions& opts) {
  std::vector<Token> out;
  std::size_t i = 0;
  const auto quoted = [&](char close, Tok kind) {
    const std::size_t start = i++;
    std::string text;
    for (;;) {
      if (i >= src.size()) parse_fail("unterminated quote at " + std::to_string(start));
      if (src[i] == close) {
        if (i + 1 < src.size() && src[i + 1] == close && close != ']') {
          text.push_back(close);
          i += 2;
          continue;
        }
        ++i;
        break;
      }
      text.push_back(src[i++]);
    }
    out.push_back({kind, std::move(text), start});
  };
  while (i < src.size()) {
    const char c = src[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    if (ident_start(c)) {
      const std::size_t start = i;
      while (i < src.size() && ident_char(src[i])) ++i;
      out.push_back({Tok::Ident, std::string(src.substr(start, i - start)), start});
      continue;
    }
    if (digit(c) || (c == '-' && i + 1 < src.size() && digit(src[i + 1]))) {
      const std::size_t start = i;
      if (c == '-') ++i;
      while (i < src.size() && digit(src[i])) ++i;
      if (i + 1 < src.size() && src[i] == '.' && digit(src[i + 1])) {
        ++i;
        while (i < src.size() && digit(src[i])) ++i;
      }
      if (i < src.size() && ident_char(src[i]))
        parse_fail("malformed number at " + std::to_string(start));
      out.push_back({Tok::Number, std::string(src.substr(start, i - start)), start});
      continue;
    }
    if (c == '\'') {
      quoted('\'', Tok::String);
      continue;
    }
    if (c == '"') {
      quoted('"', opts.double_quote_is_ident ? Tok::QuotedIdent : Tok::String);
      continue;
    }
    if (c == '`') {
      quoted('`', Tok::QuotedIdent);
      continue;
    }
    if (c == '[' && opts.brackets_are_ident) {
      quoted(']', Tok::QuotedIdent);
      continue;
    }
    static constexpr std::string_view two[] = {"!=", "<>", "<=", ">=", "=="};
    bool matched = false;
    for (auto sym : two) {
      if (src.substr(i, 2) == sym) {
        out.push_back({Tok::Symbol, std::string(sym), i});
        i += 2;
        matched = true;
        break;
      }
    }
    if (matched) continue;
    if (std::string_view("*,();|=<>.").find(c) != std::string_view::npos) {
      out.push_back({Tok::Symbol, std::string(1, c), i});
      ++i;
      continue;
    }
    parse_fail(std::string("unexpected character '") + c + "' at " + std::to_string(i));
  }
  out.push_back({Tok::End, "", src.size()});
  return out;
}

bool keyword_is(const Token& t, std::string_view kw) {
  return t.kind == Tok::Ident && iequals(t.text, kw);
}

CellValue number_literal(std::string_view text) {
  double v = 0.0;
  std::from_chars(text.data(), text.data() + text.size(), v);
  const auto dot = text.find('.');
  return CellValue::number(
      v, dot == std::string_view::npos ? 0 : static_cast<int>(text.size() - dot - 1));
}

std::optional<CmpOp> parse_cmp(std::string_view s) {
  if (s == "=" || s == "==") return CmpOp::Eq;
  if (s == "!=" || s == "<>") return CmpOp::Ne;
  if (s == "<") return CmpOp::Lt;
  if (s == "<=") return CmpOp::Le;
  if (s == ">") return CmpOp::Gt;
  if (s == ">=") return CmpOp::Ge;
  return std::nullopt;
}

Truth operator&&(Truth a, Truth b) {
  if (a == Truth::False || b == Truth::False) return Truth::False;
  if (a == Truth::True && b == Truth::True) return Truth::True;
  return Truth::Unknown;
}
Truth operator||(Truth a, Truth b) {
  if (a == Truth::True || b == Truth::True) return Truth::True;
  if (a == Truth::False && b == Truth::False) return Truth::False;
  return Truth::Unknown;
}
Truth operator!(Truth a) {
  if (a == Truth::Unknown) return a;
  return a == Truth::True ? Truth::False : Truth::True;
}

Truth compare(const CellValue& a, CmpOp op, const CellValue& b) {
  if (a.is_null() || b.is_null()) return Truth::Unknown;
  int c = 0;
  if (a.is_number() && b.is_number()) {
    const double x = a.as_number().value, y = b.as_number().value;
    c = x < y ? -1 : (x > y ? 1 : 0);
  } else {
    const int r = shortest(a).compare(shortest(b));
    c = r < 0 ? -1 : (r > 0 ? 1 : 0);
  }
  bool res = false;
  switch (op) {
    case CmpOp::Eq: res = c == 0; break;
    case CmpOp::Ne: res = c != 0; break;
    case CmpOp::Lt: res = c < 0; break;
    case CmpOp::Le: res = c <= 0; break;
    case CmpOp::Gt: res = c > 0; break;
    case CmpOp::Ge: res = c >= 0; break;
  }
  return res ? Truth::True : Truth::False;
}

std::optional<AggFn> parse_agg(std::string_view name) {
  if (iequals(name, "count")) return AggFn::Count;
  if (iequals(name, "sum")) return AggFn::Sum;
  if (iequals(name, "avg")) return AggFn::Avg;
  if (iequals(name, "min")) return AggFn::Min;
  if (iequals(name, "max")) return AggFn::Max;
  return std::nullopt;
}

std::string agg_name(AggFn fn) {
  switch (fn) {
    case AggFn::Count: return "COUNT";
    case AggFn::Sum: return "SUM";
    case AggFn::Avg: return "AVG";
    case AggFn::Min: return "MIN";
    case AggFn::Max: return "MAX";
  }
  return "?";
}

std::string cell_key(const CellValue& c) {
  if (c.is_null()) return "n";
  if (c.is_number()) return "d" + CellValue::number(c.as_number().value).render();
  return "s" + c.as_text();
}

CellValue aggregate(AggFn fn, bool distinct, const std::vector<CellValue>& values) {
  std::vector<CellValue> vals;
  std::set<std::string> seen;
  for (const auto& v : values) {
    if (v.is_null()) continue;
    if (distinct && !seen.insert(cell_key(v)).second) continue;
    vals.push_back(v);
  }
  switch (fn) {
    case AggFn::Count:
      return CellValue::number(static_cast<double>(vals.size()), 0);
    case AggFn::Sum:
    case AggFn::Avg: {
      if (vals.empty()) return CellValue::null();
      double sum = 0.0;
      int scale = 0;
      for (const auto& v : vals) {
        if (!v.is_number())
          runtime_fail(agg_name(fn) + " over non-numeric value '" + v.render() + "'");
        sum += v.as_number().value;
        scale = (scale < 0 || v.as_number().scale < 0) ? -1
                                                       : std::max(scale, v.as_number().scale);
      }
      if (fn == AggFn::Sum) return CellValue::number(sum, scale);
      return CellValue::number(sum / static_cast<double>(vals.size()), -1);
    }
    case AggFn::Min:
    case AggFn::Max: {
      if (vals.empty()) return CellValue::null();
      const CellValue* best = &vals.front();
      for (const auto& v : vals) {
        const int c = compare_cells(v, *best);
        if ((fn == AggFn::Min && c < 0) || (fn == AggFn::Max && c > 0)) best = &v;
      }
      return *best;
    }
  }
  return CellValue::null();
}

std::size_t resolve_column(const Table& t, std::string_view name) {
  for (std::size_t i = 0; i < t.num_cols(); ++i)
    if (t.headers()[i] == name) return i;
  for (std::size_t i = 0; i < t.num_cols(); ++i)
    if (iequals(t.headers()[i], name)) return i;
  runtime_fail("unknown column '" + std::string(name) + "'");
}

void stable_sort_rows(std::vector<Row>& rows, std::size_t col, bool desc, const Deadline& d) {
  check(d);
  std::stable_sort(rows.begin(), rows.end(), [&](const Row& a, const Row& b) {
    const int c = compare_cells(a[col], b[col]);
    return desc ? c > 0 : c < 0;
  });
  check(d);
}

}  // namespace tabval::detail
