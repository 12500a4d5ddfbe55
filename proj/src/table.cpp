#include "tabval/table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include "tabval/errors.hpp"
#include "tabval/rng.hpp"

namespace tabval {

namespace {

bool is_plain_decimal(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && s[i] == '-') ++i;
  const std::size_t int_begin = i;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
  const std::size_t int_len = i - int_begin;
  if (int_len == 0) return false;
  if (int_len > 1 && s[int_begin] == '0') return false;
  std::size_t frac_len = 0;
  if (i < s.size() && s[i] == '.') {
    ++i;
    const std::size_t frac_begin = i;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    frac_len = i - frac_begin;
    if (frac_len == 0) return false;
  }
  if (i != s.size()) return false;
  // Significant digits, not counting leading zeros of "0.00x".
  std::size_t sig = 0;
  bool seen_nonzero = false;
  for (std::size_t k = int_begin; k < s.size(); ++k) {
    if (s[k] == '.') continue;
    if (s[k] != '0') seen_nonzero = true;
    if (seen_nonzero) ++sig;
  }
  return sig <= 15;
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong encodings and surrogates.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
        (len == 4 && (cp < 0x10000 || cp > 0x10FFFF)) ||
        (cp >= 0xD800 && cp <= 0xDFFF))
      return false;
    i += len;
  }
  return true;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out)
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  return out;
}

// Cell normalised for semantic comparison: numeric-looking text becomes a
// number, text is trimmed.
CellValue normalize(const CellValue& c) {
  if (!c.is_text()) return c;
  std::string t = trim(c.as_text());
  CellValue parsed = CellValue::parse(t);
  if (parsed.is_number()) return parsed;
  return CellValue::text(std::move(t));
}

bool rows_equal(const Row& a, const Row& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!cells_equal(a[i], b[i])) return false;
  return true;
}

int compare_rows(const Row& a, const Row& b) {
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i)
    if (int c = compare_cells(a[i], b[i]); c != 0) return c;
  return a.size() < b.size() ? -1 : (a.size() > b.size() ? 1 : 0);
}

std::string tagged(const CellValue& c) {
  if (c.is_null()) return "n:";
  if (c.is_number()) return "d:" + CellValue::number(c.as_number().value).render();
  return "s:" + c.as_text();
}

}  // namespace

std::string trim(std::string_view s) {
  const auto ws = [](char ch) {
    return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' ||
           ch == '\v';
  };
  std::size_t b = 0, e = s.size();
  while (b < e && ws(s[b])) ++b;
  while (e > b && ws(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_hex(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}

CellValue CellValue::parse(std::string_view raw) {
  if (!is_plain_decimal(raw)) return CellValue::text(std::string(raw));
  double v = 0.0;
  std::from_chars(raw.data(), raw.data() + raw.size(), v);
  const auto dot = raw.find('.');
  const int scale =
      dot == std::string_view::npos ? 0 : static_cast<int>(raw.size() - dot - 1);
  return CellValue::number(v, scale);
}

std::string CellValue::render() const {
  if (is_null()) return {};
  if (is_text()) return as_text();
  const Number& n = as_number();
  char buf[512];
  std::to_chars_result res{};
  if (n.scale >= 0)
    res = std::to_chars(buf, buf + sizeof buf, n.value, std::chars_format::fixed,
                        n.scale);
  else
    res = std::to_chars(buf, buf + sizeof buf, n.value);
  return std::string(buf, res.ptr);
}

bool operator==(const CellValue& a, const CellValue& b) {
  if (a.v_.index() != b.v_.index()) return false;
  if (a.is_number())
    return a.as_number().value == b.as_number().value &&
           a.render() == b.render();
  if (a.is_text()) return a.as_text() == b.as_text();
  return true;
}

bool cells_equal(const CellValue& a, const CellValue& b) {
  const CellValue x = normalize(a);
  const CellValue y = normalize(b);
  if (x.is_null() || y.is_null()) return x.is_null() && y.is_null();
  if (x.is_number() && y.is_number()) {
    const double p = x.as_number().value, q = y.as_number().value;
    const double scale = std::max({1.0, std::fabs(p), std::fabs(q)});
    return std::fabs(p - q) <= 1e-9 * scale;
  }
  if (x.is_text() && y.is_text()) return x.as_text() == y.as_text();
  return false;
}

int compare_cells(const CellValue& a, const CellValue& b) {
  const auto rank = [](const CellValue& c) {
    return c.is_null() ? 0 : (c.is_number() ? 1 : 2);
  };
  const int ra = rank(a), rb = rank(b);
  if (ra != rb) return ra < rb ? -1 : 1;
  if (ra == 1) {
    const double p = a.as_number().value, q = b.as_number().value;
    return p < q ? -1 : (p > q ? 1 : 0);
  }
  if (ra == 2) {
    const int c = a.as_text().compare(b.as_text());
    return c < 0 ? -1 : (c > 0 ? 1 : 0);
  }
  return 0;
}

Table::Table(std::string name, std::vector<std::string> headers,
             std::vector<Row> rows)
    : name_(std::move(name)), headers_(std::move(headers)), rows_(std::move(rows)) {
  for (std::size_t i = 0; i < rows_.size(); ++i)
    if (rows_[i].size() != headers_.size())
      throw std::invalid_argument("row " + std::to_string(i) + " has " +
                                  std::to_string(rows_[i].size()) +
                                  " cells, expected " +
                                  std::to_string(headers_.size()));
}

std::vector<CellValue> Table::column(std::size_t c) const {
  std::vector<CellValue> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r[c]);
  return out;
}

std::optional<std::size_t> Table::find_column(std::string_view header) const {
  for (std::size_t i = 0; i < headers_.size(); ++i)
    if (headers_[i] == header) return i;
  return std::nullopt;
}

Table Table::renamed(std::string name) const {
  return Table(std::move(name), headers_, rows_);
}

Table Table::select_rows(const std::vector<std::size_t>& idx) const {
  std::vector<Row> rows;
  rows.reserve(idx.size());
  for (auto i : idx) rows.push_back(rows_.at(i));
  return Table(name_, headers_, std::move(rows));
}

Table Table::select_columns(const std::vector<std::size_t>& idx) const {
  std::vector<std::string> headers;
  for (auto i : idx) headers.push_back(headers_.at(i));
  std::vector<Row> rows;
  rows.reserve(rows_.size());
  for (const auto& r : rows_) {
    Row nr;
    nr.reserve(idx.size());
    for (auto i : idx) nr.push_back(r[i]);
    rows.push_back(std::move(nr));
  }
  return Table(name_, std::move(headers), std::move(rows));
}

bool operator==(const Table& a, const Table& b) {
  return a.name_ == b.name_ && a.headers_ == b.headers_ && a.rows_ == b.rows_;
}

Table parse_table_csv(std::string_view bytes, std::string name,
                      CsvParseStats* stats) {
  if (bytes.size() >= 3 && bytes.substr(0, 3) == "\xEF\xBB\xBF")
    bytes.remove_prefix(3);
  if (!valid_utf8(bytes)) throw CorpusError(name + ": input is not valid UTF-8");

  struct Field {
    std::string text;
    bool quoted = false;
  };
  std::vector<std::vector<Field>> records;
  std::vector<Field> record;
  Field field;
  bool in_quotes = false;
  bool field_started = false;

  const auto end_field = [&] {
    record.push_back(std::move(field));
    field = Field{};
    field_started = false;
  };
  const auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };

  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const char ch = bytes[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < bytes.size() && bytes[i + 1] == '"') {
          field.text.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.text.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      in_quotes = true;
      field.quoted = true;
      field_started = true;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\r') {
      if (i + 1 < bytes.size() && bytes[i + 1] == '\n') ++i;
      end_record();
    } else if (ch == '\n') {
      end_record();
    } else {
      field.text.push_back(ch);
      field_started = true;
    }
  }
  if (in_quotes) throw CorpusError(name + ": unterminated quoted field");
  if (field_started || !record.empty()) end_record();

  const auto blank = [](const std::vector<Field>& rec) {
    return rec.size() == 1 && rec[0].text.empty() && !rec[0].quoted;
  };
  // Blank lines are skipped, except in single-column files where a blank
  // line is a null cell.
  while (!records.empty() && blank(records.front())) records.erase(records.begin());
  if (!records.empty() && records.front().size() != 1)
    std::erase_if(records, blank);

  if (records.empty()) throw CorpusError(name + ": empty input");
  if (records.size() == 1) throw CorpusError(name + ": header row only");

  std::vector<std::string> headers;
  for (auto& f : records.front()) headers.push_back(std::move(f.text));
  const std::size_t width = headers.size();

  std::vector<Row> rows;
  rows.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    auto& rec = records[r];
    Row row;
    row.reserve(width);
    for (std::size_t c = 0; c < std::min(width, rec.size()); ++c) {
      const Field& f = rec[c];
      if (f.text.empty())
        row.push_back(f.quoted ? CellValue::text("") : CellValue::null());
      else
        row.push_back(CellValue::parse(f.text));
    }
    if (rec.size() < width) {
      row.resize(width);
      if (stats) ++stats->padded_rows;
    } else if (rec.size() > width && stats) {
      ++stats->truncated_rows;
    }
    rows.push_back(std::move(row));
  }
  return Table(std::move(name), std::move(headers), std::move(rows));
}

namespace {

std::string csv_field(std::string_view s, bool force_quote) {
  const bool needs = force_quote || s.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs) return std::string(s);
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

std::string md_cell(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char ch = s[i];
    if (ch == '|') {
      out += "\\|";
    } else if (ch == '\r') {
      if (i + 1 < s.size() && s[i + 1] == '\n') ++i;
      out += "<br>";
    } else if (ch == '\n') {
      out += "<br>";
    } else {
      out.push_back(ch);
    }
  }
  return out;
}

}  // namespace

std::string serialize_table_csv(const Table& t) {
  std::string out;
  for (std::size_t c = 0; c < t.num_cols(); ++c) {
    if (c) out.push_back(',');
    out += csv_field(t.headers()[c], t.num_cols() == 1 && t.headers()[c].empty());
  }
  out.push_back('\n');
  for (const auto& row : t.rows()) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out.push_back(',');
      const CellValue& cell = row[c];
      if (cell.is_null()) continue;
      out += csv_field(cell.render(), cell.is_text() && cell.as_text().empty());
    }
    out.push_back('\n');
  }
  return out;
}

std::string serialize_table_markdown(const Table& t) {
  std::string out = "|";
  for (const auto& h : t.headers()) out += " " + md_cell(h) + " |";
  out += "\n|";
  for (std::size_t c = 0; c < t.num_cols(); ++c) out += " --- |";
  for (const auto& row : t.rows()) {
    out += "\n|";
    for (const auto& cell : row) out += " " + md_cell(cell.render()) + " |";
  }
  return out;
}

std::string render_table_for_prompt(const Table& t) {
  const std::size_t rows = std::min(t.num_rows(), kPromptMaxRows);
  const std::size_t cols = std::min(t.num_cols(), kPromptMaxCols);
  if (rows == t.num_rows() && cols == t.num_cols())
    return serialize_table_markdown(t);
  std::vector<std::size_t> ri(rows), ci(cols);
  std::iota(ri.begin(), ri.end(), std::size_t{0});
  std::iota(ci.begin(), ci.end(), std::size_t{0});
  std::string out = serialize_table_markdown(t.select_rows(ri).select_columns(ci));
  if (rows < t.num_rows())
    out += "\n… (" + std::to_string(t.num_rows() - rows) + " more rows)";
  if (cols < t.num_cols())
    out += "\n… (" + std::to_string(t.num_cols() - cols) + " more columns)";
  return out;
}

Permutation make_permutation(std::size_t rows, std::size_t cols,
                             std::uint64_t seed) {
  SplitMix64 rng(seed);
  Permutation p;
  p.seed = seed;
  p.row_order = shuffled_indices(rows, rng);
  p.col_order = shuffled_indices(cols, rng);
  return p;
}

Table apply_permutation(const Table& t, const Permutation& p) {
  if (p.row_order.size() != t.num_rows() || p.col_order.size() != t.num_cols())
    throw std::invalid_argument("permutation shape does not match table");
  return t.select_rows(p.row_order).select_columns(p.col_order);
}

PermutedTable permute(const Table& t, std::uint64_t seed) {
  Permutation p = make_permutation(t.num_rows(), t.num_cols(), seed);
  Table out = apply_permutation(t, p);
  return {std::move(out), std::move(p)};
}

Table sample_rows(const Table& t, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("sample_rows: k must be >= 1");
  if (k >= t.num_rows()) return t;
  SplitMix64 rng(seed);
  auto idx = shuffled_indices(t.num_rows(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return t.select_rows(idx);
}

bool rows_semantically_equal(const std::vector<Row>& a,
                             const std::vector<Row>& b,
                             bool row_order_sensitive) {
  if (a.size() != b.size()) return false;
  if (row_order_sensitive) {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!rows_equal(a[i], b[i])) return false;
    return true;
  }
  const auto norm = [](const std::vector<Row>& rows) {
    std::vector<Row> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
      Row nr;
      nr.reserve(r.size());
      for (const auto& c : r) nr.push_back(normalize(c));
      out.push_back(std::move(nr));
    }
    std::stable_sort(out.begin(), out.end(), [](const Row& x, const Row& y) {
      return compare_rows(x, y) < 0;
    });
    return out;
  };
  const auto na = norm(a), nb = norm(b);
  for (std::size_t i = 0; i < na.size(); ++i)
    if (!rows_equal(na[i], nb[i])) return false;
  return true;
}

bool tables_semantically_equal(const Table& a, const Table& b,
                               bool row_order_sensitive) {
  if (a.num_cols() != b.num_cols()) return false;
  for (std::size_t i = 0; i < a.num_cols(); ++i)
    if (lower(trim(a.headers()[i])) != lower(trim(b.headers()[i]))) return false;
  return rows_semantically_equal(a.rows(), b.rows(), row_order_sensitive);
}

std::string table_digest(const Table& t) {
  return to_hex(fnv1a(serialize_table_csv(t)));
}

std::string table_invariant_digest(const Table& t) {
  std::vector<std::string> cols;
  cols.reserve(t.num_cols());
  for (std::size_t c = 0; c < t.num_cols(); ++c) {
    std::vector<std::string> cells;
    for (const auto& row : t.rows()) cells.push_back(tagged(row[c]));
    std::sort(cells.begin(), cells.end());
    std::string s = t.headers()[c];
    for (const auto& cell : cells) {
      s.push_back('\x1f');
      s += cell;
    }
    cols.push_back(std::move(s));
  }
  std::sort(cols.begin(), cols.end());
  std::uint64_t h = fnv1a(std::to_string(t.num_rows()));
  for (const auto& c : cols) h = fnv1a(c, fnv1a("\x1e", h));
  return to_hex(h);
}

}  // namespace tabval
