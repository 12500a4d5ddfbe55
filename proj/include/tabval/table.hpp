#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tabval {

/// Decimal number. `scale` is the number of fractional digits used for the
/// canonical rendering; -1 means shortest round-trip rendering (computed
/// values such as averages).
struct Number {
  double value = 0.0;
  int scale = -1;
};

/// A table cell: null, a decimal number, or UTF-8 text.
class CellValue {
 public:
  CellValue() = default;
  static CellValue null() { return CellValue(); }
  static CellValue text(std::string s) { return CellValue(std::move(s)); }
  static CellValue number(double v, int scale = -1) {
    return CellValue(Number{v, scale});
  }

  /// Type inference for a raw field: plain decimals become numbers, everything
  /// else is text. Leading zeros ("007"), exponents and more than 15
  /// significant digits stay text so rendering is lossless.
  static CellValue parse(std::string_view raw);

  bool is_null() const { return std::holds_alternative<std::monostate>(v_); }
  bool is_number() const { return std::holds_alternative<Number>(v_); }
  bool is_text() const { return std::holds_alternative<std::string>(v_); }

  const Number& as_number() const { return std::get<Number>(v_); }
  const std::string& as_text() const { return std::get<std::string>(v_); }

  /// Canonical rendering. Null renders as "".
  std::string render() const;

  /// Exact structural equality (used for golden tests, not for semantics).
  friend bool operator==(const CellValue& a, const CellValue& b);

 private:
  explicit CellValue(std::string s) : v_(std::move(s)) {}
  explicit CellValue(Number n) : v_(n) {}
  std::variant<std::monostate, Number, std::string> v_;
};

/// Semantic cell equality: numbers within 1e-9 relative tolerance, text
/// compared after trimming outer whitespace, null equals null. A number and
/// a text cell compare equal when the text parses to an equal number.
bool cells_equal(const CellValue& a, const CellValue& b);

/// Total order used by sorting and MIN/MAX: null < numbers < text; numbers
/// by value, text by bytes.
int compare_cells(const CellValue& a, const CellValue& b);

using Row = std::vector<CellValue>;

/// Named rectangular grid. Immutable after construction.
class Table {
 public:
  Table() = default;
  /// Throws std::invalid_argument if any row length differs from the header
  /// count.
  Table(std::string name, std::vector<std::string> headers,
        std::vector<Row> rows);

  const std::string& name() const { return name_; }
  const std::vector<std::string>& headers() const { return headers_; }
  const std::vector<Row>& rows() const { return rows_; }
  std::size_t num_rows() const { return rows_.size(); }
  std::size_t num_cols() const { return headers_.size(); }
  bool empty() const { return rows_.empty() || headers_.empty(); }
  const CellValue& at(std::size_t r, std::size_t c) const { return rows_[r][c]; }

  std::vector<CellValue> column(std::size_t c) const;
  std::optional<std::size_t> find_column(std::string_view header) const;

  Table renamed(std::string name) const;
  Table select_rows(const std::vector<std::size_t>& idx) const;
  Table select_columns(const std::vector<std::size_t>& idx) const;

  friend bool operator==(const Table& a, const Table& b);

 private:
  std::string name_;
  std::vector<std::string> headers_;
  std::vector<Row> rows_;
};

struct CsvParseStats {
  std::size_t padded_rows = 0;
  std::size_t truncated_rows = 0;
};

/// RFC-4180 CSV with a header row. Short rows are padded with null, long
/// rows truncated. Unquoted empty fields are null; `""` is empty text.
/// Throws CorpusError on empty/header-only input or invalid UTF-8.
Table parse_table_csv(std::string_view bytes, std::string name,
                      CsvParseStats* stats = nullptr);

/// Inverse of parse_table_csv for canonical tables.
std::string serialize_table_csv(const Table& t);

/// GitHub pipe table, no trailing newline. Pipes escaped as `\|`.
std::string serialize_table_markdown(const Table& t);

inline constexpr std::size_t kPromptMaxRows = 50;
inline constexpr std::size_t kPromptMaxCols = 20;

/// Markdown rendering capped at kPromptMaxRows x kPromptMaxCols, with a
/// `… (k more rows)` / `… (k more columns)` footer line when truncated.
std::string render_table_for_prompt(const Table& t);

struct Permutation {
  std::vector<std::size_t> row_order;
  std::vector<std::size_t> col_order;
  std::uint64_t seed = 0;

  friend bool operator==(const Permutation&, const Permutation&) = default;
};

/// Seeded uniformly random row and column permutation for a table shape.
Permutation make_permutation(std::size_t rows, std::size_t cols,
                             std::uint64_t seed);

/// Row i of the result is row `row_order[i]` of t; likewise for columns.
Table apply_permutation(const Table& t, const Permutation& p);

struct PermutedTable {
  Table table;
  Permutation permutation;
};

PermutedTable permute(const Table& t, std::uint64_t seed);

/// min(k, rows) rows without replacement, original order kept. k >= 1.
Table sample_rows(const Table& t, std::size_t k, std::uint64_t seed);

/// Headers compared after trimming + case folding; rows via cells_equal, as
/// sequences or as multisets.
bool tables_semantically_equal(const Table& a, const Table& b,
                               bool row_order_sensitive);

/// Headers ignored; used by result comparison across languages.
bool rows_semantically_equal(const std::vector<Row>& a,
                             const std::vector<Row>& b,
                             bool row_order_sensitive);

/// 16-hex-digit digest of the exact CSV content (order sensitive).
std::string table_digest(const Table& t);

/// Digest invariant to row and column permutations.
std::string table_invariant_digest(const Table& t);

std::string to_hex(std::uint64_t v);
std::string trim(std::string_view s);

}  // namespace tabval
