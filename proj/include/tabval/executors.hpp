#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <semaphore>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tabval/table.hpp"

namespace tabval {

struct CodeSnippet {
  std::string language;  // "sql-subset", "table-dsl", "external:<name>"
  std::string source;
};

enum class ExecPhase { Parse, Runtime, Timeout };

/// `ordered` is set when the program has an explicit ordering stage
/// (ORDER BY, sort_by, top_by); only then is row order significant.
struct ResultTable {
  Table table;
  bool ordered = false;
};
struct Scalar {
  CellValue value;
};
struct ExecError {
  ExecPhase phase = ExecPhase::Runtime;
  std::string message;
};

using ExecResult = std::variant<ResultTable, Scalar, ExecError>;

inline bool is_error(const ExecResult& r) { return std::holds_alternative<ExecError>(r); }
std::string describe(const ExecResult& r);

struct ExecLimits {
  std::chrono::milliseconds timeout{2000};
  std::size_t max_output_rows = 10000;
};

/// Wall-clock budget checked from inside interpreter loops.
class Deadline {
 public:
  explicit Deadline(std::chrono::milliseconds budget)
      : end_(std::chrono::steady_clock::now() + budget) {}
  bool expired() const { return std::chrono::steady_clock::now() >= end_; }
  std::chrono::milliseconds remaining() const;

 private:
  std::chrono::steady_clock::time_point end_;
};

/// 1x1 tables collapse to Scalar; row cap enforced.
ExecResult finish_result(Table t, bool ordered, const ExecLimits& limits);

class Executor {
 public:
  virtual ~Executor() = default;
  /// Never throws: all failures come back as ExecError.
  virtual ExecResult run(std::string_view source, const Table& input,
                         const ExecLimits& limits) const = 0;
};

class ExecutorRegistry {
 public:
  /// Registry with "sql-subset" and "table-dsl".
  ExecutorRegistry();

  void add(std::string language, std::shared_ptr<const Executor> exec, ExecLimits limits = {});
  bool has(std::string_view language) const;
  std::vector<std::string> languages() const;
  const ExecLimits& limits(std::string_view language) const;
  const Executor& get(std::string_view language) const;  // throws RegistryError

 private:
  struct Slot {
    std::shared_ptr<const Executor> exec;
    ExecLimits limits;
  };
  std::map<std::string, Slot, std::less<>> slots_;
};

/// Dispatches to the registered executor. Throws RegistryError for an unknown
/// language; every other failure is an ExecError.
ExecResult execute(const CodeSnippet& s, const Table& r, const ExecutorRegistry& registry);

/// SELECT over the single table `t`. Grammar in docs/grammars.md.
ExecResult execute_sql_subset(std::string_view source, const Table& r,
                              const ExecLimits& limits = {});

/// `stage | stage | ...` pipelines. Grammar in docs/grammars.md.
ExecResult execute_table_dsl(std::string_view source, const Table& r,
                             const ExecLimits& limits = {});

/// ExecError equals nothing. Scalar x equals a 1x1 table holding x. Headers
/// are ignored. Row order matters only when both results are ordered.
bool results_equal(const ExecResult& a, const ExecResult& b);

class SqlSubsetExecutor final : public Executor {
 public:
  ExecResult run(std::string_view source, const Table& input,
                 const ExecLimits& limits) const override {
    return execute_sql_subset(source, input, limits);
  }
};

class TableDslExecutor final : public Executor {
 public:
  ExecResult run(std::string_view source, const Table& input,
                 const ExecLimits& limits) const override {
    return execute_table_dsl(source, input, limits);
  }
};

/// Runs a snippet as a child process. The input table is written as CSV to a
/// temp file whose path is the program's sole argument; the result is read
/// as CSV from stdout. Non-zero exit is a Runtime error, overrunning the
/// timeout kills the process group and yields Timeout.
///
/// With an empty interpreter the snippet itself is executed (it needs a
/// shebang line); otherwise `interpreter <snippet-file> <table.csv>` is run.
class SubprocessExecutor final : public Executor {
 public:
  explicit SubprocessExecutor(std::string interpreter = {}, int max_processes = 4);
  ExecResult run(std::string_view source, const Table& input,
                 const ExecLimits& limits) const override;

 private:
  std::string interpreter_;
  mutable std::counting_semaphore<256> slots_;
};

}  // namespace tabval
