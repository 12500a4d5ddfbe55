#include "tabval/executors.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tabval/errors.hpp"

namespace tabval {

std::chrono::milliseconds Deadline::remaining() const {
  const auto left = end_ - std::chrono::steady_clock::now();
  if (left <= std::chrono::steady_clock::duration::zero()) return std::chrono::milliseconds(0);
  return std::chrono::ceil<std::chrono::milliseconds>(left);
}

std::string describe(const ExecResult& r) {
  if (const auto* e = std::get_if<ExecError>(&r)) {
    const char* phase = e->phase == ExecPhase::Parse     ? "parse"
                        : e->phase == ExecPhase::Timeout ? "timeout"
                                                         : "runtime";
    return std::string("error(") + phase + "): " + e->message;
  }
  if (const auto* s = std::get_if<Scalar>(&r)) return "scalar " + s->value.render();
  const auto& t = std::get<ResultTable>(r);
  return std::string(t.ordered ? "ordered" : "unordered") + " table\n" +
         serialize_table_csv(t.table);
}

ExecResult finish_result(Table t, bool ordered, const ExecLimits& limits) {
  if (t.num_rows() > limits.max_output_rows)
    return ExecError{ExecPhase::Runtime, "result has " + std::to_string(t.num_rows()) +
                                             " rows, limit is " +
                                             std::to_string(limits.max_output_rows)};
  if (t.num_rows() == 1 && t.num_cols() == 1) return Scalar{t.at(0, 0)};
  return ResultTable{std::move(t), ordered};
}

ExecutorRegistry::ExecutorRegistry() {
  add("sql-subset", std::make_shared<SqlSubsetExecutor>());
  add("table-dsl", std::make_shared<TableDslExecutor>());
}

void ExecutorRegistry::add(std::string language, std::shared_ptr<const Executor> exec,
                           ExecLimits limits) {
  slots_[std::move(language)] = Slot{std::move(exec), limits};
}

bool ExecutorRegistry::has(std::string_view language) const {
  return slots_.find(language) != slots_.end();
}

std::vector<std::string> ExecutorRegistry::languages() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : slots_) out.push_back(k);
  return out;
}

const ExecLimits& ExecutorRegistry::limits(std::string_view language) const {
  const auto it = slots_.find(language);
  if (it == slots_.end()) throw RegistryError("no executor for language '" + std::string(language) + "'");
  return it->second.limits;
}

const Executor& ExecutorRegistry::get(std::string_view language) const {
  const auto it = slots_.find(language);
  if (it == slots_.end()) throw RegistryError("no executor for language '" + std::string(language) + "'");
  return *it->second.exec;
}

ExecResult execute(const CodeSnippet& s, const Table& r, const ExecutorRegistry& registry) {
  const Executor& exec = registry.get(s.language);
  try {
    return exec.run(s.source, r, registry.limits(s.language));
  } catch (const std::exception& e) {
    return ExecError{ExecPhase::Runtime, e.what()};
  }
}

namespace {

Table as_table(const ExecResult& r, bool& ordered) {
  if (const auto* s = std::get_if<Scalar>(&r)) {
    ordered = false;
    return Table("scalar", {"value"}, {{s->value}});
  }
  const auto& t = std::get<ResultTable>(r);
  ordered = t.ordered;
  return t.table;
}

}  // namespace

bool results_equal(const ExecResult& a, const ExecResult& b) {
  if (is_error(a) || is_error(b)) return false;
  bool oa = false, ob = false;
  const Table ta = as_table(a, oa);
  const Table tb = as_table(b, ob);
  if (ta.num_rows() != tb.num_rows()) return false;
  // Zero-row results carry no values; differing projections still agree.
  if (ta.num_rows() == 0) return true;
  if (ta.num_cols() != tb.num_cols()) return false;
  return rows_semantically_equal(ta.rows(), tb.rows(), oa && ob);
}

// ---- subprocess ------------------------------------------------------------

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    const char* base = std::getenv("TMPDIR");
    std::string tmpl = std::string(base && *base ? base : "/tmp") + "/tabval-exec-XXXXXX";
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

bool looks_ordered(std::string_view src) {
  std::string low(src);
  for (auto& c : low) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (std::string_view kw : {"order", "sort", "arrange"})
    if (low.find(kw) != std::string::npos) return true;
  return false;
}

void drain(int fd, std::string& into, bool& open) {
  char buf[4096];
  const ssize_t n = ::read(fd, buf, sizeof buf);
  if (n > 0) into.append(buf, static_cast<std::size_t>(n));
  else if (n == 0 || (errno != EINTR && errno != EAGAIN)) open = false;
}

}  // namespace

SubprocessExecutor::SubprocessExecutor(std::string interpreter, int max_processes)
    : interpreter_(std::move(interpreter)), slots_(std::clamp(max_processes, 1, 256)) {}

ExecResult SubprocessExecutor::run(std::string_view source, const Table& input,
                                   const ExecLimits& limits) const {
  slots_.acquire();
  struct Release {
    std::counting_semaphore<256>& s;
    ~Release() { s.release(); }
  } release{slots_};

  try {
    TempDir dir;
    const auto table_path = dir.path / "table.csv";
    const auto prog_path = dir.path / "program";
    {
      std::ofstream(table_path, std::ios::binary) << serialize_table_csv(input);
      std::ofstream(prog_path, std::ios::binary) << source;
    }
    ::chmod(prog_path.c_str(), 0755);

    int out_pipe[2], err_pipe[2];
    if (::pipe(out_pipe) != 0) return ExecError{ExecPhase::Runtime, "pipe failed"};
    if (::pipe(err_pipe) != 0) {
      ::close(out_pipe[0]);
      ::close(out_pipe[1]);
      return ExecError{ExecPhase::Runtime, "pipe failed"};
    }

    std::vector<std::string> args;
    if (!interpreter_.empty()) args.push_back(interpreter_);
    args.push_back(prog_path.string());
    args.push_back(table_path.string());
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0) return ExecError{ExecPhase::Runtime, "fork failed"};
    if (pid == 0) {
      ::setpgid(0, 0);
      ::dup2(out_pipe[1], 1);
      ::dup2(err_pipe[1], 2);
      ::close(out_pipe[0]);
      ::close(out_pipe[1]);
      ::close(err_pipe[0]);
      ::close(err_pipe[1]);
      const int devnull = ::open("/dev/null", O_RDONLY);
      if (devnull >= 0) ::dup2(devnull, 0);
      if (::chdir(dir.path.c_str()) != 0) _exit(126);
      ::execvp(argv[0], argv.data());
      _exit(127);
    }
    ::setpgid(pid, pid);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);

    const Deadline deadline(limits.timeout);
    std::string out, err;
    bool out_open = true, err_open = true, timed_out = false;
    while (out_open || err_open) {
      const auto left = deadline.remaining();
      if (left.count() == 0) {
        timed_out = true;
        break;
      }
      pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
      if (!out_open) fds[0].fd = -1;
      if (!err_open) fds[1].fd = -1;
      const int rc = ::poll(fds, 2, static_cast<int>(std::min<long long>(left.count(), 1000)));
      if (rc < 0 && errno != EINTR) break;
      if (rc <= 0) continue;
      if (fds[0].revents) drain(out_pipe[0], out, out_open);
      if (fds[1].revents) drain(err_pipe[0], err, err_open);
    }
    ::close(out_pipe[0]);
    ::close(err_pipe[0]);

    int status = 0;
    if (timed_out) {
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      return ExecError{ExecPhase::Timeout, "time limit exceeded"};
    }
    // Output closed; give the process the remaining budget to exit.
    for (;;) {
      const pid_t w = ::waitpid(pid, &status, WNOHANG);
      if (w == pid) break;
      if (w < 0 && errno != EINTR) break;
      if (deadline.expired()) {
        ::kill(-pid, SIGKILL);
        ::waitpid(pid, &status, 0);
        return ExecError{ExecPhase::Timeout, "time limit exceeded"};
      }
      ::usleep(1000);
    }
    ::kill(-pid, SIGKILL);  // stray grandchildren

    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      std::ostringstream msg;
      if (WIFEXITED(status)) msg << "exit status " << WEXITSTATUS(status);
      else msg << "terminated by signal " << WTERMSIG(status);
      if (!err.empty()) msg << ": " << err.substr(0, 500);
      return ExecError{ExecPhase::Runtime, msg.str()};
    }
    if (trim(out).empty()) return ExecError{ExecPhase::Runtime, "program wrote no output"};
    Table result;
    try {
      result = parse_table_csv(out, "result");
    } catch (const CorpusError& e) {
      // Header-only output is an empty result.
      const auto nl = out.find('\n');
      if (nl != std::string::npos && !trim(out.substr(nl)).empty())
        return ExecError{ExecPhase::Runtime, std::string("unreadable output: ") + e.what()};
      try {
        const Table probe = parse_table_csv(out.substr(0, nl) + "\nx", "result");
        result = Table("result", probe.headers(), {});
      } catch (const CorpusError&) {
        return ExecError{ExecPhase::Runtime, std::string("unreadable output: ") + e.what()};
      }
    }
    return finish_result(std::move(result), looks_ordered(source), limits);
  } catch (const std::exception& e) {
    return ExecError{ExecPhase::Runtime, e.what()};
  }
}

}  // namespace tabval
