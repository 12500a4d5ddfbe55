#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <memory>

#include "support/exec_suite.hpp"
#include "support/sql_reference.hpp"
#include "support/testing.hpp"
#include "tabval/errors.hpp"
#include "tabval/executors.hpp"

using namespace tabval;
using namespace std::chrono_literals;

namespace {

Table football() {
  return testing::csv(
      "team,goals,league\nAjax,12,A\nBenfica,10,B\nCeltic,,A\nDortmund,12,B\nEverton,7,A\n");
}

std::string show(const ExecResult& r) { return describe(r); }

ExecPhase phase(const ExecResult& r) {
  REQUIRE(is_error(r));
  return std::get<ExecError>(r).phase;
}

}  // namespace

TEST_CASE("sql: the top-scorer example") {
  const auto r = execute_sql_subset("SELECT team FROM t ORDER BY goals DESC LIMIT 1", football());
  REQUIRE(std::holds_alternative<Scalar>(r));
  CHECK(std::get<Scalar>(r).value.render() == "Ajax");
  const auto d = execute_table_dsl("top_by(goals) | project(team)", football());
  CHECK(results_equal(r, d));
}

TEST_CASE("sql: projections, filters and three-valued logic") {
  CHECK(show(execute_sql_subset("SELECT COUNT(*) FROM t", football())) == "scalar 5");
  CHECK(show(execute_sql_subset("SELECT COUNT(goals) FROM t", football())) == "scalar 4");
  CHECK(show(execute_sql_subset("select count(*) from T where goals > 10", football())) == "scalar 2");
  CHECK(show(execute_sql_subset("SELECT COUNT(*) FROM t WHERE NOT goals > 10", football())) == "scalar 2");
  CHECK(show(execute_sql_subset("SELECT COUNT(*) FROM t WHERE goals > 10 OR league = 'A'", football())) ==
        "scalar 4");
  CHECK(show(execute_sql_subset("SELECT team FROM t WHERE league = 'B' AND goals >= 12", football())) ==
        "scalar Dortmund");
  const auto r = execute_sql_subset("SELECT team AS name, goals FROM t WHERE goals < 12", football());
  REQUIRE(std::holds_alternative<ResultTable>(r));
  const auto& rt = std::get<ResultTable>(r);
  CHECK_FALSE(rt.ordered);
  CHECK(rt.table.headers() == std::vector<std::string>{"name", "goals"});
  CHECK(rt.table.num_rows() == 2);
}

TEST_CASE("sql: aggregates and grouping") {
  CHECK(show(execute_sql_subset("SELECT SUM(goals) FROM t", football())) == "scalar 41");
  CHECK(show(execute_sql_subset("SELECT AVG(goals) FROM t", football())) == "scalar 10.25");
  CHECK(show(execute_sql_subset("SELECT MIN(team) FROM t", football())) == "scalar Ajax");
  CHECK(show(execute_sql_subset("SELECT COUNT(DISTINCT goals) FROM t", football())) == "scalar 3");
  CHECK(show(execute_sql_subset("SELECT SUM(goals) FROM t WHERE goals > 100", football())) == "scalar ");
  const auto g = execute_sql_subset(
      "SELECT league, COUNT(*) AS n FROM t GROUP BY league ORDER BY n DESC", football());
  REQUIRE(std::holds_alternative<ResultTable>(g));
  CHECK(serialize_table_csv(std::get<ResultTable>(g).table) == "league,n\nA,3\nB,2\n");
  CHECK(std::get<ResultTable>(g).ordered);
}

TEST_CASE("sql: structural and runtime errors") {
  CHECK(phase(execute_sql_subset("SELECT", football())) == ExecPhase::Parse);
  CHECK(phase(execute_sql_subset("SELECT team FROM other", football())) == ExecPhase::Parse);
  CHECK(phase(execute_sql_subset("SELECT *, COUNT(*) FROM t", football())) == ExecPhase::Parse);
  CHECK(phase(execute_sql_subset("SELECT team, COUNT(*) FROM t", football())) == ExecPhase::Parse);
  CHECK(phase(execute_sql_subset("SELECT league FROM t GROUP BY league ORDER BY team", football())) ==
        ExecPhase::Parse);
  CHECK(phase(execute_sql_subset("SELECT nope FROM t", football())) == ExecPhase::Runtime);
  CHECK(phase(execute_sql_subset("SELECT nope FROM t", Table("t", {"a"}, {}))) == ExecPhase::Runtime);
  CHECK(phase(execute_sql_subset("SELECT SUM(team) FROM t", football())) == ExecPhase::Runtime);
  CHECK(phase(execute_sql_subset("SELECT team FROM t; DROP TABLE t", football())) == ExecPhase::Parse);
}

TEST_CASE("dsl: stages") {
  CHECK(show(execute_table_dsl("count()", football())) == "scalar 5");
  CHECK(show(execute_table_dsl("filter(league == \"A\") | avg(goals)", football())) == "scalar 9.5");
  CHECK(show(execute_table_dsl("filter(team != 'Ajax') | count()", football())) == "scalar 4");
  const auto g = execute_table_dsl("group_by(league; sum(goals))", football());
  REQUIRE(std::holds_alternative<ResultTable>(g));
  CHECK(serialize_table_csv(std::get<ResultTable>(g).table) == "league,sum(goals)\nA,19\nB,22\n");
  const auto s = execute_table_dsl("sort_by(goals desc) | limit(2) | project(team)", football());
  REQUIRE(std::holds_alternative<ResultTable>(s));
  CHECK(std::get<ResultTable>(s).ordered);
  CHECK(serialize_table_csv(std::get<ResultTable>(s).table) == "team\nAjax\nDortmund\n");
  CHECK(show(execute_table_dsl("group_by(league; count())", football())).find("count()") !=
        std::string::npos);
}

TEST_CASE("dsl: errors") {
  CHECK(phase(execute_table_dsl("count() | limit(1)", football())) == ExecPhase::Runtime);
  CHECK(phase(execute_table_dsl("project(nope)", football())) == ExecPhase::Runtime);
  CHECK(phase(execute_table_dsl("explode(team)", football())) == ExecPhase::Parse);
  CHECK(phase(execute_table_dsl("COUNT()", football())) == ExecPhase::Parse);
  CHECK(phase(execute_table_dsl("limit(-1)", football())) == ExecPhase::Parse);
  CHECK(phase(execute_table_dsl("filter(goals >)", football())) == ExecPhase::Parse);
  CHECK(phase(execute_table_dsl("sum(team)", football())) == ExecPhase::Runtime);
}

TEST_CASE("resource limits surface as errors") {
  std::vector<Row> rows;
  for (int i = 0; i < 50; ++i) rows.push_back({CellValue::number(i, 0)});
  const Table t("t", {"v"}, rows);
  ExecLimits small;
  small.max_output_rows = 10;
  CHECK(is_error(execute_sql_subset("SELECT v FROM t", t, small)));
  CHECK_FALSE(is_error(execute_sql_subset("SELECT v FROM t LIMIT 10", t, small)));
  CHECK(is_error(execute_table_dsl("project(v)", t, small)));

  ExecLimits none;
  none.timeout = 0ms;
  CHECK(phase(execute_sql_subset("SELECT v FROM t ORDER BY v", t, none)) == ExecPhase::Timeout);
  CHECK(phase(execute_table_dsl("sort_by(v)", t, none)) == ExecPhase::Timeout);
}

TEST_CASE("results_equal") {
  const Table one = testing::csv("x\n5\n");
  const Table two = testing::csv("a,b\n1,2\n3,4\n");
  const Table two_swapped = testing::csv("p,q\n3,4\n1,2.0\n");
  CHECK(results_equal(Scalar{CellValue::number(5, 0)}, ResultTable{one, false}));
  CHECK(results_equal(ResultTable{two, false}, ResultTable{two_swapped, false}));
  CHECK(results_equal(ResultTable{two, true}, ResultTable{two_swapped, false}));
  CHECK_FALSE(results_equal(ResultTable{two, true}, ResultTable{two_swapped, true}));
  CHECK_FALSE(results_equal(ExecError{}, ExecError{}));
  CHECK_FALSE(results_equal(Scalar{CellValue::number(5, 0)}, Scalar{CellValue::number(6, 0)}));
  CHECK(results_equal(Scalar{CellValue::number(0.1 + 0.2)}, Scalar{CellValue::number(0.3, 1)}));
  CHECK(results_equal(ResultTable{Table("r", {"a"}, {}), false}, ResultTable{Table("r", {"a", "b"}, {}), true}));
  CHECK_FALSE(results_equal(ResultTable{two, false}, ResultTable{two.select_columns({0}), false}));
}

TEST_CASE("executors are pure") {
  SplitMix64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const Table t = sqlref::random_table(rng);
    const std::string q = sqlref::to_sql(rng, sqlref::random_query(rng, t));
    CHECK(describe(execute_sql_subset(q, t)) == describe(execute_sql_subset(q, t)));
  }
}

TEST_CASE("sql differential test against the reference evaluator") {
  SplitMix64 rng(20240601);
  std::size_t errors = 0, scalars = 0, tables = 0;
  for (int i = 0; i < 3000; ++i) {
    const Table t = sqlref::random_table(rng);
    const sqlref::Query q = sqlref::random_query(rng, t);
    const std::string sql = sqlref::to_sql(rng, q);
    const auto got = execute_sql_subset(sql, t);
    std::string why;
    const bool ok = sqlref::matches(got, sqlref::evaluate(q, t), &why);
    if (!ok) {
      MESSAGE(sql);
      MESSAGE(serialize_table_csv(t));
      MESSAGE(describe(got));
    }
    REQUIRE_MESSAGE(ok, why);
    errors += is_error(got);
    scalars += std::holds_alternative<Scalar>(got);
    tables += std::holds_alternative<ResultTable>(got);
  }
  // The generator reaches every result shape.
  CHECK(errors > 50);
  CHECK(scalars > 150);
  CHECK(tables > 1000);
}

TEST_CASE("golden suite: equivalent pairs agree on every row subset") {
  const auto tables = testing::suite_tables();
  const auto pairs = testing::suite_pairs("equivalent.json");
  CHECK(pairs.size() >= 12);
  for (const auto& p : pairs) {
    const Table& full = tables.at(p.table);
    REQUIRE(full.num_rows() <= 6);
    for (const auto& sub : testing::row_subsets(full)) {
      const auto a = execute_sql_subset(p.sql, sub);
      const auto b = execute_table_dsl(p.dsl, sub);
      CHECK_MESSAGE(results_equal(a, b), p.name << ": " << describe(a) << " vs " << describe(b));
    }
  }
}

TEST_CASE("golden suite: divergent pairs differ on the full table") {
  const auto tables = testing::suite_tables();
  const auto pairs = testing::suite_pairs("divergent.json");
  CHECK(pairs.size() >= 6);
  for (const auto& p : pairs) {
    const auto a = execute_sql_subset(p.sql, tables.at(p.table));
    const auto b = execute_table_dsl(p.dsl, tables.at(p.table));
    CHECK_FALSE_MESSAGE(results_equal(a, b), p.name);
  }
}

TEST_CASE("registry") {
  ExecutorRegistry reg;
  CHECK(reg.has("sql-subset"));
  CHECK(reg.has("table-dsl"));
  CHECK_FALSE(reg.has("external:py"));
  CHECK_THROWS_AS(reg.get("external:py"), RegistryError);
  CHECK_THROWS_AS(execute({"cobol", "x"}, football(), reg), RegistryError);
  CHECK(show(execute({"sql-subset", "SELECT COUNT(*) FROM t"}, football(), reg)) == "scalar 5");
  ExecLimits tight;
  tight.max_output_rows = 1;
  reg.add("external:sh", std::make_shared<SubprocessExecutor>("/bin/sh"), tight);
  CHECK(reg.limits("external:sh").max_output_rows == 1);
  CHECK(reg.languages() == std::vector<std::string>{"external:sh", "sql-subset", "table-dsl"});
}

TEST_CASE("subprocess executor") {
  const SubprocessExecutor sh("/bin/sh");
  const ExecLimits limits;

  SUBCASE("result CSV is read from stdout") {
    const auto r = sh.run("cat \"$1\"", football(), limits);
    REQUIRE(std::holds_alternative<ResultTable>(r));
    CHECK(std::get<ResultTable>(r).table == football().renamed(std::get<ResultTable>(r).table.name()));
    CHECK_FALSE(std::get<ResultTable>(r).ordered);
    CHECK(show(sh.run("printf 'n\\n3\\n'", football(), limits)) == "scalar 3");
    const auto s = sh.run("head -n 1 \"$1\" # sort", football(), limits);
    REQUIRE(std::holds_alternative<ResultTable>(s));
    CHECK(std::get<ResultTable>(s).table.num_rows() == 0);
    CHECK(std::get<ResultTable>(s).ordered);
  }
  SUBCASE("shebang programs run directly") {
    const SubprocessExecutor direct;
    const auto r = direct.run("#!/bin/sh\necho total\necho 42\n", football(), limits);
    CHECK(show(r) == "scalar 42");
  }
  SUBCASE("failures") {
    const auto bad = sh.run("echo broken >&2; exit 3", football(), limits);
    REQUIRE(is_error(bad));
    CHECK(std::get<ExecError>(bad).phase == ExecPhase::Runtime);
    CHECK(std::get<ExecError>(bad).message.find("broken") != std::string::npos);
    CHECK(phase(sh.run("true", football(), limits)) == ExecPhase::Runtime);
    ExecLimits cap;
    cap.max_output_rows = 2;
    CHECK(is_error(sh.run("cat \"$1\"", football(), cap)));
    CHECK(is_error(SubprocessExecutor("/nonexistent/interp").run("x", football(), limits)));
  }
  SUBCASE("timeouts kill the process group") {
    ExecLimits quick;
    quick.timeout = 200ms;
    const auto start = std::chrono::steady_clock::now();
    const auto r = sh.run("sleep 5 & sleep 5; echo done", football(), quick);
    const auto took = std::chrono::steady_clock::now() - start;
    CHECK(phase(r) == ExecPhase::Timeout);
    CHECK(took < 2s);
  }
}
