#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mec/bench.hpp"
#include "mec/verify.hpp"

using namespace mec;

TEST_CASE("bench rows and csv layout") {
  BenchConfig cfg;
  cfg.dims = {16, 32};
  cfg.orders = {1, 2, 4};
  cfg.feature_dim = 64;
  cfg.repetitions = 3;
  cfg.eps_d_sq = 1.25;
  const auto rows = run_bench(cfg);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].dim == 16);
  CHECK(rows[0].order == 1);
  CHECK(rows[5].dim == 32);
  CHECK(rows[5].order == 4);
  for (const BenchRow& r : rows) {
    CHECK(r.rel_err >= 0.0);
    CHECK(r.exact_ms >= 0.0);
  }
  CHECK(rows[2].rel_err < rows[0].rel_err);

  std::ostringstream out;
  write_bench_csv(rows, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "dim,order,exact_ms,approx_ms,speedup,rel_err");
  int count = 0;
  while (std::getline(in, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 5);
    ++count;
  }
  CHECK(count == 6);
}

TEST_CASE("bench accuracy gate") {
  std::vector<BenchRow> rows(2);
  rows[0].order = 1;
  rows[0].rel_err = 0.02;
  rows[1].order = 4;
  rows[1].rel_err = 0.001;
  CHECK(bench_accuracy_ok(rows));
  rows[1].rel_err = 0.006;
  CHECK(!bench_accuracy_ok(rows));
}

TEST_CASE("bench config validation") {
  BenchConfig cfg;
  cfg.repetitions = 2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = BenchConfig{};
  cfg.dims = {512, 256};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(bench_plot_script("bench.csv").find("bench.csv") != std::string::npos);
}

TEST_CASE("verify passes and the mutation fixture is caught") {
  VerifyOptions opts;
  opts.seeds = 5;
  opts.guard_batches = 100;
  const auto checks = run_verify(opts);
  CHECK(checks.size() > 8);
  CHECK(all_pass(checks));
  std::ostringstream table;
  print_verify_table(checks, table);
  CHECK(table.str().find("PASS") != std::string::npos);

  opts.corrupt_taylor_coefficient = true;
  const auto mutated = run_verify(opts);
  CHECK(!all_pass(mutated));
  int failures = 0;
  for (const IdentityCheck& c : mutated) {
    if (!c.pass) {
      ++failures;
      CHECK(c.name.find("first") != std::string::npos);
    }
  }
  CHECK(failures == 1);
}
