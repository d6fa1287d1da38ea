#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mec {

struct BenchConfig {
  std::vector<std::size_t> dims{256, 512, 1024, 2048};
  std::vector<int> orders{1, 2, 4};
  double eps_d_sq = 0.02;
  std::size_t feature_dim = 2048;  // d of the random unit-column batch
  int repetitions = 5;
  int warmup_reps = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BenchRow {
  std::size_t dim = 0;
  int order = 0;
  double exact_ms = 0.0;
  double approx_ms = 0.0;
  double speedup = 0.0;
  double rel_err = 0.0;
  bool underflow = false;  // a median below one microsecond
};

/// For every dim: C = lambda Z^T Z for a d x dim unit-column batch, then the
/// median wall time of log det(I + C) by LU and of each truncation order.
std::vector<BenchRow> run_bench(const BenchConfig& cfg, std::ostream* progress = nullptr);

void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out);

/// Every order-4 row has rel_err below 0.5%.
bool bench_accuracy_ok(const std::vector<BenchRow>& rows);

/// Small matplotlib script that plots a bench CSV.
std::string bench_plot_script(const std::string& csv_name);

}  // namespace mec
