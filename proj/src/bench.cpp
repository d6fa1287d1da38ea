#include "mec/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include "mec/matkernel.hpp"
#include "mec/objective.hpp"

namespace mec {

namespace {

constexpr double kUnderflowMs = 1e-3;

template <typename F>
double median_ms(int reps, int warmup, F&& fn) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 == 1 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

}  // namespace

void BenchConfig::validate() const {
  if (dims.empty()) throw std::invalid_argument("bench: dims is empty");
  if (!std::is_sorted(dims.begin(), dims.end())) {
    throw std::invalid_argument("bench: dims must be sorted ascending");
  }
  if (dims.front() < 1) throw std::invalid_argument("bench: dims must be >= 1");
  if (orders.empty()) throw std::invalid_argument("bench: orders is empty");
  for (int o : orders) {
    if (o < 1) throw std::invalid_argument("bench: orders must be >= 1");
  }
  if (!(eps_d_sq > 0.0)) throw std::invalid_argument("bench: eps_d_sq must be > 0");
  if (feature_dim < 1) throw std::invalid_argument("bench: feature_dim must be >= 1");
  if (repetitions < 3) throw std::invalid_argument("bench: repetitions must be >= 3");
  if (warmup_reps < 0) throw std::invalid_argument("bench: warmup_reps must be >= 0");
}

std::vector<BenchRow> run_bench(const BenchConfig& cfg, std::ostream* progress) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::vector<BenchRow> rows;
  for (std::size_t dim : cfg.dims) {
    const Matrix z = random_unit_columns(cfg.feature_dim, dim, rng);
    const CodingConfig coding(dim, cfg.feature_dim, cfg.eps_d_sq);
    Matrix c = gram(z, z, Side::Batch);
    c *= coding.lambda();
    check_taylor_convergence(c);

    double exact = 0.0;
    const double exact_ms =
        median_ms(cfg.repetitions, cfg.warmup_reps, [&] { exact = logdet_ipc(c); });
    for (int order : cfg.orders) {
      double approx = 0.0;
      const double approx_ms = median_ms(cfg.repetitions, cfg.warmup_reps,
                                         [&] { approx = trace_log_taylor(c, order); });
      BenchRow row;
      row.dim = dim;
      row.order = order;
      row.exact_ms = exact_ms;
      row.approx_ms = approx_ms;
      row.underflow = exact_ms < kUnderflowMs || approx_ms < kUnderflowMs;
      row.speedup = row.underflow ? std::numeric_limits<double>::quiet_NaN() : exact_ms / approx_ms;
      row.rel_err = std::abs(approx - exact) / std::abs(exact);
      rows.push_back(row);
      if (progress) {
        *progress << "dim " << dim << " order " << order << ": exact " << exact_ms << " ms, approx "
                  << approx_ms << " ms, rel_err " << row.rel_err;
        if (row.underflow) *progress << " (timing underflow: below 1 us)";
        *progress << '\n';
      }
    }
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out) {
  out << "dim,order,exact_ms,approx_ms,speedup,rel_err\n";
  char buf[256];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%.6g,%.6g,%.6g,%.6e\n", r.dim, r.order, r.exact_ms,
                  r.approx_ms, r.speedup, r.rel_err);
    out << buf;
  }
}

bool bench_accuracy_ok(const std::vector<BenchRow>& rows) {
  return std::all_of(rows.begin(), rows.end(),
                     [](const BenchRow& r) { return r.order != 4 || r.rel_err < 0.005; });
}

std::string bench_plot_script(const std::string& csv_name) {
  return "import sys\n"
         "import pandas as pd\n"
         "import matplotlib.pyplot as plt\n\n"
         "df = pd.read_csv(sys.argv[1] if len(sys.argv) > 1 else \"" +
         csv_name +
         "\")\n"
         "fig, (ax_t, ax_e) = plt.subplots(1, 2, figsize=(10, 4))\n"
         "first = df[df.order == df.order.min()]\n"
         "ax_t.plot(first.dim, first.exact_ms, \"k-o\", label=\"exact (LU)\")\n"
         "for order, g in df.groupby(\"order\"):\n"
         "    ax_t.plot(g.dim, g.approx_ms, \"-o\", label=f\"order {order}\")\n"
         "    ax_e.plot(g.dim, 100 * g.rel_err, \"-o\", label=f\"order {order}\")\n"
         "ax_t.set_xlabel(\"dim\"); ax_t.set_ylabel(\"ms\"); ax_t.set_yscale(\"log\"); ax_t.legend()\n"
         "ax_e.set_xlabel(\"dim\"); ax_e.set_ylabel(\"relative error (%)\"); ax_e.set_yscale(\"log\")\n"
         "ax_e.legend()\n"
         "fig.tight_layout()\n"
         "fig.savefig(\"bench.png\", dpi=150)\n";
}

}  // namespace mec
