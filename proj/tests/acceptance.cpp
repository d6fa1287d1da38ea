// Acceptance report: one PASS/FAIL line per criterion. Exit status is 0 only
// when every criterion passes.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mec/baselines.hpp"
#include "mec/bench.hpp"
#include "mec/data.hpp"
#include "mec/matkernel.hpp"
#include "mec/objective.hpp"
#include "mec/trainer.hpp"

using namespace mec;

namespace {

// Pinned tolerances.
constexpr double kTaylorOrder4MaxRelErr = 0.005;
constexpr double kBenchMaxSeconds = 120.0;
constexpr double kOrder1Lo = 0.01;
constexpr double kOrder1Hi = 0.05;
constexpr double kOrder2Lo = 0.0005;
constexpr double kOrder2Hi = 0.005;
constexpr double kMinSpeedup = 5.0;
constexpr double kDualGapTol = 1e-9;
constexpr double kDualGapMaxSeconds = 30.0;
constexpr double kFirstOrderTol = 1e-12;
constexpr double kSecondOrderTol = 1e-10;
constexpr double kGuardEps = 1.25;
constexpr double kGuardHolderMax = 0.8;
constexpr double kGuardSlack = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kErankFraction = 0.25;
constexpr double kKnnChanceMultiple = 5.0;
constexpr double kCollapseErankMax = 2.0;
constexpr double kTrainingMaxSeconds = 30.0 * 60.0;
constexpr int kMecSeeds = 10;
constexpr int kRegulationSeeds = 5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("%s  %2d  %-24s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

MecLossConfig mec_cfg(std::size_t m, std::size_t d, double eps, int order, bool exact,
                      Form form = Form::Auto) {
  MecLossConfig c;
  c.coding = CodingConfig(m, d, eps, order);
  c.exact = exact;
  c.form = form;
  c.normalize_by_mu = false;
  return c;
}

void bench_criteria() {
  const BenchConfig cfg;
  const auto t0 = Clock::now();
  const std::vector<BenchRow> rows = run_bench(cfg);
  const double elapsed = seconds_since(t0);

  double worst4 = 0.0;
  for (const BenchRow& r : rows)
    if (r.order == 4) worst4 = std::max(worst4, r.rel_err);
  report(1, "taylor accuracy", worst4 < kTaylorOrder4MaxRelErr && elapsed < kBenchMaxSeconds,
         fmt("max order-4 rel err %.3g%% over dims 256..2048 (< 0.5%%), suite %.1f s (< %.0f s)",
             100 * worst4, elapsed, kBenchMaxSeconds));

  auto at = [&](std::size_t dim, int order) {
    for (const BenchRow& r : rows)
      if (r.dim == dim && r.order == order) return r;
    return BenchRow{};
  };
  const BenchRow e1 = at(2048, 1);
  const BenchRow e2 = at(2048, 2);
  const BenchRow e4 = at(2048, 4);
  bool ordered = true;
  for (std::size_t dim : cfg.dims) {
    ordered = ordered && at(dim, 4).rel_err < at(dim, 2).rel_err &&
              at(dim, 2).rel_err < at(dim, 1).rel_err;
  }
  const bool bands = e1.rel_err >= kOrder1Lo && e1.rel_err <= kOrder1Hi && e2.rel_err >= kOrder2Lo &&
                     e2.rel_err <= kOrder2Hi;
  report(2, "order-error ladder", bands && ordered,
         fmt("dim 2048: n=1 %.3f%% [1,5], n=2 %.4f%% [0.05,0.5], n=4 %.5f%%; strict order at all dims: %s",
             100 * e1.rel_err, 100 * e2.rel_err, 100 * e4.rel_err, ordered ? "yes" : "no"));

  report(3, "speedup", e4.speedup >= kMinSpeedup,
         fmt("dim 2048: exact %.1f ms, order 4 %.1f ms, ratio %.2fx (need >= %.0fx)", e4.exact_ms,
             e4.approx_ms, e4.speedup, kMinSpeedup));
}

void dual_gap_criterion() {
  const std::pair<std::size_t, std::size_t> shapes[] = {{8, 8}, {32, 8}, {8, 32}, {256, 64}};
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& [d, m] : shapes) {
    for (int seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(seed));
      const Matrix z1 = random_unit_columns(d, m, rng);
      const Matrix z2 = random_unit_columns(d, m, rng);
      worst = std::max(worst, dual_gap(z1, z2, mec_cfg(m, d, kGuardEps, 4, true)));
    }
  }
  const double elapsed = seconds_since(t0);
  report(4, "sylvester duality", worst < kDualGapTol && elapsed < kDualGapMaxSeconds,
         fmt("max gap %.2e over 100 seeds x 4 shapes (< 1e-9), %.2f s (< 30 s)", worst, elapsed));
}

void first_order_criterion() {
  double worst = 0.0;
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(2000 + static_cast<std::uint64_t>(seed));
    const std::size_t d = 64;
    const std::size_t m = 32;
    const Matrix z1 = random_unit_columns(d, m, rng);
    const Matrix z2 = random_unit_columns(d, m, rng);
    const MecLossConfig cfg = mec_cfg(m, d, kGuardEps, 1, false);
    const double lhs = mec_loss(z1, z2, cfg).value;
    const double rhs = cfg.coding.mu() * cfg.coding.lambda() * simsiam_loss(z1, z2).value;
    worst = std::max(worst, std::abs(lhs - rhs) / std::abs(rhs));
  }
  report(5, "first-order identity", worst < kFirstOrderTol,
         fmt("max rel dev %.2e between mec(n=1) and mu*lambda*simsiam, 50 seeds (< 1e-12)", worst));
}

void second_order_criterion() {
  double shared = 0.0;
  double cross = 0.0;
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(3000 + static_cast<std::uint64_t>(seed));
    const std::size_t d = 16;
    const std::size_t m = 24;
    const MecLossConfig cfg = mec_cfg(m, d, kGuardEps, 2, false, Form::Feature);
    const double mu = cfg.coding.mu();
    const double lambda = cfg.coding.lambda();

    const Matrix z = random_unit_columns(d, m, rng);
    Matrix c = gram(z, z, Side::Feature);
    c *= lambda;
    const SecondOrderTerms ts = second_order_terms(c, mu);
    const double ls = mec_loss(z, z, cfg).value;
    shared = std::max(shared, std::abs(ts.diagonal + ts.off_diagonal_squared - ls) / std::abs(ls));

    const Matrix z1 = random_unit_columns(d, m, rng);
    const Matrix z2 = random_unit_columns(d, m, rng);
    Matrix c12 = gram(z1, z2, Side::Feature);
    c12 *= lambda;
    const SecondOrderTerms tc = second_order_terms(c12, mu);
    const double lc = mec_loss(z1, z2, cfg).value;
    cross = std::max(cross, std::abs(tc.diagonal + tc.off_diagonal_cross - lc) / std::max(1.0, std::abs(lc)));
  }
  report(6, "second-order identity", shared < kSecondOrderTol && cross < kSecondOrderTol,
         fmt("max rel dev %.2e (shared view), %.2e (two views, transposed pairing), 50 seeds (< 1e-10)",
             shared, cross));
}

void guard_criterion() {
  std::mt19937_64 rng(4000);
  std::uniform_int_distribution<std::size_t> dim(2, 64);
  std::uniform_int_distribution<std::size_t> batch(1, 64);
  double max_holder = 0.0;
  double max_power = 0.0;
  double max_excess = -1.0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t d = dim(rng);
    const std::size_t m = batch(rng);
    const CodingConfig coding(m, d, kGuardEps);
    const Matrix z1 = random_unit_columns(d, m, rng);
    const Matrix z2 = random_unit_columns(d, m, rng);
    Matrix c = gram(z1, z2, Side::Batch);
    c *= coding.lambda();
    const SpectralBound b = spectral_bound(c);
    max_holder = std::max(max_holder, b.holder_bound);
    max_power = std::max(max_power, b.power_iter_estimate);
    max_excess = std::max(max_excess, b.power_iter_estimate - b.holder_bound);
  }
  report(7, "convergence guard",
         max_holder <= kGuardHolderMax + 1e-15 && max_power < 1.0 && max_excess <= kGuardSlack,
         fmt("1e4 batches at eps_d^2=1.25: max holder %.4f (<= 0.8), max power %.4f (< 1), "
             "max power-holder %.2e (<= 1e-9)",
             max_holder, max_power, max_excess));
}

void gradient_criterion() {
  double worst = 0.0;
  int suites = 0;
  auto track = [&](double v) {
    worst = std::max(worst, v);
    ++suites;
  };
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(5000 + static_cast<std::uint64_t>(seed));
    const std::size_t d = 12;
    const std::size_t m = 10;
    const Matrix z1 = random_unit_columns(d, m, rng);
    const Matrix z2 = random_unit_columns(d, m, rng);
    for (Form form : {Form::Batch, Form::Feature}) {
      track(mec_gradcheck(z1, z2, mec_cfg(m, d, kGuardEps, 4, true, form), kGradStep));
      for (int n : {1, 2, 4}) track(mec_gradcheck(z1, z2, mec_cfg(m, d, kGuardEps, n, false, form), kGradStep));
    }
    track(gradcheck(simsiam_loss, z1, z2, kGradStep));
    for (BarlowNorm norm : {BarlowNorm::L2, BarlowNorm::BatchNorm}) {
      BaselineConfig bc;
      bc.kind = BaselineKind::Barlow;
      bc.normalization = norm;
      track(gradcheck([&](const Matrix& a, const Matrix& b) { return barlow_loss(a, b, bc); }, z1, z2, kGradStep));
    }
    BaselineConfig nce;
    nce.kind = BaselineKind::InfoNce;
    nce.temperature = 0.5;
    track(gradcheck([&](const Matrix& a, const Matrix& b) { return infonce_loss(a, b, nce); }, z1, z2, kGradStep));
    for (BaselineKind kind : {BaselineKind::SimSiam, BaselineKind::Barlow, BaselineKind::InfoNce}) {
      BaselineConfig base;
      base.kind = kind;
      base.temperature = 0.5;
      const CompositeConfig cc{base, mec_cfg(m, d, kGuardEps, 4, false), 1.0};
      track(gradcheck([&](const Matrix& a, const Matrix& b) { return composite_loss(a, b, cc); }, z1, z2, kGradStep));
    }
  }
  report(8, "gradient correctness", worst < kGradTol,
         fmt("max rel err %.2e over %d checks (mec exact/n=1,2,4 x batch/feature, simsiam, barlow, "
             "infonce, composite; h=1e-5; < 1e-4)",
             worst, suites));
}

struct RunSummary {
  TrainResult result;
  double seconds = 0.0;
};

RunSummary run(const TrainConfig& cfg, const DatasetHandle& data) {
  const auto t0 = Clock::now();
  RunSummary s{train(cfg, data), 0.0};
  s.seconds = seconds_since(t0);
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void training_criteria() {
  const DatasetHandle data = gen_synthetic(SyntheticSpec{});
  const double chance = 1.0 / data.num_classes();
  const TrainConfig defaults;
  const double erank_threshold =
      kErankFraction * static_cast<double>(std::min<std::size_t>(
                           defaults.shape.embed_dim, std::min(data.count(Split::Eval), defaults.eval_max_samples)));
  const double knn_threshold = kKnnChanceMultiple * chance;

  // MEC, symmetric, direct weight sharing.
  const auto t0 = Clock::now();
  int ok = 0;
  int grew = 0;
  double min_erank = 1e300;
  double min_knn = 1e300;
  double min_growth = 1e300;
  std::string failed_seeds;
  for (int seed = 1; seed <= kMecSeeds; ++seed) {
    TrainConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    std::string failure;
    try {
      const RunSummary s = run(cfg, data);
      const EpochMetrics& last = s.result.log.back();
      min_erank = std::min(min_erank, last.effective_rank);
      min_knn = std::min(min_knn, last.knn_acc);
      const double growth = last.coding_length - s.result.initial.coding_length;
      min_growth = std::min(min_growth, growth);
      if (last.effective_rank >= erank_threshold && last.knn_acc >= knn_threshold) ++ok;
      if (growth > 0.0) ++grew;
      std::printf("      mec seed %2d: erank %.2f knn %.4f coding_length %.1f -> %.1f (%.1f s)\n", seed,
                  last.effective_rank, last.knn_acc, s.result.initial.coding_length, last.coding_length,
                  s.seconds);
    } catch (const std::exception& e) {
      std::printf("      mec seed %2d: %s\n", seed, e.what());
      failed_seeds += " " + std::to_string(seed);
    }
  }

  // SimSiam without predictor or stop-gradient is expected to collapse.
  TrainConfig sym;
  sym.loss = LossKind::SimSiam;
  sym.seed = 1;
  const RunSummary collapsed = run(sym, data);
  const double collapsed_erank = collapsed.result.log.back().effective_rank;
  std::printf("      simsiam symmetric seed 1: erank %.2f knn %.4f (%.1f s)\n", collapsed_erank,
              collapsed.result.log.back().knn_acc, collapsed.seconds);
  const double elapsed = seconds_since(t0);

  // Regulation: composite simsiam + MEC against asymmetric SimSiam.
  std::vector<double> base_knn;
  std::vector<double> comp_knn;
  for (int seed = 1; seed <= kRegulationSeeds; ++seed) {
    TrainConfig simsiam;
    simsiam.loss = LossKind::SimSiam;
    simsiam.symmetric = false;
    simsiam.seed = static_cast<std::uint64_t>(seed);
    TrainConfig composite = simsiam;
    composite.loss = LossKind::Composite;
    composite.eps_d_sq = kGuardEps;
    composite.normalize_by_mu = false;
    const RunSummary a = run(simsiam, data);
    const RunSummary b = run(composite, data);
    base_knn.push_back(a.result.log.back().knn_acc);
    comp_knn.push_back(b.result.log.back().knn_acc);
    std::printf("      seed %d: simsiam knn %.4f, composite knn %.4f\n", seed, base_knn.back(),
                comp_knn.back());
  }
  const double mb = median(base_knn);
  const double mc = median(comp_knn);
  report(9, "collapse avoidance",
         ok == kMecSeeds && collapsed_erank < kCollapseErankMax && elapsed < kTrainingMaxSeconds,
         fmt("mec %d/%d seeds with erank >= %.0f and knn >= %.3f (min erank %.2f, min knn %.4f); "
             "symmetric simsiam erank %.2f (< 2); %.0f s (< 1800 s)",
             ok, kMecSeeds, erank_threshold, knn_threshold, min_erank, min_knn, collapsed_erank, elapsed));
  report(10, "regulation effect", mc >= mb,
         fmt("median knn over %d seeds: composite %.4f vs simsiam %.4f", kRegulationSeeds, mc, mb));
  report(11, "entropy growth", grew == kMecSeeds,
         fmt("coding length grew in %d/%d mec runs (min growth %.1f)", grew, kMecSeeds, min_growth));

}

}  // namespace

int main() {
  std::printf("acceptance: %s\n", "kernel, identity, guard, gradient and training criteria");
  bench_criteria();
  dual_gap_criterion();
  first_order_criterion();
  second_order_criterion();
  guard_criterion();
  gradient_criterion();
  training_criteria();
  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
