#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "mec/bench.hpp"
#include "mec/config.hpp"
#include "mec/encoder.hpp"
#include "mec/trainer.hpp"
#include "mec/verify.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool dry_run = false;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

mec::RunConfig resolve_config(const Globals& g) {
  mec::RunConfig cfg;
  if (!g.config.empty()) cfg = mec::load_config(g.config);
  if (g.seed) {
    cfg.train.seed = *g.seed;
    cfg.bench.seed = *g.seed;
  }
  return cfg;
}

mec::DatasetHandle resolve_dataset(const mec::DataConfig& data) {
  if (data.source != mec::DataSource::Synthetic && !fs::exists(data.path)) {
    throw UsageError("dataset not found: " + data.path.string());
  }
  return mec::load_dataset(data);
}

void print_collapse(const mec::EncoderParams& params, const mec::DatasetHandle& data,
                    const mec::TrainConfig& cfg) {
  mec::Matrix eval = data.unlabeled(mec::Split::Eval);
  const mec::Matrix z = params.embeddings(eval);
  const mec::CodingConfig coding(z.cols(), z.rows(), cfg.eps_d_sq, cfg.order);
  const mec::CollapseReport r = mec::collapse_report(mec::EmbeddingBatch(z), coding);
  std::printf("collapse report: effective_rank=%.4f mean_pairwise_cos=%.4f coding_length=%.4f\n",
              r.effective_rank, r.mean_pairwise_cos, r.coding_length);
}

int cmd_bench(const Globals& g) {
  const mec::RunConfig cfg = resolve_config(g);
  if (g.dry_run) {
    std::printf("bench config ok: %zu dims, %zu orders, %d repetitions\n", cfg.bench.dims.size(),
                cfg.bench.orders.size(), cfg.bench.repetitions);
    return kOk;
  }
  const std::vector<mec::BenchRow> rows = mec::run_bench(cfg.bench, &std::cerr);
  mec::write_bench_csv(rows, std::cout);
  const fs::path out = g.out.empty() ? fs::path("bench.csv") : fs::path(g.out);
  {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out.string());
    mec::write_bench_csv(rows, f);
  }
  const fs::path script = out.parent_path() / (out.stem().string() + "_plot.py");
  std::ofstream(script) << mec::bench_plot_script(out.filename().string());
  std::cerr << "wrote " << out.string() << " and " << script.string() << '\n';
  if (!mec::bench_accuracy_ok(rows)) {
    std::cerr << "FAIL: an order-4 relative error is >= 0.5%\n";
    return kFail;
  }
  return kOk;
}

int cmd_verify(const Globals& g, bool mutate) {
  (void)resolve_config(g);
  mec::VerifyOptions opts;
  opts.corrupt_taylor_coefficient = mutate;
  if (g.dry_run) {
    std::printf("verify: %d seeds, %d guard batches\n", opts.seeds, opts.guard_batches);
    return kOk;
  }
  const auto checks = mec::run_verify(opts);
  mec::print_verify_table(checks, std::cout);
  return mec::all_pass(checks) ? kOk : kFail;
}

int cmd_train(const Globals& g) {
  const mec::RunConfig cfg = resolve_config(g);
  const mec::TrainConfig& t = cfg.train;
  if (g.dry_run) {
    const mec::CodingConfig coding(t.batch_size, t.shape.embed_dim, t.eps_d_sq, t.order);
    std::printf("config ok\nm=%zu d=%zu eps_d_sq=%g order=%d\nmu=%.17g\nlambda=%.17g\nlambda*m=%.17g\n",
                coding.m, coding.d, coding.eps_d_sq, coding.order, coding.mu(), coding.lambda(),
                coding.holder_worst_case());
    return kOk;
  }
  const mec::DatasetHandle data = resolve_dataset(cfg.data);
  const fs::path out = g.out.empty() ? fs::path("run") : fs::path(g.out);
  fs::create_directories(out);

  const mec::TrainResult result = mec::train(t, data, [](const mec::EpochMetrics& m) {
    std::fprintf(stderr, "epoch %zu loss %.6f coding_length %.3f erank %.3f knn %.4f lr %.4g\n",
                 m.epoch, m.loss, m.coding_length, m.effective_rank, m.knn_acc, m.lr);
  });
  mec::write_metrics_csv(result.log, out / "metrics.csv");
  mec::save_params(result.params, out / "params.mec1");
  std::printf("final knn accuracy: %.4f\n", result.log.back().knn_acc);
  print_collapse(result.params, data, t);
  std::printf("wrote %s and %s\n", (out / "metrics.csv").string().c_str(),
              (out / "params.mec1").string().c_str());
  return kOk;
}

int cmd_probe(const Globals& g, const std::string& params_path) {
  const mec::RunConfig cfg = resolve_config(g);
  if (g.dry_run) return kOk;
  const mec::DatasetHandle data = resolve_dataset(cfg.data);
  const mec::EncoderParams params = mec::load_params(params_path);
  if (params.input_dim() != data.input_dim()) {
    throw UsageError("params expect input_dim " + std::to_string(params.input_dim()) + ", dataset has " +
                     std::to_string(data.input_dim()));
  }
  std::printf("knn accuracy (k=%zu): %.4f\n", cfg.train.knn_k,
              mec::knn_probe(params, data, cfg.train.knn_k));
  print_collapse(params, data, cfg.train);
  return kOk;
}

int cmd_export(const Globals& g, const std::string& params_path, const std::string& data_csv) {
  mec::RunConfig cfg = resolve_config(g);
  if (!data_csv.empty()) {
    cfg.data.source = mec::DataSource::Csv;
    cfg.data.path = data_csv;
  }
  if (g.dry_run) return kOk;
  const mec::DatasetHandle data = resolve_dataset(cfg.data);
  const mec::EncoderParams params = mec::load_params(params_path);
  if (params.input_dim() != data.input_dim()) {
    throw UsageError("dim mismatch: params expect input_dim " + std::to_string(params.input_dim()) +
                     ", dataset has " + std::to_string(data.input_dim()));
  }
  const fs::path out = g.out.empty() ? fs::path("embeddings.csv") : fs::path(g.out);
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out.string());
  const mec::Matrix feats = params.features(data.samples());
  f << "id,label";
  for (std::size_t j = 0; j < feats.cols(); ++j) f << ",e" << j;
  f << '\n';
  char buf[32];
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    f << i << ',' << data.labels()[i];
    for (double v : feats.row(i)) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      f << buf;
    }
    f << '\n';
  }
  std::printf("wrote %zu rows to %s\n", feats.rows(), out.string().c_str());
  return kOk;
}

std::string keys_footer() {
  std::string s = "\nConfig keys (key = value, # comments):\n";
  for (const auto& k : mec::config_keys()) s += "  " + k.key + "  " + k.help + "\n";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximum-entropy coding toolkit: kernels, losses, training and benchmarks"};
  app.footer(keys_footer());
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Config file (key = value)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed override for training and benchmarks");
  app.add_option("--out", g.out, "Output path (file for bench/export, directory for train)");
  app.add_flag("--dry-run", g.dry_run, "Validate the configuration and exit");

  auto* bench = app.add_subcommand("bench", "Time exact vs truncated log-det, write CSV");
  auto* verify = app.add_subcommand("verify", "Run the identity and gradient suites");
  bool mutate = false;
  verify->add_flag("--mutate-taylor", mutate, "Corrupt a Taylor coefficient (mutation fixture)");
  auto* train = app.add_subcommand("train", "Train an encoder, write metrics and parameters");
  auto* probe = app.add_subcommand("probe", "kNN probe and collapse report for saved parameters");
  std::string probe_params;
  probe->add_option("--params", probe_params, "MEC1 parameter file")->required()->check(CLI::ExistingFile);
  auto* exp = app.add_subcommand("export-embeddings", "Write backbone features as CSV");
  std::string exp_params;
  std::string exp_data;
  exp->add_option("--params", exp_params, "MEC1 parameter file")->required()->check(CLI::ExistingFile);
  exp->add_option("--data", exp_data, "CSV dataset (defaults to the configured dataset)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*bench) return cmd_bench(g);
    if (*verify) return cmd_verify(g, mutate);
    if (*train) return cmd_train(g);
    if (*probe) return cmd_probe(g, probe_params);
    if (*exp) return cmd_export(g, exp_params, exp_data);
  } catch (const mec::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const mec::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFail;
  }
  return kUsage;
}
