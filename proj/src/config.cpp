#include "mec/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace mec {

ConfigError::ConfigError(const std::string& what, std::string source, std::size_t line)
    : std::runtime_error(source.empty()  ? what
                         : line == 0     ? source + ": " + what
                                         : source + ":" + std::to_string(line) + ": " + what),
      source_(std::move(source)),
      line_(line) {}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected a number");
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("expected a non-negative integer");
  }
  return out;
}

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(to_u64(v)); }

int to_int(const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected an integer");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected true or false");
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& v, F&& parse) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse(trim(item)));
  if (out.empty()) throw std::invalid_argument("expected a comma-separated list");
  return out;
}

template <typename E>
E to_enum(const std::string& v, const std::map<std::string, E>& names) {
  const auto it = names.find(v);
  if (it != names.end()) return it->second;
  std::string options;
  for (const auto& [name, _] : names) options += (options.empty() ? "" : "|") + name;
  throw std::invalid_argument("expected one of " + options);
}

struct KeySpec {
  ConfigKeyDoc doc;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = [] {
    std::vector<KeySpec> s;
    auto add = [&](std::string key, std::string help,
                   std::function<void(RunConfig&, const std::string&)> fn) {
      s.push_back({{std::move(key), std::move(help)}, std::move(fn)});
    };
    const std::map<std::string, LossKind> losses{{"mec", LossKind::Mec},
                                                 {"simsiam", LossKind::SimSiam},
                                                 {"barlow", LossKind::Barlow},
                                                 {"infonce", LossKind::InfoNce},
                                                 {"composite", LossKind::Composite}};
    const std::map<std::string, BaselineKind> baselines{{"simsiam", BaselineKind::SimSiam},
                                                        {"barlow", BaselineKind::Barlow},
                                                        {"infonce", BaselineKind::InfoNce}};

    add("train.loss", "mec|simsiam|barlow|infonce|composite",
        [=](RunConfig& c, const std::string& v) { c.train.loss = to_enum(v, losses); });
    add("train.batch_size", "batch size m",
        [](RunConfig& c, const std::string& v) { c.train.batch_size = to_size(v); });
    add("train.epochs", "number of epochs",
        [](RunConfig& c, const std::string& v) { c.train.epochs = to_size(v); });
    add("train.base_lr", "base learning rate, scaled by batch_size/256",
        [](RunConfig& c, const std::string& v) { c.train.base_lr = to_double(v); });
    add("train.warmup_fraction", "fraction of steps with linear lr warm-up",
        [](RunConfig& c, const std::string& v) { c.train.warmup_fraction = to_double(v); });
    add("train.sgd_momentum", "SGD momentum",
        [](RunConfig& c, const std::string& v) { c.train.sgd_momentum = to_double(v); });
    add("train.weight_decay", "L2 weight decay",
        [](RunConfig& c, const std::string& v) { c.train.weight_decay = to_double(v); });
    add("train.ema_momentum", "EMA start momentum in [0,1); 0 shares weights",
        [](RunConfig& c, const std::string& v) { c.train.ema_momentum = to_double(v); });
    add("train.symmetric", "true: no predictor, no stop-gradient",
        [](RunConfig& c, const std::string& v) { c.train.symmetric = to_bool(v); });
    add("train.knn_k", "neighbours for the kNN probe",
        [](RunConfig& c, const std::string& v) { c.train.knn_k = to_size(v); });
    add("train.eval_max_samples", "cap on evaluation samples per epoch",
        [](RunConfig& c, const std::string& v) { c.train.eval_max_samples = to_size(v); });
    add("train.seed", "training seed",
        [](RunConfig& c, const std::string& v) { c.train.seed = to_u64(v); });

    add("model.backbone_hidden", "comma-separated backbone hidden widths",
        [](RunConfig& c, const std::string& v) { c.train.shape.backbone_hidden = to_list<std::size_t>(v, to_size); });
    add("model.feature_dim", "backbone output width",
        [](RunConfig& c, const std::string& v) { c.train.shape.feature_dim = to_size(v); });
    add("model.projector_hidden", "projector hidden width",
        [](RunConfig& c, const std::string& v) { c.train.shape.projector_hidden = to_size(v); });
    add("model.embed_dim", "embedding dimension d",
        [](RunConfig& c, const std::string& v) { c.train.shape.embed_dim = to_size(v); });
    add("model.predictor_hidden", "predictor hidden width (asymmetric only; 0 = d/4)",
        [](RunConfig& c, const std::string& v) { c.train.shape.predictor_hidden = to_size(v); });

    add("mec.eps_d_sq", "per-dimension squared distortion",
        [](RunConfig& c, const std::string& v) { c.train.eps_d_sq = to_double(v); });
    add("mec.order", "Taylor truncation order",
        [](RunConfig& c, const std::string& v) { c.train.order = to_int(v); });
    add("mec.form", "batch|feature|auto",
        [](RunConfig& c, const std::string& v) {
          c.train.form = to_enum(v, std::map<std::string, Form>{
                                        {"batch", Form::Batch}, {"feature", Form::Feature}, {"auto", Form::Auto}});
        });
    add("mec.exact", "use the exact log-det instead of the series",
        [](RunConfig& c, const std::string& v) { c.train.exact = to_bool(v); });
    add("mec.normalize_by_mu", "divide the loss by mu",
        [](RunConfig& c, const std::string& v) { c.train.normalize_by_mu = to_bool(v); });
    add("mec.lambda_warmup", "ramp lambda from lambda/10 over the lr warm-up",
        [](RunConfig& c, const std::string& v) { c.train.lambda_warmup = to_bool(v); });
    add("mec.reg_weight", "MEC weight in the composite loss",
        [](RunConfig& c, const std::string& v) { c.train.reg_weight = to_double(v); });

    add("baseline.kind", "composite base: simsiam|barlow|infonce",
        [=](RunConfig& c, const std::string& v) { c.train.baseline.kind = to_enum(v, baselines); });
    add("baseline.temperature", "InfoNCE temperature",
        [](RunConfig& c, const std::string& v) { c.train.baseline.temperature = to_double(v); });
    add("baseline.lambda_barlow", "Barlow off-diagonal weight",
        [](RunConfig& c, const std::string& v) { c.train.baseline.lambda_barlow = to_double(v); });
    add("baseline.normalization", "Barlow cross-correlation: l2|batchnorm",
        [](RunConfig& c, const std::string& v) {
          c.train.baseline.normalization = to_enum(
              v, std::map<std::string, BarlowNorm>{{"l2", BarlowNorm::L2}, {"batchnorm", BarlowNorm::BatchNorm}});
        });

    add("augment.noise_sigma", "additive Gaussian noise",
        [](RunConfig& c, const std::string& v) { c.train.augment.noise_sigma = to_double(v); });
    add("augment.mask_prob", "coordinate mask probability",
        [](RunConfig& c, const std::string& v) { c.train.augment.mask_prob = to_double(v); });
    add("augment.jitter_lo", "lower scale jitter",
        [](RunConfig& c, const std::string& v) { c.train.augment.jitter_lo = to_double(v); });
    add("augment.jitter_hi", "upper scale jitter",
        [](RunConfig& c, const std::string& v) { c.train.augment.jitter_hi = to_double(v); });

    add("data.source", "synthetic|csv|cifar10",
        [](RunConfig& c, const std::string& v) {
          c.data.source = to_enum(v, std::map<std::string, DataSource>{
                                         {"synthetic", DataSource::Synthetic},
                                         {"csv", DataSource::Csv},
                                         {"cifar10", DataSource::Cifar10}});
        });
    add("data.path", "csv file or cifar-10 batch directory",
        [](RunConfig& c, const std::string& v) { c.data.path = v; });
    add("data.eval_fraction", "held-out fraction for csv data",
        [](RunConfig& c, const std::string& v) { c.data.eval_fraction = to_double(v); });
    add("data.split_seed", "seed of the csv train/eval split",
        [](RunConfig& c, const std::string& v) { c.data.split_seed = to_u64(v); });
    add("data.clusters", "synthetic cluster count",
        [](RunConfig& c, const std::string& v) { c.data.synthetic.num_clusters = to_int(v); });
    add("data.input_dim", "synthetic input dimension",
        [](RunConfig& c, const std::string& v) { c.data.synthetic.input_dim = to_size(v); });
    add("data.per_cluster", "synthetic samples per cluster",
        [](RunConfig& c, const std::string& v) { c.data.synthetic.per_cluster = to_size(v); });
    add("data.center_scale", "synthetic center radius",
        [](RunConfig& c, const std::string& v) { c.data.synthetic.center_scale = to_double(v); });
    add("data.sigma", "synthetic within-cluster sigma",
        [](RunConfig& c, const std::string& v) { c.data.synthetic.sigma = to_double(v); });
    add("data.seed", "synthetic generator seed",
        [](RunConfig& c, const std::string& v) { c.data.synthetic.seed = to_u64(v); });

    add("bench.dims", "comma-separated batch sizes, ascending",
        [](RunConfig& c, const std::string& v) { c.bench.dims = to_list<std::size_t>(v, to_size); });
    add("bench.orders", "comma-separated Taylor orders",
        [](RunConfig& c, const std::string& v) { c.bench.orders = to_list<int>(v, to_int); });
    add("bench.eps_d_sq", "distortion used to build C",
        [](RunConfig& c, const std::string& v) { c.bench.eps_d_sq = to_double(v); });
    add("bench.feature_dim", "embedding dimension of the random batch",
        [](RunConfig& c, const std::string& v) { c.bench.feature_dim = to_size(v); });
    add("bench.repetitions", "timed repetitions (median reported, >= 3)",
        [](RunConfig& c, const std::string& v) { c.bench.repetitions = to_int(v); });
    add("bench.warmup_reps", "untimed warm-up repetitions",
        [](RunConfig& c, const std::string& v) { c.bench.warmup_reps = to_int(v); });
    add("bench.seed", "seed of the random batches",
        [](RunConfig& c, const std::string& v) { c.bench.seed = to_u64(v); });
    return s;
  }();
  return specs;
}

}  // namespace

std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& source) {
  std::vector<ConfigEntry> out;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected `key = value`", source, line_no);
    ConfigEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (e.key.empty()) throw ConfigError("empty key", source, line_no);
    if (e.value.empty()) throw ConfigError("empty value for " + e.key, source, line_no);
    out.push_back(std::move(e));
  }
  return out;
}

void apply_config(const std::vector<ConfigEntry>& entries, RunConfig& cfg, const std::string& source) {
  std::map<std::string, const KeySpec*> index;
  for (const KeySpec& k : key_specs()) index[k.doc.key] = &k;
  std::set<std::string> seen;
  for (const ConfigEntry& e : entries) {
    const auto it = index.find(e.key);
    if (it == index.end()) throw ConfigError("unknown key `" + e.key + "`", source, e.line);
    if (!seen.insert(e.key).second) throw ConfigError("duplicate key `" + e.key + "`", source, e.line);
    try {
      it->second->set(cfg, e.value);
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(e.key + " = " + e.value + ": " + ex.what(), source, e.line);
    }
  }
  try {
    cfg.train.validate();
    cfg.bench.validate();
    cfg.data.synthetic.validate();
    if (!(cfg.data.eval_fraction > 0.0 && cfg.data.eval_fraction < 1.0)) {
      throw std::invalid_argument("data: eval_fraction must be in (0, 1)");
    }
    if (cfg.data.source != DataSource::Synthetic && cfg.data.path.empty()) {
      throw std::invalid_argument("data: data.path is required for csv and cifar10 sources");
    }
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what(), source);
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file", path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  apply_config(parse_config_text(ss.str(), path.string()), cfg, path.string());
  return cfg;
}

const std::vector<ConfigKeyDoc>& config_keys() {
  static const std::vector<ConfigKeyDoc> docs = [] {
    std::vector<ConfigKeyDoc> d;
    for (const KeySpec& k : key_specs()) d.push_back(k.doc);
    return d;
  }();
  return docs;
}

DatasetHandle load_dataset(const DataConfig& cfg) {
  switch (cfg.source) {
    case DataSource::Synthetic:
      return gen_synthetic(cfg.synthetic);
    case DataSource::Csv: {
      DatasetHandle data = load_csv(cfg.path);
      data.assign_split(cfg.eval_fraction, cfg.split_seed);
      return data;
    }
    case DataSource::Cifar10:
      return load_cifar10_bin(cfg.path);
  }
  throw std::logic_error("load_dataset: unknown source");
}

}  // namespace mec
