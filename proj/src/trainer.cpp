#include "mec/trainer.hpp"

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>

namespace mec {

void AugmentPolicy::validate() const {
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("augment: noise_sigma must be >= 0");
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) {
    throw std::invalid_argument("augment: mask_prob must be in [0, 1]");
  }
  if (!(jitter_lo > 0.0 && jitter_lo <= jitter_hi)) {
    throw std::invalid_argument("augment: need 0 < jitter_lo <= jitter_hi");
  }
}

std::vector<double> augment(std::span<const double> x, std::mt19937_64& rng,
                            const AugmentPolicy& policy) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) {
    v += policy.noise_sigma * gauss(rng);
    if (uni(rng) < policy.mask_prob) v = 0.0;
  }
  const double jitter = policy.jitter_lo + (policy.jitter_hi - policy.jitter_lo) * uni(rng);
  for (double& v : out) v *= jitter;
  return out;
}

Matrix augment_batch(const Matrix& x, std::mt19937_64& rng, const AugmentPolicy& policy) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto v = augment(x.row(r), rng, policy);
    std::copy(v.begin(), v.end(), out.row(r).begin());
  }
  return out;
}

double EmaSchedule::at(std::size_t step) const {
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(total_steps, 1)));
  return 1.0 - (1.0 - start) * (std::cos(std::numbers::pi * t) + 1.0) / 2.0;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (!(eps_d_sq > 0.0)) throw std::invalid_argument("train: eps_d_sq must be > 0");
  if (order < 1) throw std::invalid_argument("train: order must be >= 1");
  if (!(base_lr > 0.0)) throw std::invalid_argument("train: base_lr must be > 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw std::invalid_argument("train: warmup_fraction must be in [0, 1)");
  }
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) {
    throw std::invalid_argument("train: ema_momentum must be in [0, 1)");
  }
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) {
    throw std::invalid_argument("train: sgd_momentum must be in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (!(reg_weight >= 0.0)) throw std::invalid_argument("train: reg_weight must be >= 0");
  if (knn_k < 1) throw std::invalid_argument("train: knn_k must be >= 1");
  baseline.validate();
  augment.validate();
}

MecLossConfig TrainConfig::mec_config(std::size_t m, double lambda) const {
  MecLossConfig c;
  c.coding = CodingConfig(m, shape.embed_dim, 1.0 / (static_cast<double>(m) * lambda), order);
  c.form = form;
  c.exact = exact;
  c.normalize_by_mu = normalize_by_mu;
  return c;
}

TrainingError::TrainingError(const std::string& what, std::size_t epoch, std::size_t step)
    : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step) + ")"),
      epoch_(epoch),
      step_(step) {}

namespace {

// z is N x d (one embedding per row); losses take d x N.
LossResult evaluate_loss(const TrainConfig& cfg, const Matrix& online_rows,
                         const Matrix& other_rows, double lambda) {
  const Matrix a = online_rows.transposed();
  const Matrix b = other_rows.transposed();
  const std::size_t m = a.cols();
  LossResult r;
  switch (cfg.loss) {
    case LossKind::Mec:
      r = mec_loss(a, b, cfg.mec_config(m, lambda));
      break;
    case LossKind::SimSiam: {
      BaselineConfig bc = cfg.baseline;
      bc.kind = BaselineKind::SimSiam;
      r = baseline_loss(a, b, bc);
      break;
    }
    case LossKind::Barlow: {
      BaselineConfig bc = cfg.baseline;
      bc.kind = BaselineKind::Barlow;
      r = baseline_loss(a, b, bc);
      break;
    }
    case LossKind::InfoNce: {
      BaselineConfig bc = cfg.baseline;
      bc.kind = BaselineKind::InfoNce;
      r = baseline_loss(a, b, bc);
      break;
    }
    case LossKind::Composite: {
      CompositeConfig cc{cfg.baseline, cfg.mec_config(m, lambda), cfg.reg_weight};
      r = composite_loss(a, b, cc);
      break;
    }
  }
  r.grad_z1 = r.grad_z1.transposed();
  r.grad_z2 = r.grad_z2.transposed();
  return r;
}

struct BranchPass {
  MlpCache backbone;
  MlpCache projector;
  MlpCache predictor;
  Matrix projected;  // normalized projector output, N x d
  Matrix head;       // normalized predictor output (or projected), N x d
  std::vector<double> head_norms;
  bool has_predictor = false;
};

BranchPass forward_branch(const EncoderParams& p, const Matrix& x, bool use_predictor) {
  BranchPass b;
  const Matrix h = p.backbone.forward(x, Mode::Train, &b.backbone);
  const Matrix y = p.projector.forward(h, Mode::Train, &b.projector);
  if (use_predictor && p.predictor) {
    b.has_predictor = true;
    b.projected = l2_normalize_rows(y);
    const Matrix q = p.predictor->forward(y, Mode::Train, &b.predictor);
    b.head = l2_normalize_rows(q, &b.head_norms);
  } else {
    b.head = l2_normalize_rows(y, &b.head_norms);
    b.projected = b.head;
  }
  return b;
}

Matrix target_embeddings(const EncoderParams& p, const Matrix& x) {
  const Matrix h = p.backbone.forward(x, Mode::Train);
  return l2_normalize_rows(p.projector.forward(h, Mode::Train));
}

void backward_branch(const EncoderParams& p, const BranchPass& b, const Matrix& dhead,
                     StepGrads& g) {
  Matrix d = l2_normalize_rows_backward(b.head, b.head_norms, dhead);
  if (b.has_predictor) d = p.predictor->backward(b.predictor, d, g.predictor);
  d = p.projector.backward(b.projector, d, g.projector);
  p.backbone.backward(b.backbone, d, g.backbone);
}

void ema_update(EncoderParams& target, EncoderParams& online, double tau) {
  std::vector<Matrix*> dst;
  std::vector<Matrix*> src;
  target.backbone.for_each_param([&](Matrix& m) { dst.push_back(&m); });
  target.projector.for_each_param([&](Matrix& m) { dst.push_back(&m); });
  online.backbone.for_each_param([&](Matrix& m) { src.push_back(&m); });
  online.projector.for_each_param([&](Matrix& m) { src.push_back(&m); });
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto t = dst[i]->data();
    const auto o = src[i]->data();
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = tau * t[k] + (1.0 - tau) * o[k];
  }
}

double learning_rate(double peak, std::size_t step, std::size_t warmup, std::size_t total) {
  if (step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::size_t>(total - warmup, 1));
  const double t = static_cast<double>(step - warmup) / span;
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct SgdState {
  std::vector<Matrix> velocity;
};

void sgd_apply(Mlp& mlp, MlpGrads& grads, SgdState& state, std::size_t& slot, double lr,
               const TrainConfig& cfg) {
  mlp.for_each_param(grads, [&](Matrix& w, Matrix& g) {
    if (state.velocity.size() <= slot) state.velocity.emplace_back(w.rows(), w.cols());
    auto v = state.velocity[slot++].data();
    auto wd = w.data();
    const auto gd = g.data();
    for (std::size_t i = 0; i < wd.size(); ++i) {
      v[i] = cfg.sgd_momentum * v[i] + gd[i] + cfg.weight_decay * wd[i];
      wd[i] -= lr * v[i];
    }
  });
}

EpochMetrics evaluate(const TrainConfig& cfg, const EncoderParams& online, const Matrix& bank,
                      const std::vector<int>& bank_labels, const Matrix& eval,
                      const std::vector<int>& eval_labels) {
  EpochMetrics m;
  const Matrix z = online.embeddings(eval);
  const CodingConfig coding(z.cols(), z.rows(), cfg.eps_d_sq, cfg.order);
  m.coding_length = coding_length(z, coding);
  m.effective_rank = effective_rank(z);
  m.knn_acc = knn_accuracy(online.features(bank), bank_labels, online.features(eval), eval_labels,
                           cfg.knn_k);
  return m;
}

}  // namespace

StepGrads siamese_step_grads(const TrainConfig& cfg, EncoderParams& online,
                             const EncoderParams* target, const Matrix& x1, const Matrix& x2,
                             double lambda, bool absorb_stats) {
  StepGrads g;
  g.backbone = online.backbone.zero_grads();
  g.projector = online.projector.zero_grads();
  if (online.predictor) g.predictor = online.predictor->zero_grads();

  const bool asymmetric = !cfg.symmetric;
  const BranchPass b1 = forward_branch(online, x1, asymmetric);
  const BranchPass b2 = forward_branch(online, x2, asymmetric);

  if (!asymmetric && target == nullptr) {
    // Direct weight sharing: gradients flow through both views.
    const LossResult r = evaluate_loss(cfg, b1.head, b2.head, lambda);
    g.loss = r.value;
    backward_branch(online, b1, r.grad_z1, g);
    backward_branch(online, b2, r.grad_z2, g);
  } else {
    // The second argument is a stop-gradient target: EMA outputs or detached
    // online projections. Averaged over both view orders.
    const Matrix t1 = target ? target_embeddings(*target, x1) : b1.projected;
    const Matrix t2 = target ? target_embeddings(*target, x2) : b2.projected;
    const LossResult r12 = evaluate_loss(cfg, b1.head, t2, lambda);
    const LossResult r21 = evaluate_loss(cfg, b2.head, t1, lambda);
    g.loss = 0.5 * (r12.value + r21.value);
    backward_branch(online, b1, r12.grad_z1 * 0.5, g);
    backward_branch(online, b2, r21.grad_z1 * 0.5, g);
  }

  if (absorb_stats) {
    for (const BranchPass* b : {&b1, &b2}) {
      online.backbone.absorb_batch_stats(b->backbone);
      online.projector.absorb_batch_stats(b->projector);
      if (b->has_predictor) online.predictor->absorb_batch_stats(b->predictor);
    }
  }
  return g;
}

TrainResult train(const TrainConfig& cfg_in, const DatasetHandle& data,
                  const EpochCallback& on_epoch) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train: dataset is empty");
  cfg.shape.input_dim = data.input_dim();
  if (cfg.symmetric) {
    cfg.shape.predictor_hidden = 0;
  } else if (cfg.shape.predictor_hidden == 0) {
    cfg.shape.predictor_hidden = std::max<std::size_t>(cfg.shape.embed_dim / 4, 1);
  }

  const Matrix train_x = data.unlabeled(Split::Train);
  const std::size_t m = cfg.batch_size;
  if (train_x.rows() < m) {
    throw std::invalid_argument("train: train split has " + std::to_string(train_x.rows()) +
                                " samples, fewer than batch_size " + std::to_string(m));
  }
  if (data.count(Split::Eval) < 2) throw std::invalid_argument("train: eval split needs >= 2 samples");

  // Probe-only views; the optimization loop below only touches train_x.
  Matrix eval_x = data.unlabeled(Split::Eval);
  std::vector<int> eval_labels = data.labels_of(Split::Eval);
  if (eval_x.rows() > cfg.eval_max_samples) {
    Matrix trimmed(cfg.eval_max_samples, eval_x.cols());
    for (std::size_t r = 0; r < trimmed.rows(); ++r) {
      std::copy(eval_x.row(r).begin(), eval_x.row(r).end(), trimmed.row(r).begin());
    }
    eval_x = std::move(trimmed);
    eval_labels.resize(cfg.eval_max_samples);
  }
  const std::vector<int> bank_labels = data.labels_of(Split::Train);

  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  result.params = make_encoder(cfg.shape, rng);
  EncoderParams& online = result.params;
  std::optional<EncoderParams> target;
  if (cfg.ema_momentum > 0.0) {
    target = online;
    target->predictor.reset();
  }

  const std::size_t steps_per_epoch = train_x.rows() / m;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const auto warmup_steps = static_cast<std::size_t>(
      std::llround(cfg.warmup_fraction * static_cast<double>(total_steps)));
  const double base_lambda = 1.0 / (static_cast<double>(m) * cfg.eps_d_sq);
  const EmaSchedule ema{cfg.ema_momentum, total_steps};

  result.initial = evaluate(cfg, online, train_x, bank_labels, eval_x, eval_labels);

  SgdState sgd;
  std::vector<std::size_t> order(train_x.rows());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double lr = 0.0;
    double tau = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      Matrix batch(m, train_x.cols());
      for (std::size_t r = 0; r < m; ++r) {
        const auto src = train_x.row(order[s * m + r]);
        std::copy(src.begin(), src.end(), batch.row(r).begin());
      }
      const Matrix x1 = augment_batch(batch, rng, cfg.augment);
      const Matrix x2 = augment_batch(batch, rng, cfg.augment);
      const double lambda =
          cfg.lambda_warmup ? lambda_schedule(base_lambda, step, warmup_steps) : base_lambda;

      StepGrads g = siamese_step_grads(cfg, online, target ? &*target : nullptr, x1, x2, lambda,
                                       /*absorb_stats=*/true);
      if (!std::isfinite(g.loss)) throw TrainingError("non-finite loss", epoch, step);
      loss_sum += g.loss;

      lr = learning_rate(cfg.scaled_lr(), step, warmup_steps, total_steps);
      std::size_t slot = 0;
      sgd_apply(online.backbone, g.backbone, sgd, slot, lr, cfg);
      sgd_apply(online.projector, g.projector, sgd, slot, lr, cfg);
      if (online.predictor) sgd_apply(*online.predictor, g.predictor, sgd, slot, lr, cfg);
      if (target) {
        tau = ema.at(step);
        ema_update(*target, online, tau);
      }
    }
    if (!online.all_finite()) throw TrainingError("non-finite parameters", epoch, step);

    EpochMetrics em = evaluate(cfg, online, train_x, bank_labels, eval_x, eval_labels);
    em.epoch = epoch;
    em.loss = loss_sum / static_cast<double>(steps_per_epoch);
    em.lr = lr;
    em.ema = tau;
    result.log.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  if (target) result.target = std::move(target);
  return result;
}

double effective_rank(const Matrix& z) {
  if (z.empty()) throw std::invalid_argument("effective_rank: empty matrix");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMajor> view(z.data().data(), static_cast<Eigen::Index>(z.rows()),
                                        static_cast<Eigen::Index>(z.cols()));
  const Eigen::MatrixXd dense = view;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(dense);
  const auto& s = svd.singularValues();
  const double total = s.sum();
  if (!(total > 0.0)) return 1.0;
  double entropy = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double p = s[i] / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  const double cap = static_cast<double>(std::min(z.rows(), z.cols()));
  return std::clamp(std::exp(entropy), 1.0, cap);
}

double coding_length(const Matrix& z, const CodingConfig& cfg) {
  if (z.rows() != cfg.d || z.cols() != cfg.m) {
    throw ShapeError("coding_length: config expects " + std::to_string(cfg.d) + "x" +
                     std::to_string(cfg.m) + ", got " + z.shape_string());
  }
  // Sylvester: both Gram sides share their log-determinant.
  Matrix c = cfg.d < cfg.m ? gram(z, z, Side::Feature) : gram(z, z, Side::Batch);
  c *= cfg.lambda();
  return cfg.mu() * logdet_ipc(c);
}

CollapseReport collapse_report(const EmbeddingBatch& embeddings, const CodingConfig& cfg) {
  const Matrix& z = embeddings.matrix();
  const std::size_t n = z.cols();
  if (n < 2) throw std::invalid_argument("collapse_report: need at least 2 samples");
  CollapseReport r;
  r.effective_rank = effective_rank(z);
  std::vector<double> sum(z.rows(), 0.0);
  double self = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      sum[i] += z(i, j);
      self += z(i, j) * z(i, j);
    }
  }
  double total = 0.0;
  for (double s : sum) total += s * s;
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1);
  r.mean_pairwise_cos = std::clamp((total - self) / pairs, -1.0, 1.0);
  r.coding_length = coding_length(z, cfg);
  return r;
}

double knn_accuracy(const Matrix& bank, const std::vector<int>& bank_labels, const Matrix& queries,
                    const std::vector<int>& query_labels, std::size_t k) {
  if (bank.rows() == 0 || queries.rows() == 0) throw std::invalid_argument("knn: empty split");
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
  if (bank.rows() != bank_labels.size() || queries.rows() != query_labels.size()) {
    throw ShapeError("knn: labels do not match features");
  }
  if (bank.cols() != queries.cols()) throw ShapeError("knn: feature widths differ");
  const Matrix b = l2_normalize_rows(bank);
  const Matrix q = l2_normalize_rows(queries);
  const Matrix sims = matmul(q, b, Trans::No, Trans::Yes);
  const std::size_t kk = std::min(k, bank.rows());

  std::size_t correct = 0;
  std::vector<std::size_t> idx(bank.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto row = sims.row(i);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(),
                      [&](std::size_t a, std::size_t c) {
                        return row[a] != row[c] ? row[a] > row[c] : a < c;
                      });
    std::map<int, std::pair<std::size_t, double>> votes;
    for (std::size_t j = 0; j < kk; ++j) {
      auto& v = votes[bank_labels[idx[j]]];
      ++v.first;
      v.second += row[idx[j]];
    }
    int best = votes.begin()->first;
    std::pair<std::size_t, double> best_vote = votes.begin()->second;
    for (const auto& [label, vote] : votes) {
      if (vote.first > best_vote.first ||
          (vote.first == best_vote.first && vote.second > best_vote.second)) {
        best = label;
        best_vote = vote;
      }
    }
    if (best == query_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(q.rows());
}

double knn_probe(const EncoderParams& encoder, const DatasetHandle& data, std::size_t k) {
  if (data.count(Split::Train) == 0 || data.count(Split::Eval) == 0) {
    throw std::invalid_argument("knn_probe: empty split");
  }
  return knn_accuracy(encoder.features(data.unlabeled(Split::Train)), data.labels_of(Split::Train),
                      encoder.features(data.unlabeled(Split::Eval)), data.labels_of(Split::Eval), k);
}

void write_metrics_csv(const std::vector<EpochMetrics>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path.string());
  out << "epoch,loss,coding_length,effective_rank,knn_acc,lr,ema\n";
  char buf[256];
  for (const EpochMetrics& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.loss,
                  e.coding_length, e.effective_rank, e.knn_acc, e.lr, e.ema);
    out << buf;
  }
}

}  // namespace mec
