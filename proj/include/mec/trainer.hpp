#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mec/baselines.hpp"
#include "mec/data.hpp"
#include "mec/encoder.hpp"

namespace mec {

enum class LossKind { Mec, SimSiam, Barlow, InfoNce, Composite };

struct AugmentPolicy {
  double noise_sigma = 0.1;
  double mask_prob = 0.1;
  double jitter_lo = 0.8;
  double jitter_hi = 1.2;

  void validate() const;
};

/// x + sigma * N(0, 1), each coordinate zeroed with probability mask_prob,
/// then scaled by one uniform factor in [jitter_lo, jitter_hi].
std::vector<double> augment(std::span<const double> x, std::mt19937_64& rng,
                            const AugmentPolicy& policy);
/// Row-wise augment of a whole batch.
Matrix augment_batch(const Matrix& x, std::mt19937_64& rng, const AugmentPolicy& policy);

/// EMA momentum rising from `start` to 1 along a half cosine over total_steps.
struct EmaSchedule {
  double start = 0.996;
  std::size_t total_steps = 1;

  double at(std::size_t step) const;
};

struct TrainConfig {
  LossKind loss = LossKind::Mec;
  // MEC coding settings; m and d are filled from batch_size / embed_dim.
  double eps_d_sq = 0.25;  // d / m for the default d=64, m=256
  int order = 4;
  Form form = Form::Auto;
  bool exact = false;
  bool normalize_by_mu = true;
  bool lambda_warmup = true;
  BaselineConfig baseline;  // used by simsiam/barlow/infonce and as composite base
  double reg_weight = 1.0;  // composite only

  EncoderShape shape;
  std::size_t batch_size = 256;
  std::size_t epochs = 200;
  double base_lr = 0.5;  // scaled by batch_size / 256
  double warmup_fraction = 0.1;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-5;
  double ema_momentum = 0.0;  // 0 = direct weight sharing
  bool symmetric = true;      // false: predictor on the online branch + stop-gradient
  AugmentPolicy augment;
  std::size_t knn_k = 20;
  std::size_t eval_max_samples = 4096;
  std::uint64_t seed = 0;

  void validate() const;
  double scaled_lr() const { return base_lr * static_cast<double>(batch_size) / 256.0; }
  MecLossConfig mec_config(std::size_t m, double lambda) const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double coding_length = 0.0;
  double effective_rank = 0.0;
  double knn_acc = 0.0;
  double lr = 0.0;
  double ema = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct TrainResult {
  EncoderParams params;
  std::optional<EncoderParams> target;  // EMA branch when ema_momentum > 0
  EpochMetrics initial;                 // metrics before the first step (epoch 0)
  std::vector<EpochMetrics> log;        // one entry per epoch, 1-based
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t epoch, std::size_t step);
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Siamese self-supervised training on the train split (labels are never read
/// by the loss path). Evaluation metrics use the eval split.
TrainResult train(const TrainConfig& cfg, const DatasetHandle& data,
                  const EpochCallback& on_epoch = {});

/// One optimization step's loss and online-parameter gradients on a fixed
/// pair of views; exposed for gradient checks.
struct StepGrads {
  double loss = 0.0;
  MlpGrads backbone;
  MlpGrads projector;
  MlpGrads predictor;
};
StepGrads siamese_step_grads(const TrainConfig& cfg, EncoderParams& online,
                             const EncoderParams* target, const Matrix& x1, const Matrix& x2,
                             double lambda, bool absorb_stats);

struct CollapseReport {
  double effective_rank = 0.0;
  double mean_pairwise_cos = 0.0;
  double coding_length = 0.0;
};

/// exp(entropy of s / sum(s)) over the singular values s of a d x N matrix.
double effective_rank(const Matrix& z);
/// mu * log det(I + lambda Z^T Z), evaluated on the smaller Gram side.
double coding_length(const Matrix& z, const CodingConfig& cfg);
CollapseReport collapse_report(const EmbeddingBatch& embeddings, const CodingConfig& cfg);

/// Cosine kNN on backbone features: train split is the memory bank, eval split
/// the queries. Majority vote; ties go to the larger summed similarity.
double knn_probe(const EncoderParams& encoder, const DatasetHandle& data, std::size_t k);
double knn_accuracy(const Matrix& bank, const std::vector<int>& bank_labels, const Matrix& queries,
                    const std::vector<int>& query_labels, std::size_t k);

/// Writes the metrics CSV: epoch,loss,coding_length,effective_rank,knn_acc,lr,ema
void write_metrics_csv(const std::vector<EpochMetrics>& log, const std::filesystem::path& path);

}  // namespace mec
