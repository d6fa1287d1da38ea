#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "mec/matrix.hpp"

namespace mec {

enum class Mode { Train, Eval };

/// Linear layer, optionally followed by affine-free batch norm and ReLU.
/// Activations are N x features (one sample per row).
struct Layer {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out
  bool norm_relu = true;
  Matrix running_mean;  // 1 x out, only for norm_relu layers
  Matrix running_var;

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
};

struct LayerCache {
  Matrix input;
  Matrix normalized;  // x-hat, before ReLU
  std::vector<double> inv_std;
  std::vector<double> batch_mean;
  std::vector<double> batch_var;
  Matrix output;
};

struct MlpCache {
  std::vector<LayerCache> layers;
};

/// Gradients with the same layout as the parameters (weight, bias per layer).
struct MlpGrads {
  std::vector<Matrix> weight;
  std::vector<Matrix> bias;
};

class Mlp {
 public:
  static constexpr double kBnEps = 1e-5;
  static constexpr double kRunningMomentum = 0.1;

  Mlp() = default;
  /// widths = {in, h1, ..., out}. Every layer but the last gets BN + ReLU
  /// unless `last_norm_relu` is set.
  Mlp(const std::vector<std::size_t>& widths, bool last_norm_relu, std::mt19937_64& rng);
  explicit Mlp(std::vector<Layer> layers);

  std::size_t in_dim() const { return layers_.front().in(); }
  std::size_t out_dim() const { return layers_.back().out(); }
  bool empty() const { return layers_.empty(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  Matrix forward(const Matrix& x, Mode mode, MlpCache* cache = nullptr) const;
  /// Accumulates into `grads` and returns d loss / d input.
  Matrix backward(const MlpCache& cache, const Matrix& dy, MlpGrads& grads) const;
  /// Folds the batch statistics recorded in `cache` into the running stats.
  void absorb_batch_stats(const MlpCache& cache);

  MlpGrads zero_grads() const;

  /// Visits (param, grad) pairs in declaration order.
  void for_each_param(MlpGrads& grads, const std::function<void(Matrix&, Matrix&)>& fn);
  void for_each_param(const std::function<void(Matrix&)>& fn);
  void for_each_param(const std::function<void(const Matrix&)>& fn) const;

 private:
  std::vector<Layer> layers_;
};

/// Backbone + projector (+ optional predictor on the online branch).
struct EncoderParams {
  Mlp backbone;
  Mlp projector;
  std::optional<Mlp> predictor;

  std::size_t input_dim() const { return backbone.in_dim(); }
  std::size_t feature_dim() const { return backbone.out_dim(); }
  std::size_t embed_dim() const { return projector.out_dim(); }

  /// Backbone features in eval mode, N x feat.
  Matrix features(const Matrix& x) const;
  /// Normalized projector outputs in eval mode, d x N (one column per sample).
  Matrix embeddings(const Matrix& x) const;

  bool all_finite() const;
};

struct EncoderShape {
  std::size_t input_dim = 64;
  std::vector<std::size_t> backbone_hidden{256, 256};
  std::size_t feature_dim = 128;
  std::size_t projector_hidden = 256;
  std::size_t embed_dim = 64;
  std::size_t predictor_hidden = 0;  // 0 disables the predictor
};

EncoderParams make_encoder(const EncoderShape& shape, std::mt19937_64& rng);

/// Row-wise l2 normalization and its backward (the projection Jacobian).
Matrix l2_normalize_rows(const Matrix& y, std::vector<double>* norms = nullptr);
Matrix l2_normalize_rows_backward(const Matrix& z, const std::vector<double>& norms,
                                  const Matrix& dz);

/// Writes "MEC1" followed by tensors: u32 rank, u32 dims, f64 values (all
/// little-endian). Tensor 0 is a rank-1 layout descriptor holding the layer
/// counts of backbone, projector and predictor; then per layer weight, bias
/// and (for normalized layers) running mean and variance.
void save_params(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_params(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_params(const EncoderParams& params);
EncoderParams deserialize_params(std::span<const std::uint8_t> bytes);

}  // namespace mec
