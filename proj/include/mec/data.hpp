#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mec/matrix.hpp"

namespace mec {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split : std::uint8_t { Train, Eval };

/// N samples (rows) of input_dim reals with probe-only labels and split tags.
///
/// Training code must go through `unlabeled(Split)`; labels are reserved for
/// the kNN probe.
class DatasetHandle {
 public:
  DatasetHandle() = default;
  DatasetHandle(Matrix samples, std::vector<int> labels, std::vector<Split> splits);

  std::size_t size() const { return samples_.rows(); }
  std::size_t input_dim() const { return samples_.cols(); }
  std::size_t count(Split s) const;

  const Matrix& samples() const { return samples_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<Split>& splits() const { return splits_; }

  /// Rows tagged `s`, in dataset order.
  Matrix unlabeled(Split s) const;
  std::vector<int> labels_of(Split s) const;

  /// Copy with labels replaced (used to check that training ignores them).
  DatasetHandle with_labels(std::vector<int> labels) const;

  /// Re-tags samples: a seeded shuffle, the first (1 - eval_fraction) become train.
  void assign_split(double eval_fraction, std::uint64_t seed);

  int num_classes() const;

 private:
  Matrix samples_;
  std::vector<int> labels_;
  std::vector<Split> splits_;
};

struct SyntheticSpec {
  int num_clusters = 8;
  std::size_t input_dim = 64;
  std::size_t per_cluster = 250;
  double center_scale = 1.0;
  double sigma = 0.3;
  std::uint64_t seed = 20222;

  void validate() const;
};

/// Gaussian clusters around centers drawn uniformly on the radius-scale sphere;
/// 80/20 train/eval split by a seeded shuffle.
DatasetHandle gen_synthetic(const SyntheticSpec& spec);
/// Cluster centers for `spec`, one per row (same draw as gen_synthetic).
Matrix synthetic_centers(const SyntheticSpec& spec);

/// Rows `label,v0,...,v{D-1}`. A first line whose first field is not numeric
/// is treated as a header. Everything is tagged train.
DatasetHandle load_csv(const std::filesystem::path& path);
/// Writes `label,v0,...` with 17 significant digits and a header line.
void write_csv(const DatasetHandle& data, const std::filesystem::path& path);

/// Parses one CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes.
/// Pixels are returned scaled to [0, 1].
void parse_cifar10_batch(std::span<const std::uint8_t> bytes, std::vector<int>& labels,
                         std::vector<double>& pixels);

/// Reads data_batch_*.bin (train) and test_batch.bin (eval) from `dir` and
/// standardizes each channel with mean/std from the train split.
DatasetHandle load_cifar10_bin(const std::filesystem::path& dir);

}  // namespace mec
