#include "mec/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace mec {

namespace {

constexpr std::size_t kCifarPixels = 3072;
constexpr std::size_t kCifarRecord = kCifarPixels + 1;
constexpr std::size_t kCifarPlane = 1024;

bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

DatasetHandle::DatasetHandle(Matrix samples, std::vector<int> labels, std::vector<Split> splits)
    : samples_(std::move(samples)), labels_(std::move(labels)), splits_(std::move(splits)) {
  if (labels_.size() != samples_.rows() || splits_.size() != samples_.rows()) {
    throw ShapeError("DatasetHandle: " + std::to_string(samples_.rows()) + " samples but " +
                     std::to_string(labels_.size()) + " labels and " +
                     std::to_string(splits_.size()) + " split tags");
  }
}

std::size_t DatasetHandle::count(Split s) const {
  return static_cast<std::size_t>(std::count(splits_.begin(), splits_.end(), s));
}

Matrix DatasetHandle::unlabeled(Split s) const {
  Matrix out(count(s), input_dim());
  std::size_t r = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    if (splits_[i] != s) continue;
    const auto src = samples_.row(i);
    std::copy(src.begin(), src.end(), out.row(r++).begin());
  }
  return out;
}

std::vector<int> DatasetHandle::labels_of(Split s) const {
  std::vector<int> out;
  out.reserve(count(s));
  for (std::size_t i = 0; i < size(); ++i)
    if (splits_[i] == s) out.push_back(labels_[i]);
  return out;
}

DatasetHandle DatasetHandle::with_labels(std::vector<int> labels) const {
  return DatasetHandle(samples_, std::move(labels), splits_);
}

void DatasetHandle::assign_split(double eval_fraction, std::uint64_t seed) {
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) {
    throw std::invalid_argument("assign_split: eval_fraction must be in [0, 1)");
  }
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train =
      static_cast<std::size_t>(std::llround(static_cast<double>(size()) * (1.0 - eval_fraction)));
  for (std::size_t k = 0; k < order.size(); ++k) {
    splits_[order[k]] = k < n_train ? Split::Train : Split::Eval;
  }
}

int DatasetHandle::num_classes() const {
  return static_cast<int>(std::set<int>(labels_.begin(), labels_.end()).size());
}

void SyntheticSpec::validate() const {
  if (num_clusters < 2) throw std::invalid_argument("synthetic: num_clusters must be >= 2");
  if (input_dim < 2) throw std::invalid_argument("synthetic: input_dim must be >= 2");
  if (per_cluster < 1) throw std::invalid_argument("synthetic: per_cluster must be >= 1");
  if (!(sigma >= 0.0) || !(center_scale > 0.0)) {
    throw std::invalid_argument("synthetic: sigma must be >= 0 and center_scale > 0");
  }
}

Matrix synthetic_centers(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix centers(static_cast<std::size_t>(spec.num_clusters), spec.input_dim);
  for (std::size_t k = 0; k < centers.rows(); ++k) {
    double sq = 0.0;
    for (double& v : centers.row(k)) {
      v = gauss(rng);
      sq += v * v;
    }
    const double s = spec.center_scale / std::sqrt(sq);
    for (double& v : centers.row(k)) v *= s;
  }
  return centers;
}

DatasetHandle gen_synthetic(const SyntheticSpec& spec) {
  const Matrix centers = synthetic_centers(spec);
  // Noise and the split use streams independent of the center draw.
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = centers.rows() * spec.per_cluster;
  Matrix samples(n, spec.input_dim);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i / spec.per_cluster;
    labels[i] = static_cast<int>(k);
    auto row = samples.row(i);
    const auto c = centers.row(k);
    for (std::size_t j = 0; j < spec.input_dim; ++j) row[j] = c[j] + spec.sigma * gauss(rng);
  }
  DatasetHandle out(std::move(samples), std::move(labels), std::vector<Split>(n, Split::Train));
  out.assign_split(0.2, spec.seed + 1);
  return out;
}

DatasetHandle load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path.string());

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t dim = 0;
  bool first_content = true;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split_commas(line);
    double label_value = 0.0;
    if (first_content) {
      first_content = false;
      if (!parse_double(fields[0], label_value)) continue;  // header
    } else if (!parse_double(fields[0], label_value)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": non-numeric label '" +
                        std::string(fields[0]) + "'");
    }
    if (label_value != std::floor(label_value)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": label is not an integer");
    }
    const std::size_t row_dim = fields.size() - 1;
    if (dim == 0) {
      if (row_dim == 0) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": row has no features");
      }
      dim = row_dim;
    } else if (row_dim != dim) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": ragged row, expected " +
                        std::to_string(dim) + " features, got " + std::to_string(row_dim));
    }
    labels.push_back(static_cast<int>(label_value));
    for (std::size_t j = 1; j < fields.size(); ++j) {
      double v = 0.0;
      if (!parse_double(fields[j], v) || !std::isfinite(v)) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": non-numeric value '" +
                          std::string(fields[j]) + "' in column " + std::to_string(j));
      }
      values.push_back(v);
    }
  }
  if (labels.empty()) throw FormatError(path.string() + ": no data rows");
  const std::size_t n = labels.size();
  return DatasetHandle(Matrix(n, dim, std::move(values)), std::move(labels),
                       std::vector<Split>(n, Split::Train));
}

void write_csv(const DatasetHandle& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
  out << "label";
  for (std::size_t j = 0; j < data.input_dim(); ++j) out << ",v" << j;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.labels()[i];
    for (double v : data.samples().row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

void parse_cifar10_batch(std::span<const std::uint8_t> bytes, std::vector<int>& labels,
                         std::vector<double>& pixels) {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw FormatError("CIFAR-10 batch: length " + std::to_string(bytes.size()) +
                      " is not a positive multiple of " + std::to_string(kCifarRecord));
  }
  const std::size_t records = bytes.size() / kCifarRecord;
  for (std::size_t r = 0; r < records; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9) {
      throw FormatError("CIFAR-10 batch: record " + std::to_string(r) + " has label " +
                        std::to_string(rec[0]));
    }
    labels.push_back(rec[0]);
    for (std::size_t p = 1; p < kCifarRecord; ++p) pixels.push_back(rec[p] / 255.0);
  }
}

DatasetHandle load_cifar10_bin(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("load_cifar10_bin: not a directory: " + dir.string());
  }
  std::vector<int> labels;
  std::vector<double> pixels;
  std::vector<Split> splits;
  auto load = [&](const std::filesystem::path& file, Split split) {
    const auto before = labels.size();
    try {
      parse_cifar10_batch(read_bytes(file), labels, pixels);
    } catch (const FormatError& e) {
      throw FormatError(file.string() + ": " + e.what());
    }
    splits.insert(splits.end(), labels.size() - before, split);
  };
  for (int b = 1; b <= 5; ++b) {
    const auto file = dir / ("data_batch_" + std::to_string(b) + ".bin");
    if (std::filesystem::exists(file)) load(file, Split::Train);
  }
  if (labels.empty()) throw std::runtime_error("load_cifar10_bin: no data_batch_*.bin in " + dir.string());
  const auto test_file = dir / "test_batch.bin";
  if (std::filesystem::exists(test_file)) load(test_file, Split::Eval);

  const std::size_t n = labels.size();
  double mean[3] = {0, 0, 0};
  double sq[3] = {0, 0, 0};
  std::size_t n_train = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (splits[i] != Split::Train) continue;
    ++n_train;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double* plane = pixels.data() + i * kCifarPixels + ch * kCifarPlane;
      for (std::size_t p = 0; p < kCifarPlane; ++p) {
        mean[ch] += plane[p];
        sq[ch] += plane[p] * plane[p];
      }
    }
  }
  double inv_std[3];
  for (int ch = 0; ch < 3; ++ch) {
    const double count = static_cast<double>(n_train * kCifarPlane);
    mean[ch] /= count;
    const double var = std::max(sq[ch] / count - mean[ch] * mean[ch], 0.0);
    inv_std[ch] = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double* plane = pixels.data() + i * kCifarPixels + ch * kCifarPlane;
      for (std::size_t p = 0; p < kCifarPlane; ++p) plane[p] = (plane[p] - mean[ch]) * inv_std[ch];
    }
  }
  return DatasetHandle(Matrix(n, kCifarPixels, std::move(pixels)), std::move(labels),
                       std::move(splits));
}

}  // namespace mec
