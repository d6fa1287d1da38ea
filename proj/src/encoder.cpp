#include "mec/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mec/data.hpp"

namespace mec {

Mlp::Mlp(const std::vector<std::size_t>& widths, bool last_norm_relu, std::mt19937_64& rng) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l];
    const std::size_t out = widths[l + 1];
    if (in == 0 || out == 0) throw std::invalid_argument("Mlp: zero-width layer");
    Layer layer;
    layer.weight = Matrix(out, in);
    layer.bias = Matrix(1, out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> uni(-bound, bound);
    for (double& v : layer.weight.data()) v = uni(rng);
    for (double& v : layer.bias.data()) v = uni(rng);
    layer.norm_relu = (l + 2 < widths.size()) || last_norm_relu;
    if (layer.norm_relu) {
      layer.running_mean = Matrix(1, out, 0.0);
      layer.running_var = Matrix(1, out, 1.0);
    }
    layers_.push_back(std::move(layer));
  }
}

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("Mlp: no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.bias.rows() != 1 || layer.bias.cols() != layer.out()) {
      throw ShapeError("Mlp: layer " + std::to_string(l) + " bias is " + layer.bias.shape_string());
    }
    if (l > 0 && layer.in() != layers_[l - 1].out()) {
      throw ShapeError("Mlp: layer " + std::to_string(l) + " expects " + std::to_string(layer.in()) +
                       " inputs but previous layer emits " + std::to_string(layers_[l - 1].out()));
    }
    if (layer.norm_relu && (layer.running_mean.cols() != layer.out() ||
                            layer.running_var.cols() != layer.out())) {
      throw ShapeError("Mlp: layer " + std::to_string(l) + " running statistics mismatch");
    }
  }
}

Matrix Mlp::forward(const Matrix& x, Mode mode, MlpCache* cache) const {
  if (x.cols() != in_dim()) {
    throw ShapeError("Mlp::forward: input has " + std::to_string(x.cols()) + " features, expected " +
                     std::to_string(in_dim()));
  }
  if (cache) cache->layers.assign(layers_.size(), {});
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    Matrix u = matmul(h, layer.weight, Trans::No, Trans::Yes);
    const std::size_t n = u.rows();
    const std::size_t out = u.cols();
    for (std::size_t r = 0; r < n; ++r) {
      auto row = u.row(r);
      for (std::size_t c = 0; c < out; ++c) row[c] += layer.bias(0, c);
    }
    LayerCache* lc = cache ? &cache->layers[l] : nullptr;
    if (lc) lc->input = std::move(h);
    if (!layer.norm_relu) {
      h = std::move(u);
      if (lc) lc->output = h;
      continue;
    }

    std::vector<double> mean(out, 0.0);
    std::vector<double> var(out, 0.0);
    if (mode == Mode::Train) {
      for (std::size_t r = 0; r < n; ++r) {
        const auto row = u.row(r);
        for (std::size_t c = 0; c < out; ++c) mean[c] += row[c];
      }
      for (double& m : mean) m /= static_cast<double>(n);
      for (std::size_t r = 0; r < n; ++r) {
        const auto row = u.row(r);
        for (std::size_t c = 0; c < out; ++c) var[c] += (row[c] - mean[c]) * (row[c] - mean[c]);
      }
      for (double& v : var) v /= static_cast<double>(n);
    } else {
      for (std::size_t c = 0; c < out; ++c) {
        mean[c] = layer.running_mean(0, c);
        var[c] = layer.running_var(0, c);
      }
    }
    std::vector<double> inv_std(out);
    for (std::size_t c = 0; c < out; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + kBnEps);

    Matrix act(n, out);
    for (std::size_t r = 0; r < n; ++r) {
      auto row = u.row(r);
      auto arow = act.row(r);
      for (std::size_t c = 0; c < out; ++c) {
        row[c] = (row[c] - mean[c]) * inv_std[c];
        arow[c] = row[c] > 0.0 ? row[c] : 0.0;
      }
    }
    if (lc) {
      lc->normalized = std::move(u);
      lc->inv_std = std::move(inv_std);
      lc->batch_mean = std::move(mean);
      lc->batch_var = std::move(var);
      lc->output = act;
    }
    h = std::move(act);
  }
  return h;
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& dy, MlpGrads& grads) const {
  if (cache.layers.size() != layers_.size()) throw std::logic_error("Mlp::backward: stale cache");
  Matrix d = dy;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    const LayerCache& lc = cache.layers[l];
    const std::size_t n = d.rows();
    const std::size_t out = d.cols();
    if (layer.norm_relu) {
      const Matrix& xhat = lc.normalized;
      std::vector<double> mean_d(out, 0.0);
      std::vector<double> mean_dx(out, 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        auto row = d.row(r);
        const auto xr = xhat.row(r);
        for (std::size_t c = 0; c < out; ++c) {
          if (xr[c] <= 0.0) row[c] = 0.0;
          mean_d[c] += row[c];
          mean_dx[c] += row[c] * xr[c];
        }
      }
      for (std::size_t c = 0; c < out; ++c) {
        mean_d[c] /= static_cast<double>(n);
        mean_dx[c] /= static_cast<double>(n);
      }
      for (std::size_t r = 0; r < n; ++r) {
        auto row = d.row(r);
        const auto xr = xhat.row(r);
        for (std::size_t c = 0; c < out; ++c) {
          row[c] = lc.inv_std[c] * (row[c] - mean_d[c] - xr[c] * mean_dx[c]);
        }
      }
    }
    grads.weight[l] += matmul(d, lc.input, Trans::Yes, Trans::No);
    auto bias_grad = grads.bias[l].row(0);
    for (std::size_t r = 0; r < n; ++r) {
      const auto row = d.row(r);
      for (std::size_t c = 0; c < out; ++c) bias_grad[c] += row[c];
    }
    d = matmul(d, layer.weight);
  }
  return d;
}

void Mlp::absorb_batch_stats(const MlpCache& cache) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Layer& layer = layers_[l];
    if (!layer.norm_relu) continue;
    const LayerCache& lc = cache.layers[l];
    const double n = static_cast<double>(lc.input.rows());
    const double unbias = n > 1 ? n / (n - 1) : 1.0;
    for (std::size_t c = 0; c < layer.out(); ++c) {
      layer.running_mean(0, c) =
          (1 - kRunningMomentum) * layer.running_mean(0, c) + kRunningMomentum * lc.batch_mean[c];
      layer.running_var(0, c) = (1 - kRunningMomentum) * layer.running_var(0, c) +
                                kRunningMomentum * lc.batch_var[c] * unbias;
    }
  }
}

MlpGrads Mlp::zero_grads() const {
  MlpGrads g;
  for (const Layer& layer : layers_) {
    g.weight.emplace_back(layer.out(), layer.in());
    g.bias.emplace_back(1, layer.out());
  }
  return g;
}

void Mlp::for_each_param(MlpGrads& grads, const std::function<void(Matrix&, Matrix&)>& fn) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    fn(layers_[l].weight, grads.weight[l]);
    fn(layers_[l].bias, grads.bias[l]);
  }
}

void Mlp::for_each_param(const std::function<void(Matrix&)>& fn) {
  for (Layer& layer : layers_) {
    fn(layer.weight);
    fn(layer.bias);
  }
}

void Mlp::for_each_param(const std::function<void(const Matrix&)>& fn) const {
  for (const Layer& layer : layers_) {
    fn(layer.weight);
    fn(layer.bias);
  }
}

Matrix EncoderParams::features(const Matrix& x) const { return backbone.forward(x, Mode::Eval); }

Matrix EncoderParams::embeddings(const Matrix& x) const {
  const Matrix y = projector.forward(features(x), Mode::Eval);
  return l2_normalize_rows(y).transposed();
}

bool EncoderParams::all_finite() const {
  bool ok = true;
  auto check = [&](const Matrix& m) { ok = ok && m.all_finite(); };
  backbone.for_each_param(check);
  projector.for_each_param(check);
  if (predictor) predictor->for_each_param(check);
  return ok;
}

EncoderParams make_encoder(const EncoderShape& shape, std::mt19937_64& rng) {
  std::vector<std::size_t> bb{shape.input_dim};
  bb.insert(bb.end(), shape.backbone_hidden.begin(), shape.backbone_hidden.end());
  bb.push_back(shape.feature_dim);
  EncoderParams p;
  p.backbone = Mlp(bb, /*last_norm_relu=*/true, rng);
  p.projector = Mlp({shape.feature_dim, shape.projector_hidden, shape.embed_dim}, false, rng);
  if (shape.predictor_hidden > 0) {
    p.predictor = Mlp({shape.embed_dim, shape.predictor_hidden, shape.embed_dim}, false, rng);
  }
  return p;
}

Matrix l2_normalize_rows(const Matrix& y, std::vector<double>* norms) {
  Matrix z = y;
  if (norms) norms->assign(y.rows(), 0.0);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = z.row(r);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    // The floor keeps an all-zero output finite; it maps to the zero vector.
    const double norm = std::max(std::sqrt(sq), 1e-12);
    for (double& v : row) v /= norm;
    if (norms) (*norms)[r] = norm;
  }
  return z;
}

Matrix l2_normalize_rows_backward(const Matrix& z, const std::vector<double>& norms,
                                  const Matrix& dz) {
  Matrix dy(z.rows(), z.cols());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto zr = z.row(r);
    const auto gr = dz.row(r);
    double dot = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) dot += zr[c] * gr[c];
    auto out = dy.row(r);
    for (std::size_t c = 0; c < z.cols(); ++c) out[c] = (gr[c] - zr[c] * dot) / norms[r];
  }
  return dy;
}

// ---- MEC1 parameter files -------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'E', 'C', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void put_tensor(std::vector<std::uint8_t>& out, const Matrix& m, bool as_vector) {
  if (as_vector) {
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(m.size()));
  } else {
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
  }
  for (double v : m.data()) put_f64(out, v);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  // Reads a tensor of the expected rank; rank-1 comes back as a 1 x n matrix.
  Matrix tensor(std::uint32_t expected_rank) {
    const std::uint32_t rank = u32();
    if (rank != expected_rank) {
      throw FormatError("MEC1: tensor " + std::to_string(index_) + " has rank " +
                        std::to_string(rank) + ", expected " + std::to_string(expected_rank));
    }
    std::size_t rows = 1;
    std::size_t cols = 0;
    if (rank == 1) {
      cols = u32();
    } else {
      rows = u32();
      cols = u32();
    }
    if (rows * cols > (bytes_.size() - pos_) / 8) throw FormatError("MEC1: truncated tensor data");
    std::vector<double> values(rows * cols);
    for (double& v : values) v = f64();
    ++index_;
    try {
      return Matrix(rows, cols, std::move(values));
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("MEC1: ") + e.what());
    }
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("MEC1: unexpected end of file");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::size_t index_ = 0;
};

void put_mlp(std::vector<std::uint8_t>& out, const Mlp& mlp) {
  for (const Layer& layer : mlp.layers()) {
    put_tensor(out, layer.weight, false);
    put_tensor(out, layer.bias, true);
    if (layer.norm_relu) {
      put_tensor(out, layer.running_mean, true);
      put_tensor(out, layer.running_var, true);
    }
  }
}

Mlp read_mlp(Reader& in, std::size_t count, bool last_norm_relu) {
  std::vector<Layer> layers;
  for (std::size_t l = 0; l < count; ++l) {
    Layer layer;
    layer.weight = in.tensor(2);
    layer.bias = in.tensor(1);
    layer.norm_relu = (l + 1 < count) || last_norm_relu;
    if (layer.norm_relu) {
      layer.running_mean = in.tensor(1);
      layer.running_var = in.tensor(1);
    }
    layers.push_back(std::move(layer));
  }
  try {
    return Mlp(std::move(layers));
  } catch (const ShapeError& e) {
    throw FormatError(std::string("MEC1: ") + e.what());
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_params(const EncoderParams& params) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  const double counts[3] = {
      static_cast<double>(params.backbone.layers().size()),
      static_cast<double>(params.projector.layers().size()),
      static_cast<double>(params.predictor ? params.predictor->layers().size() : 0)};
  put_u32(out, 1);
  put_u32(out, 3);
  for (double c : counts) put_f64(out, c);
  put_mlp(out, params.backbone);
  put_mlp(out, params.projector);
  if (params.predictor) put_mlp(out, *params.predictor);
  return out;
}

EncoderParams deserialize_params(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("MEC1: bad magic");
  }
  Reader in(bytes.subspan(4));
  const Matrix layout = in.tensor(1);
  if (layout.size() != 3) throw FormatError("MEC1: layout descriptor must hold 3 counts");
  std::size_t counts[3];
  for (int i = 0; i < 3; ++i) {
    const double c = layout(0, i);
    if (c < 0 || c != std::floor(c) || c > 64) throw FormatError("MEC1: bad layer count");
    counts[i] = static_cast<std::size_t>(c);
  }
  if (counts[0] == 0 || counts[1] == 0) throw FormatError("MEC1: backbone and projector required");
  EncoderParams p;
  p.backbone = read_mlp(in, counts[0], true);
  p.projector = read_mlp(in, counts[1], false);
  if (counts[2] > 0) p.predictor = read_mlp(in, counts[2], false);
  if (!in.done()) throw FormatError("MEC1: trailing bytes");
  if (p.projector.in_dim() != p.backbone.out_dim()) {
    throw FormatError("MEC1: projector input does not match backbone output");
  }
  if (p.predictor && (p.predictor->in_dim() != p.projector.out_dim() ||
                      p.predictor->out_dim() != p.projector.out_dim())) {
    throw FormatError("MEC1: predictor must map embed_dim to embed_dim");
  }
  return p;
}

void save_params(const EncoderParams& params, const std::filesystem::path& path) {
  const auto bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

EncoderParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return deserialize_params(bytes);
}

}  // namespace mec
