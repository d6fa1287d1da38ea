#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "mec/data.hpp"
#include "mec/trainer.hpp"

using namespace mec;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "mec_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::vector<std::uint8_t> cifar_record(std::uint8_t label, std::uint8_t fill) {
  std::vector<std::uint8_t> rec(3073, fill);
  rec[0] = label;
  return rec;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("synthetic data is deterministic") {
  SyntheticSpec spec;
  spec.per_cluster = 20;
  const DatasetHandle a = gen_synthetic(spec);
  const DatasetHandle b = gen_synthetic(spec);
  CHECK(a.samples() == b.samples());
  CHECK(a.labels() == b.labels());
  CHECK(a.splits() == b.splits());
  CHECK(a.size() == 160);
  CHECK(a.count(Split::Eval) == 32);
  spec.seed += 1;
  CHECK(!(gen_synthetic(spec).samples() == a.samples()));
}

TEST_CASE("committed synthetic seed separates every pair of centers by more than 4 sigma") {
  const SyntheticSpec spec;
  REQUIRE(spec.num_clusters == 8);
  REQUIRE(spec.input_dim == 64);
  REQUIRE(spec.per_cluster == 250);
  REQUIRE(spec.sigma == 0.3);
  const Matrix c = synthetic_centers(spec);
  for (std::size_t i = 0; i < c.rows(); ++i) {
    double norm = 0.0;
    for (double v : c.row(i)) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(spec.center_scale).epsilon(1e-12));
    for (std::size_t j = i + 1; j < c.rows(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < c.cols(); ++k) d2 += (c(i, k) - c(j, k)) * (c(i, k) - c(j, k));
      CHECK(std::sqrt(d2) > 4 * spec.sigma);
    }
  }
}

TEST_CASE("sigma 0 puts every sample on its center and gives perfect kNN") {
  SyntheticSpec spec;
  spec.sigma = 0.0;
  spec.per_cluster = 30;
  const DatasetHandle d = gen_synthetic(spec);
  const Matrix c = synthetic_centers(spec);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.input_dim(); ++j) REQUIRE(d.samples()(i, j) == c(d.labels()[i], j));

  const Matrix bank = d.unlabeled(Split::Train);
  const Matrix queries = d.unlabeled(Split::Eval);
  CHECK(knn_accuracy(bank, d.labels_of(Split::Train), queries, d.labels_of(Split::Eval), 5) == 1.0);

  std::mt19937_64 rng(1);
  const EncoderParams enc = make_encoder(EncoderShape{}, rng);
  CHECK(knn_probe(enc, d, 5) == 1.0);
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec s;
  s.num_clusters = 1;
  CHECK_THROWS_AS(gen_synthetic(s), std::invalid_argument);
  s = SyntheticSpec{};
  s.input_dim = 1;
  CHECK_THROWS_AS(gen_synthetic(s), std::invalid_argument);
}

TEST_CASE("csv: two rows, three features") {
  const auto p = temp_path("two.csv");
  write_text(p, "0,1,2,3\n1,4.5,-6,7e-3\n");
  const DatasetHandle d = load_csv(p);
  CHECK(d.size() == 2);
  CHECK(d.input_dim() == 3);
  CHECK(d.labels() == std::vector<int>{0, 1});
  CHECK(d.samples()(1, 2) == 7e-3);
  CHECK(d.count(Split::Train) == 2);
}

TEST_CASE("csv: header is detected") {
  const auto p = temp_path("header.csv");
  write_text(p, "label,a,b\n2,1,1\n\n3,0,0\r\n");
  const DatasetHandle d = load_csv(p);
  CHECK(d.size() == 2);
  CHECK(d.labels() == std::vector<int>{2, 3});
}

TEST_CASE("csv: errors") {
  const auto ragged = temp_path("ragged.csv");
  write_text(ragged, "0,1,2,3\n1,1,2,3\n2,1,2\n");
  try {
    load_csv(ragged);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }

  const auto bad = temp_path("bad.csv");
  write_text(bad, "0,1,x\n");
  CHECK_THROWS_AS(load_csv(bad), FormatError);
  write_text(bad, "0,1,2\nq,1,2\n");
  CHECK_THROWS_AS(load_csv(bad), FormatError);
  write_text(bad, "label,a\n");
  CHECK_THROWS_AS(load_csv(bad), FormatError);

  CHECK_THROWS(load_csv(temp_path("does_not_exist.csv")));
}

TEST_CASE("property: csv round trip is lossless") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  Matrix x(40, 5);
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) {
    labels[i] = static_cast<int>(i % 7);
    for (std::size_t j = 0; j < 5; ++j) x(i, j) = g(rng) * std::pow(10.0, static_cast<double>(j) - 2);
  }
  const DatasetHandle d(x, labels, std::vector<Split>(40, Split::Train));
  const auto p = temp_path("roundtrip.csv");
  write_csv(d, p);
  const DatasetHandle back = load_csv(p);
  CHECK(back.samples() == d.samples());
  CHECK(back.labels() == d.labels());
}

TEST_CASE("cifar: crafted two-record batch") {
  std::vector<std::uint8_t> bytes = cifar_record(3, 0);
  const auto second = cifar_record(7, 255);
  bytes.insert(bytes.end(), second.begin(), second.end());
  REQUIRE(bytes[0] == 3);
  REQUIRE(bytes[3073] == 7);
  std::vector<int> labels;
  std::vector<double> pixels;
  parse_cifar10_batch(bytes, labels, pixels);
  CHECK(labels == std::vector<int>{3, 7});
  CHECK(pixels.size() == 2 * 3072);
  CHECK(pixels[0] == 0.0);
  CHECK(pixels[3072] == 1.0);
}

TEST_CASE("cifar: truncated record is a format error") {
  const std::vector<std::uint8_t> bytes(3072, 0);
  std::vector<int> labels;
  std::vector<double> pixels;
  CHECK_THROWS_AS(parse_cifar10_batch(bytes, labels, pixels), FormatError);
  auto bad_label = cifar_record(10, 0);
  CHECK_THROWS_AS(parse_cifar10_batch(bad_label, labels, pixels), FormatError);
}

TEST_CASE("cifar: directory loader splits and standardizes per channel") {
  const auto dir = temp_path("cifar");
  std::filesystem::create_directories(dir);
  std::vector<std::uint8_t> train;
  for (int r = 0; r < 4; ++r) {
    auto rec = cifar_record(static_cast<std::uint8_t>(r), 0);
    for (std::size_t p = 0; p < 3072; ++p) rec[1 + p] = static_cast<std::uint8_t>((p / 1024) * 40 + r * 10 + p % 3);
    train.insert(train.end(), rec.begin(), rec.end());
  }
  write_bytes(dir / "data_batch_1.bin", train);
  write_bytes(dir / "test_batch.bin", cifar_record(9, 128));

  const DatasetHandle d = load_cifar10_bin(dir);
  CHECK(d.size() == 5);
  CHECK(d.input_dim() == 3072);
  CHECK(d.count(Split::Train) == 4);
  CHECK(d.count(Split::Eval) == 1);
  CHECK(d.labels() == std::vector<int>{0, 1, 2, 3, 9});

  const Matrix t = d.unlabeled(Split::Train);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double s = 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t p = 0; p < 1024; ++p) {
        const double v = t(i, ch * 1024 + p);
        s += v;
        sq += v * v;
      }
    const double n = 4.0 * 1024.0;
    CHECK(s / n == doctest::Approx(0.0).scale(1.0).epsilon(1e-10));
    CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-10));
  }

  write_bytes(dir / "data_batch_2.bin", std::vector<std::uint8_t>(3072, 0));
  CHECK_THROWS_AS(load_cifar10_bin(dir), FormatError);
  std::filesystem::remove_all(dir);
  CHECK_THROWS(load_cifar10_bin(dir));
}

TEST_CASE("split assignment is deterministic and respects the fraction") {
  SyntheticSpec spec;
  spec.per_cluster = 50;
  DatasetHandle d = gen_synthetic(spec);
  d.assign_split(0.25, 9);
  CHECK(d.count(Split::Eval) == 100);
  DatasetHandle e = gen_synthetic(spec);
  e.assign_split(0.25, 9);
  CHECK(d.splits() == e.splits());
  CHECK_THROWS_AS(d.assign_split(1.0, 1), std::invalid_argument);
}

TEST_CASE("with_labels swaps labels only") {
  SyntheticSpec spec;
  spec.per_cluster = 5;
  const DatasetHandle d = gen_synthetic(spec);
  std::vector<int> zeros(d.size(), 0);
  const DatasetHandle z = d.with_labels(zeros);
  CHECK(z.samples() == d.samples());
  CHECK(z.splits() == d.splits());
  CHECK(z.labels() == zeros);
  CHECK(d.unlabeled(Split::Train).rows() == d.count(Split::Train));
}
