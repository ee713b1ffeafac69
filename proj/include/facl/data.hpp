#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "facl/dataaug.hpp"
#include "facl/ops.hpp"
#include "facl/rng.hpp"
#include "facl/tensor.hpp"

namespace facl {

struct VectorDataset {
  Tensor x;  // [n x d]
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
};

struct SplitVectors {
  VectorDataset train, test;
};

struct SyntheticSpec {
  std::size_t n_clusters = 10;
  std::size_t latent_dim = 16;
  std::size_t dim = 128;
  std::size_t per_cluster = 500;
  double spread = 0.1;
  double map_gain = 1.0;
  std::uint64_t projection_seed = 7;

  void validate() const {
    require(n_clusters >= 2, "SyntheticSpec: need at least 2 clusters");
    require(latent_dim >= 1 && dim >= 1 && per_cluster >= 1, "SyntheticSpec: empty dimensions");
    require(spread >= 0.0, "SyntheticSpec: spread must be non-negative");
  }
};

/// Cluster centers on the unit sphere in latent space, gaussian spread around
/// them, then a fixed random two-layer map (tanh then linear) to input space.
/// The map depends only on projection_seed so train and test share geometry.
inline VectorDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Rng prng(spec.projection_seed);
  const std::size_t n = spec.n_clusters * spec.per_cluster;

  Tensor centers({spec.n_clusters, spec.latent_dim});
  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < spec.latent_dim; ++j) {
      centers.at(c, j) = rng.normal();
      norm2 += centers.at(c, j) * centers.at(c, j);
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < spec.latent_dim; ++j) centers.at(c, j) *= inv;
  }

  Tensor latent({n, spec.latent_dim});
  VectorDataset out;
  out.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i / spec.per_cluster;
    out.y[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < spec.latent_dim; ++j)
      latent.at(i, j) = centers.at(c, j) + spec.spread * rng.normal();
  }

  Tensor w1({spec.latent_dim, spec.dim});
  Tensor b1({spec.dim});
  Tensor w2({spec.dim, spec.dim});
  const double s1 = spec.map_gain / std::sqrt(static_cast<double>(spec.latent_dim));
  const double s2 = spec.map_gain / std::sqrt(static_cast<double>(spec.dim));
  for (double& v : w1.data) v = prng.normal() * s1;
  for (double& v : b1.data) v = prng.normal() * 0.1;
  for (double& v : w2.data) v = prng.normal() * s2;

  Tensor hidden({n, spec.dim});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < spec.dim; ++j) {
      double acc = b1.data[j];
      for (std::size_t l = 0; l < spec.latent_dim; ++l) acc += latent.at(i, l) * w1.at(l, j);
      hidden.at(i, j) = std::tanh(acc);
    }
  out.x = Tensor({n, spec.dim});
  kernel::mm_nn(hidden.data.data(), w2.data.data(), out.x.data.data(), n, spec.dim, spec.dim);
  out.x.quantize();
  return out;
}

/// Shuffles and splits 80/20 with the same seed stream as generation.
inline SplitVectors gen_synthetic_split(const SyntheticSpec& spec, std::uint64_t seed) {
  VectorDataset all = gen_synthetic(spec, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx);

  const std::size_t d = all.x.size(1);
  const std::size_t n_train = all.size() * 8 / 10;
  SplitVectors sv;
  sv.train.x = Tensor({n_train, d});
  sv.test.x = Tensor({all.size() - n_train, d});
  sv.train.y.resize(n_train);
  sv.test.y.resize(all.size() - n_train);
  for (std::size_t i = 0; i < all.size(); ++i) {
    Tensor& dst_x = i < n_train ? sv.train.x : sv.test.x;
    std::vector<int>& dst_y = i < n_train ? sv.train.y : sv.test.y;
    const std::size_t r = i < n_train ? i : i - n_train;
    for (std::size_t j = 0; j < d; ++j) dst_x.at(r, j) = all.x.at(idx[i], j);
    dst_y[r] = all.y[idx[i]];
  }
  return sv;
}

struct ImageDataset {
  std::vector<Image> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct Cifar10 {
  ImageDataset train, test;
};

namespace detail_data {

inline void read_cifar_batch(const std::filesystem::path& file, ImageDataset& out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cifar10: cannot open " + file.string());
  in.seekg(0, std::ios::end);
  const std::streamoff bytes = in.tellg();
  in.seekg(0);
  constexpr std::streamoff kRecord = 1 + 3 * 32 * 32;
  if (bytes % kRecord != 0)
    throw std::runtime_error("cifar10: truncated record in " + file.string());
  const std::size_t n = static_cast<std::size_t>(bytes / kRecord);
  std::vector<std::uint8_t> rec(kRecord);
  for (std::size_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(rec.data()), kRecord);
    if (!in) throw std::runtime_error("cifar10: short read in " + file.string());
    if (rec[0] > 9) throw std::runtime_error("cifar10: label out of range in " + file.string());
    out.labels.push_back(rec[0]);
    Image img(3, 32, 32);
    std::copy(rec.begin() + 1, rec.end(), img.pix.begin());
    out.images.push_back(std::move(img));
  }
}

}  // namespace detail_data

/// Reads the standard binary batches (1 label byte + 3072 channel-major pixel
/// bytes per record) into 50000 train and 10000 test images. The expected
/// counts are parameters so tests can load reduced fixtures.
inline Cifar10 load_cifar10(const std::string& dir, std::size_t expect_train = 50000,
                            std::size_t expect_test = 10000) {
  namespace fs = std::filesystem;
  Cifar10 ds;
  for (int b = 1; b <= 5; ++b)
    detail_data::read_cifar_batch(fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin"),
                                  ds.train);
  detail_data::read_cifar_batch(fs::path(dir) / "test_batch.bin", ds.test);
  if (ds.train.size() != expect_train)
    throw std::runtime_error("cifar10: expected " + std::to_string(expect_train) +
                             " train records, got " + std::to_string(ds.train.size()));
  if (ds.test.size() != expect_test)
    throw std::runtime_error("cifar10: expected " + std::to_string(expect_test) +
                             " test records, got " + std::to_string(ds.test.size()));
  return ds;
}

}  // namespace facl
