#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "nnfc/error.hpp"
#include "nnfc/params.hpp"

// Nearest-neighbour captioning: an immutable store of decoder latents paired
// with the token that followed them, exact k-NN retrieval under squared
// Euclidean distance, and interpolation of the induced distribution with the
// model's own next-token distribution.

namespace nnfc {

class Datastore {
 public:
  Datastore() = default;
  explicit Datastore(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ConfigError("datastore key width must be positive");
  }

  template <class T>
  void add(std::span<const T> key, std::uint32_t value) {
    if (key.size() != dim_) throw DimensionError("datastore key has width " + std::to_string(key.size()));
    for (auto v : key) keys_.push_back(static_cast<float>(v));
    values_.push_back(value);
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::span<const float> key(std::size_t i) const { return {keys_.data() + i * dim_, dim_}; }
  std::uint32_t value(std::size_t i) const { return values_[i]; }
  const std::vector<float>& keys() const { return keys_; }
  const std::vector<std::uint32_t>& values() const { return values_; }

  bool operator==(const Datastore& o) const {
    return dim_ == o.dim_ && values_ == o.values_ &&
           std::equal(keys_.begin(), keys_.end(), o.keys_.begin(), o.keys_.end(), [](float a, float b) {
             return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b);
           });
  }

 private:
  std::size_t dim_ = 0;
  std::vector<float> keys_;
  std::vector<std::uint32_t> values_;
};

inline constexpr char kDatastoreMagic[5] = "NNDS";
inline constexpr std::uint32_t kDatastoreVersion = 1;

// "NNDS", u32 version, u32 d_model, u64 count, f32 keys row-major, u32 values.
inline void save_datastore(const Datastore& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write datastore " + path.string());
  out.write(kDatastoreMagic, 4);
  binio::put<std::uint32_t>(out, kDatastoreVersion);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.dim()));
  binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(ds.size()));
  out.write(reinterpret_cast<const char*>(ds.keys().data()), static_cast<std::streamsize>(ds.keys().size() * 4));
  out.write(reinterpret_cast<const char*>(ds.values().data()), static_cast<std::streamsize>(ds.values().size() * 4));
  if (!out) throw IoError("write failed for " + path.string());
}

inline Datastore load_datastore(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read datastore " + path.string());
  binio::expect_magic(in, kDatastoreMagic, path.string());
  if (binio::get<std::uint32_t>(in, "version") != kDatastoreVersion) {
    throw FormatError(path.string() + ": unsupported datastore version");
  }
  const auto dim = binio::get<std::uint32_t>(in, "d_model");
  const auto count = binio::get<std::uint64_t>(in, "count");
  if (dim == 0) throw FormatError(path.string() + ": zero key width");
  std::vector<float> keys(static_cast<std::size_t>(count) * dim);
  std::vector<std::uint32_t> values(static_cast<std::size_t>(count));
  if (!in.read(reinterpret_cast<char*>(keys.data()), static_cast<std::streamsize>(keys.size() * 4)) ||
      !in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * 4))) {
    throw FormatError(path.string() + ": truncated datastore payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  Datastore ds(dim);
  for (std::size_t i = 0; i < count; ++i) ds.add<float>({keys.data() + i * dim, dim}, values[i]);
  return ds;
}

struct Neighbor {
  std::size_t index;
  std::uint32_t value;
  double distance;
};

// Sorted ascending by distance, ties by lower entry index.
using NeighborSet = std::vector<Neighbor>;

// Squared Euclidean distance accumulated in double, in index order.
template <class T>
double squared_distance(std::span<const float> key, std::span<const T> query) {
  double acc = 0.0;
  for (std::size_t j = 0; j < key.size(); ++j) {
    const double diff = static_cast<double>(key[j]) - static_cast<double>(static_cast<float>(query[j]));
    acc += diff * diff;
  }
  return acc;
}

// Exact k nearest entries. The query is cast to the key precision first.
template <class T>
NeighborSet knn_query(const Datastore& ds, std::span<const T> query, std::size_t k) {
  if (ds.empty()) throw ContractError("knn_query: datastore is empty");
  if (k == 0) throw ConfigError("knn_query: N_knn must be at least 1");
  if (query.size() != ds.dim()) throw DimensionError("knn_query: query width differs from datastore keys");
  const std::size_t n = ds.size();
  const std::size_t take = std::min(k, n);
  auto closer = [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  };
  // bounded max-heap of the best `take` entries seen so far
  NeighborSet heap;
  heap.reserve(take + 1);
  for (std::size_t i = 0; i < n; ++i) {
    Neighbor cand{i, ds.value(i), squared_distance(ds.key(i), query)};
    if (heap.size() < take) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end(), closer);
    } else if (closer(cand, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), closer);
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end(), closer);
    }
  }
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

// softmax(-distance) over the neighbour set; nearer neighbours weigh more.
inline std::vector<double> neighbor_weights(const NeighborSet& neighbors) {
  if (neighbors.empty()) throw ContractError("neighbor_weights: empty neighbour set");
  double nearest = neighbors.front().distance;
  for (const auto& nb : neighbors) nearest = std::min(nearest, nb.distance);
  std::vector<double> w(neighbors.size());
  double total = 0.0;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    w[i] = std::exp(-(neighbors[i].distance - nearest));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// p_knn = (1/Z) V' softmax(-k_dist), V' the stacked one-hot neighbour values.
inline std::vector<double> aggregate(const NeighborSet& neighbors, std::size_t vocab_size) {
  const auto w = neighbor_weights(neighbors);
  std::vector<double> p(vocab_size, 0.0);
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    if (neighbors[i].value >= vocab_size) throw DimensionError("aggregate: neighbour value outside vocabulary");
    p[neighbors[i].value] += w[i];
  }
  double z = 0.0;
  for (double v : p) z += v;
  for (double& v : p) v /= z;
  return p;
}

inline std::vector<double> interpolate(const std::vector<double>& p_knn, const std::vector<double>& p_model,
                                       double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda_knn must lie in [0, 1]");
  if (p_knn.size() != p_model.size()) throw DimensionError("interpolate: distribution sizes differ");
  std::vector<double> out(p_knn.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * p_knn[i] + (1.0 - lambda) * p_model[i];
  return out;
}

}  // namespace nnfc
