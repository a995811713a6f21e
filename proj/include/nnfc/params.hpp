#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nnfc/error.hpp"
#include "nnfc/tensor.hpp"

namespace nnfc {

static_assert(std::endian::native == std::endian::little, "binary artifact IO assumes a little-endian host");

namespace binio {

template <class V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& in, const std::string& what) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw FormatError("truncated file while reading " + what);
  return v;
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& path) {
  char buf[4] = {};
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(path + ": bad magic, expected \"" + std::string(magic, 4) + "\"");
  }
}

}  // namespace binio

enum class Init { kNormal, kZeros, kOnes };

// Ordered, named collection of trainable tensors. Order of registration is
// the order of initialization and of serialization.
template <class T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, Init init, std::mt19937_64& rng, double stddev = 0.02) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    const std::size_t n = numel(shape);
    std::vector<T> data(n, T(0));
    if (init == Init::kNormal) {
      std::normal_distribution<double> dist(0.0, stddev);
      for (auto& v : data) v = static_cast<T>(dist(rng));
    } else if (init == Init::kOnes) {
      std::fill(data.begin(), data.end(), T(1));
    }
    Tensor<T> t(std::move(shape), std::move(data), true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

  // Freezes or unfreezes every parameter whose name starts with prefix.
  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto& [name, t] : entries_) {
      if (name.rfind(prefix, 0) == 0) t.set_requires_grad(trainable);
    }
  }

  std::vector<std::vector<T>> snapshot() const {
    std::vector<std::vector<T>> out;
    for (const auto& [name, t] : entries_) out.emplace_back(t.values());
    return out;
  }

  void restore(const std::vector<std::vector<T>>& values) {
    if (values.size() != entries_.size()) throw ContractError("snapshot does not match parameter store");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto dst = entries_[i].second.mutable_data();
      if (values[i].size() != dst.size()) throw ContractError("snapshot size mismatch for " + entries_[i].first);
      std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr char kWeightsMagic[5] = "NNFC";
inline constexpr std::uint32_t kWeightsVersion = 1;

// One record of a weights file, independent of the in-memory precision.
struct WeightRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// Layout: "NNFC", u32 version, u32 count, then per record
// u16 name length, name bytes, u8 rank, u32 dims, f32 data (little-endian).
inline void write_weights(const std::filesystem::path& path, const std::vector<WeightRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weights file " + path.string());
  out.write(kWeightsMagic, 4);
  binio::put<std::uint32_t>(out, kWeightsVersion);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    binio::put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.shape.size()));
    for (auto d : r.shape) binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(r.data.data()), static_cast<std::streamsize>(r.data.size() * 4));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<WeightRecord> read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read weights file " + path.string());
  binio::expect_magic(in, kWeightsMagic, path.string());
  const auto version = binio::get<std::uint32_t>(in, "version");
  if (version != kWeightsVersion) throw FormatError(path.string() + ": unsupported weights version");
  const auto count = binio::get<std::uint32_t>(in, "parameter count");
  std::vector<WeightRecord> records(count);
  for (auto& r : records) {
    const auto len = binio::get<std::uint16_t>(in, "name length");
    r.name.resize(len);
    if (!in.read(r.name.data(), len)) throw FormatError("truncated parameter name");
    const auto rank = binio::get<std::uint8_t>(in, "rank");
    for (int i = 0; i < rank; ++i) r.shape.push_back(binio::get<std::uint32_t>(in, "dimension"));
    r.data.resize(numel(r.shape));
    if (!in.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(r.data.size() * 4))) {
      throw FormatError("truncated data for parameter " + r.name);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  return records;
}

template <class T>
std::vector<WeightRecord> to_records(const ParamStore<T>& store) {
  std::vector<WeightRecord> records;
  for (const auto& [name, t] : store.entries()) {
    WeightRecord r{name, t.shape(), {}};
    r.data.reserve(t.size());
    for (auto v : t.data()) r.data.push_back(static_cast<float>(v));
    records.push_back(std::move(r));
  }
  return records;
}

// Copies record values into an existing store with identical names and shapes.
template <class T>
void load_records(ParamStore<T>& store, const std::vector<WeightRecord>& records) {
  if (records.size() != store.count()) {
    throw FormatError("weights file has " + std::to_string(records.size()) + " parameters, model expects " +
                      std::to_string(store.count()));
  }
  for (const auto& r : records) {
    if (!store.contains(r.name)) throw FormatError("unexpected parameter '" + r.name + "' in weights file");
    auto t = store.get(r.name);
    if (t.shape() != r.shape) {
      throw FormatError("parameter '" + r.name + "' has shape " + shape_str(r.shape) + ", model expects " +
                        shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(r.data[i]);
  }
}

}  // namespace nnfc
