#pragma once

#include <map>
#include <string>
#include <vector>

#include "nnfc/dataset.hpp"

namespace nnfc {

// Caption-frequency baseline: ignores the images and emits the most frequent
// training caption of the sample's destination kind. Count ties go to the
// lexicographically smallest caption.
class NgramBaseline {
 public:
  static NgramBaseline fit(const std::vector<Sample>& train) {
    if (train.empty()) throw ContractError("ngram baseline: empty training split");
    std::map<int, std::map<std::string, std::size_t>> per_kind;
    std::map<std::string, std::size_t> global;
    for (const auto& s : train) {
      ++per_kind[s.scene.destination_kind][s.caption_train_text];
      ++global[s.caption_train_text];
    }
    NgramBaseline b;
    for (const auto& [kind, counts] : per_kind) b.by_kind_[kind] = most_frequent(counts);
    b.fallback_ = most_frequent(global);
    return b;
  }

  const std::string& generate(int destination_kind) const {
    auto it = by_kind_.find(destination_kind);
    return it == by_kind_.end() ? fallback_ : it->second;
  }
  const std::string& generate(const Sample& s) const { return generate(s.scene.destination_kind); }
  const std::string& fallback() const { return fallback_; }

 private:
  static std::string most_frequent(const std::map<std::string, std::size_t>& counts) {
    const std::pair<const std::string, std::size_t>* best = nullptr;
    for (const auto& kv : counts) {
      if (!best || kv.second > best->second) best = &kv;
    }
    return best->first;
  }

  std::map<int, std::string> by_kind_;
  std::string fallback_;
};

}  // namespace nnfc
