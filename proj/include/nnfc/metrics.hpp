#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "nnfc/error.hpp"
#include "nnfc/scene.hpp"

// Corpus-level BLEU-4, ROUGE-L and CIDEr-D over whitespace tokens, following
// the conventions of the standard captioning evaluation toolkit.

namespace nnfc {

using Tokens = std::vector<std::string>;

struct EvalItem {
  Tokens candidate;
  std::vector<Tokens> references;
};

using EvalCorpus = std::vector<EvalItem>;

inline EvalItem make_eval_item(const std::string& candidate, const std::vector<std::string>& references) {
  EvalItem item{split_tokens(candidate), {}};
  for (const auto& r : references) item.references.push_back(split_tokens(r));
  return item;
}

inline void validate_corpus(const EvalCorpus& corpus, const char* metric) {
  if (corpus.empty()) throw ContractError(std::string(metric) + ": empty corpus");
  for (const auto& item : corpus) {
    if (item.candidate.empty()) throw ContractError(std::string(metric) + ": empty candidate");
    if (item.references.empty()) throw ContractError(std::string(metric) + ": sample without references");
  }
}

using NgramCounts = std::map<Tokens, std::size_t>;

inline NgramCounts ngram_counts(const Tokens& words, std::size_t n) {
  NgramCounts counts;
  if (words.size() < n) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    ++counts[Tokens(words.begin() + static_cast<std::ptrdiff_t>(i), words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

inline constexpr double kBleuEpsilon = 1e-9;

struct BleuStats {
  std::array<std::size_t, 4> correct{};
  std::array<std::size_t, 4> guess{};
  std::size_t cand_len = 0;
  std::size_t ref_len = 0;
};

// Clipped n-gram matches and the closest reference length (shorter on ties).
inline BleuStats bleu_stats(const EvalCorpus& corpus) {
  BleuStats st;
  for (const auto& item : corpus) {
    const std::size_t c = item.candidate.size();
    std::size_t best = item.references.front().size();
    for (const auto& r : item.references) {
      const auto diff = [c](std::size_t len) { return len > c ? len - c : c - len; };
      if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
    }
    st.cand_len += c;
    st.ref_len += best;
    for (std::size_t n = 1; n <= 4; ++n) {
      NgramCounts max_ref;
      for (const auto& r : item.references) {
        for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
      }
      for (const auto& [g, k] : ngram_counts(item.candidate, n)) {
        auto it = max_ref.find(g);
        st.correct[n - 1] += std::min(k, it == max_ref.end() ? std::size_t{0} : it->second);
        st.guess[n - 1] += k;
      }
    }
  }
  return st;
}

// Geometric mean of clipped precisions times the brevity penalty. A zero
// match count is replaced by kBleuEpsilon.
inline double bleu4(const EvalCorpus& corpus) {
  validate_corpus(corpus, "bleu4");
  const auto st = bleu_stats(corpus);
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double num = st.correct[n] > 0 ? static_cast<double>(st.correct[n]) : kBleuEpsilon;
    const double den = static_cast<double>(std::max<std::size_t>(st.guess[n], 1));
    log_sum += std::log(num / den) / 4.0;
  }
  const double c = static_cast<double>(st.cand_len), r = static_cast<double>(st.ref_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum);
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr double kRougeBeta = 1.2;

// Best precision and best recall are taken separately over the references.
inline double rouge_l_sample(const EvalItem& item) {
  double p_max = 0.0, r_max = 0.0;
  for (const auto& ref : item.references) {
    const double lcs = static_cast<double>(lcs_length(item.candidate, ref));
    p_max = std::max(p_max, lcs / static_cast<double>(item.candidate.size()));
    if (!ref.empty()) r_max = std::max(r_max, lcs / static_cast<double>(ref.size()));
  }
  if (p_max == 0.0 || r_max == 0.0) return 0.0;
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * p_max * r_max / (r_max + b2 * p_max);
}

inline double rouge_l(const EvalCorpus& corpus) {
  validate_corpus(corpus, "rouge_l");
  double total = 0.0;
  for (const auto& item : corpus) total += rouge_l_sample(item);
  return total / static_cast<double>(corpus.size());
}

inline constexpr double kCiderSigma = 6.0;

namespace detail {

struct CiderVec {
  std::array<std::map<Tokens, double>, 4> weights;
  std::array<double, 4> norm{};
  double length = 0.0;  // bigram count
};

inline CiderVec cider_vec(const Tokens& words, const std::map<Tokens, double>& df, double log_n) {
  CiderVec v;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (const auto& [g, tf] : ngram_counts(words, n)) {
      auto it = df.find(g);
      const double d = it == df.end() ? 0.0 : it->second;
      const double w = static_cast<double>(tf) * (log_n - std::log(std::max(1.0, d)));
      v.weights[n - 1][g] = w;
      v.norm[n - 1] += w * w;
      if (n == 2) v.length += static_cast<double>(tf);
    }
  }
  for (auto& x : v.norm) x = std::sqrt(x);
  return v;
}

inline std::array<double, 4> cider_sim(const CiderVec& h, const CiderVec& r) {
  std::array<double, 4> val{};
  const double delta = h.length - r.length;
  for (std::size_t n = 0; n < 4; ++n) {
    for (const auto& [g, w] : h.weights[n]) {
      auto it = r.weights[n].find(g);
      if (it != r.weights[n].end()) val[n] += std::min(w, it->second) * it->second;
    }
    if (h.norm[n] != 0.0 && r.norm[n] != 0.0) val[n] /= h.norm[n] * r.norm[n];
    val[n] *= std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
  }
  return val;
}

}  // namespace detail

// Per-sample CIDEr-D scores; document frequencies come from the references.
inline std::vector<double> cider_d_scores(const EvalCorpus& corpus) {
  validate_corpus(corpus, "cider_d");
  if (corpus.size() == 1) std::cerr << "warning: CIDEr-D on a single-sample corpus is always 0\n";
  std::map<Tokens, double> df;
  for (const auto& item : corpus) {
    std::map<Tokens, bool> seen;
    for (const auto& ref : item.references) {
      for (std::size_t n = 1; n <= 4; ++n) {
        for (const auto& kv : ngram_counts(ref, n)) seen[kv.first] = true;
      }
    }
    for (const auto& kv : seen) df[kv.first] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(corpus.size()));
  std::vector<double> scores;
  scores.reserve(corpus.size());
  for (const auto& item : corpus) {
    const auto h = detail::cider_vec(item.candidate, df, log_n);
    double acc = 0.0;
    for (const auto& ref : item.references) {
      const auto s = detail::cider_sim(h, detail::cider_vec(ref, df, log_n));
      acc += (s[0] + s[1] + s[2] + s[3]) / 4.0;
    }
    scores.push_back(acc / static_cast<double>(item.references.size()) * 10.0);
  }
  return scores;
}

inline double cider_d(const EvalCorpus& corpus) {
  const auto scores = cider_d_scores(corpus);
  double total = 0.0;
  for (double s : scores) total += s;
  return total / static_cast<double>(scores.size());
}

struct MetricScores {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
};

inline MetricScores evaluate_corpus(const EvalCorpus& corpus) {
  return {bleu4(corpus), rouge_l(corpus), cider_d(corpus)};
}

}  // namespace nnfc
