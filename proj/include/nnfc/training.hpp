#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nnfc/model.hpp"
#include "nnfc/scene.hpp"

namespace nnfc {

struct TrainConfig {
  double lambda_ce = 0.9;
  double lambda_nce = 5.0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch = 16;
  std::size_t max_epochs = 30;
  double gl_threshold = 5.0;
  double temperature = 0.07;
  std::size_t cam_epochs = 10;
  double cam_lr = 1e-3;
  std::uint64_t seed = 1;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive and finite");
    };
    positive(lambda_ce, "lambda_ce");
    positive(lambda_nce, "lambda_nce");
    positive(lr, "lr");
    positive(adam_eps, "adam_eps");
    positive(gl_threshold, "gl_threshold");
    positive(temperature, "temperature");
    positive(cam_lr, "cam_lr");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in (0, 1)");
    }
    if (batch == 0) throw ConfigError("batch must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  }
};

// Symmetric contrastive loss between row-aligned image and text embeddings.
// Rows are L2-normalised; similarity logits are scaled by 1 / tau.
template <class T>
Tensor<T> info_nce(const Tensor<T>& img, const Tensor<T>& txt, double tau) {
  if (!img.defined() || !txt.defined() || img.rank() != 2 || img.shape() != txt.shape()) throw DimensionError("info_nce: embeddings must be matching [B, d]");
  const std::size_t b = img.dim(0);
  if (b == 0) throw ContractError("info_nce: empty batch");
  Tensor<T> sim = scale(matmul(l2_normalize_rows(img), transpose(l2_normalize_rows(txt))), static_cast<T>(1.0 / tau));
  std::vector<int> diag(b);
  std::iota(diag.begin(), diag.end(), 0);
  return scale(add(cross_entropy(sim, diag), cross_entropy(transpose(sim), diag)), T(0.5));
}

template <class T>
struct LossParts {
  Tensor<T> total;
  double ce = 0.0;
  double nce = 0.0;
};

// L = lambda_ce * mean token CE (PAD ignored) + lambda_nce * InfoNCE over the batch.
template <class T>
LossParts<T> loss_total(const CaptionModel<T>& model, const std::vector<const SampleInputs<T>*>& inputs,
                        const std::vector<const std::vector<int>*>& captions, const TrainConfig& cfg) {
  if (inputs.empty()) throw ContractError("loss_total: empty batch");
  if (inputs.size() != captions.size()) throw DimensionError("loss_total: inputs and captions differ in count");
  std::vector<Tensor<T>> ce_sums, imgs, txts;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto [input, target] = teacher_sequences(*captions[i], model.config().max_len);
    auto out = model.forward(*inputs[i], input);
    ce_sums.push_back(cross_entropy(out.dec.logits, target, kPadId, Reduction::kSum));
    tokens += static_cast<std::size_t>(std::count_if(target.begin(), target.end(), [](int t) { return t != kPadId; }));
    imgs.push_back(out.h_img);
    txts.push_back(out.h_txt);
  }
  Tensor<T> ce = ce_sums.front();
  for (std::size_t i = 1; i < ce_sums.size(); ++i) ce = add(ce, ce_sums[i]);
  ce = scale(ce, static_cast<T>(1.0 / static_cast<double>(std::max<std::size_t>(tokens, 1))));
  Tensor<T> nce = info_nce(concat<T>(imgs, 0), concat<T>(txts, 0), cfg.temperature);
  LossParts<T> parts;
  parts.total = add(scale(ce, static_cast<T>(cfg.lambda_ce)), scale(nce, static_cast<T>(cfg.lambda_nce)));
  parts.ce = static_cast<double>(ce.item());
  parts.nce = static_cast<double>(nce.item());
  return parts;
}

// Bias-corrected Adam over every trainable parameter that received a gradient.
template <class T>
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  explicit Adam(const TrainConfig& cfg) : Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps) {}

  void step(ParamStore<T>& store) {
    const auto& entries = store.entries();
    if (m_.size() != entries.size()) {
      m_.assign(entries.size(), {});
      v_.assign(entries.size(), {});
    }
    for (const auto& [name, t] : entries) {
      if (!t.requires_grad() || !t.has_grad()) continue;
      for (auto g : t.grad()) {
        if (!std::isfinite(static_cast<double>(g))) throw TrainingError("non-finite gradient in parameter '" + name + "'");
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Tensor<T> p = entries[i].second;
      if (!p.requires_grad() || !p.has_grad()) continue;
      auto& m = m_[i];
      auto& v = v_[i];
      if (m.empty()) {
        m.assign(p.size(), 0.0);
        v.assign(p.size(), 0.0);
      }
      auto g = p.grad();
      auto w = p.mutable_data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = b1_ * m[j] + (1.0 - b1_) * gj;
        v[j] = b2_ * v[j] + (1.0 - b2_) * gj * gj;
        const double update = lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

inline double generalization_loss(double e_va, double e_opt) {
  if (!(e_opt > 0.0)) throw ContractError("generalization loss needs a positive best validation loss");
  return 100.0 * (e_va / e_opt - 1.0);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_ce = 0.0;
  double val_loss = 0.0;
  double e_opt = 0.0;
  double gl = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  bool early_stopped = false;
  std::size_t best_epoch = 0;
};

template <class T>
struct CaptionSplit {
  std::vector<SampleInputs<T>> inputs;
  std::vector<std::vector<int>> captions;
  std::size_t size() const { return inputs.size(); }
};

template <class T>
CaptionSplit<T> prepare_split(const CaptionModel<T>& model, const std::vector<Sample>& samples, bool no_cam) {
  CaptionSplit<T> split;
  split.inputs.reserve(samples.size());
  for (const auto& s : samples) {
    auto in = model.inputs(s);
    model.attach_attention(in, no_cam);
    split.inputs.push_back(std::move(in));
    split.captions.push_back(s.caption_train);
  }
  return split;
}

// Deterministic permutation of [0, n) for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x5EED0000ULL + epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

template <class T>
LossParts<T> batch_loss(const CaptionModel<T>& model, const CaptionSplit<T>& split,
                        const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                        const TrainConfig& cfg) {
  std::vector<const SampleInputs<T>*> in;
  std::vector<const std::vector<int>*> caps;
  for (std::size_t i = begin; i < end; ++i) {
    in.push_back(&split.inputs[order[i]]);
    caps.push_back(&split.captions[order[i]]);
  }
  return loss_total(model, in, caps, cfg);
}

// Mean total loss over fixed-order batches.
template <class T>
double evaluate_loss(const CaptionModel<T>& model, const CaptionSplit<T>& split, const TrainConfig& cfg) {
  if (split.size() == 0) throw ContractError("evaluate_loss: empty split");
  NoGradGuard no_grad;
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t b = 0; b < split.size(); b += cfg.batch) {
    total += static_cast<double>(batch_loss(model, split, order, b, std::min(b + cfg.batch, split.size()), cfg).total.item());
    ++batches;
  }
  return total / static_cast<double>(batches);
}

using EpochCallback = std::function<void(const EpochRecord&)>;

// Caption training with the CAM frozen. Stops when GL exceeds the threshold
// or after max_epochs, then restores the parameters of the best validation epoch.
template <class T>
TrainResult train(CaptionModel<T>& model, const CaptionSplit<T>& train_split, const CaptionSplit<T>& val_split,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_split.size() == 0) throw ContractError("train: empty training split");
  if (val_split.size() == 0) throw ContractError("train: empty validation split");
  auto& store = model.params();
  store.set_trainable("cam.", false);
  Adam<T> adam(cfg);
  TrainResult result;
  double e_opt = 0.0;
  auto best = store.snapshot();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = epoch_order(train_split.size(), cfg.seed, epoch);
    double loss_sum = 0.0, ce_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      store.zero_grad();
      auto parts = batch_loss(model, train_split, order, b, std::min(b + cfg.batch, order.size()), cfg);
      const double value = static_cast<double>(parts.total.item());
      if (!std::isfinite(value)) {
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(batches));
      }
      parts.total.backward();
      adam.step(store);
      loss_sum += value;
      ce_sum += parts.ce;
      ++batches;
    }
    store.zero_grad();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.train_ce = ce_sum / static_cast<double>(batches);
    rec.val_loss = evaluate_loss(model, val_split, cfg);
    if (!std::isfinite(rec.val_loss)) throw TrainingError("validation loss diverged at epoch " + std::to_string(epoch));
    if (epoch == 1 || rec.val_loss < e_opt) {
      e_opt = rec.val_loss;
      best = store.snapshot();
      result.best_epoch = epoch;
    }
    rec.e_opt = e_opt;
    rec.gl = generalization_loss(rec.val_loss, e_opt);
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.gl > cfg.gl_threshold) {
      result.early_stopped = true;
      break;
    }
  }
  store.restore(best);
  return result;
}

struct CamEpoch {
  std::size_t epoch = 0;
  double bce = 0.0;
  double accuracy = 0.0;
};

// Binary cross-entropy pre-training of the CAM on collision labels.
template <class T>
std::vector<CamEpoch> pretrain_cam(CaptionModel<T>& model, const std::vector<SampleInputs<T>>& inputs,
                                   const std::vector<int>& labels, const TrainConfig& cfg) {
  if (inputs.empty()) throw ContractError("pretrain_cam: no samples");
  if (inputs.size() != labels.size()) throw DimensionError("pretrain_cam: label count mismatch");
  auto& store = model.params();
  store.set_trainable("cam.", true);
  Adam<T> adam(cfg.cam_lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<CamEpoch> log;
  for (std::size_t epoch = 1; epoch <= cfg.cam_epochs; ++epoch) {
    const auto order = epoch_order(inputs.size(), derive_seed(cfg.seed, 0xCA), epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0, batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      store.zero_grad();
      const std::size_t end = std::min(b + cfg.batch, order.size());
      std::vector<Tensor<T>> logits;
      std::vector<T> y;
      for (std::size_t i = b; i < end; ++i) {
        auto out = model.run_cam(inputs[order[i]]);
        const int label = labels[order[i]];
        correct += ((out.logit.item() > T(0)) == (label != 0)) ? 1 : 0;
        logits.push_back(out.logit);
        y.push_back(static_cast<T>(label != 0));
      }
      Tensor<T> loss = bce_with_logits(concat<T>(logits, 0), y);
      if (!std::isfinite(static_cast<double>(loss.item()))) {
        throw TrainingError("CAM loss diverged at epoch " + std::to_string(epoch));
      }
      loss.backward();
      adam.step(store);
      loss_sum += static_cast<double>(loss.item());
      ++batches;
    }
    store.zero_grad();
    log.push_back({epoch, loss_sum / static_cast<double>(batches),
                   static_cast<double>(correct) / static_cast<double>(inputs.size())});
  }
  store.set_trainable("cam.", false);
  return log;
}

template <class T>
double cam_accuracy(const CaptionModel<T>& model, const std::vector<SampleInputs<T>>& inputs,
                    const std::vector<int>& labels) {
  if (inputs.empty()) throw ContractError("cam_accuracy: no samples");
  NoGradGuard no_grad;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    correct += ((model.run_cam(inputs[i]).logit.item() > T(0)) == (labels[i] != 0)) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(inputs.size());
}

inline constexpr const char* kTrainLogMagic = "NNFC-TRAINLOG";
inline constexpr int kTrainLogVersion = 1;

inline nlohmann::json epoch_to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"train_ce", r.train_ce},
          {"val_loss", r.val_loss}, {"e_opt", r.e_opt}, {"gl", r.gl}};
}

// JSON lines: a header record, then one record per epoch.
class TrainLogWriter {
 public:
  explicit TrainLogWriter(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw IoError("cannot write training log " + path.string());
    out_ << nlohmann::json{{"magic", kTrainLogMagic}, {"version", kTrainLogVersion}}.dump() << '\n';
  }
  void write(const EpochRecord& r) { out_ << epoch_to_json(r).dump() << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

inline std::vector<EpochRecord> read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read training log " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty training log");
  try {
    auto header = nlohmann::json::parse(line);
    if (header.at("magic") != kTrainLogMagic || header.at("version") != kTrainLogVersion) {
      throw FormatError(path.string() + ": not a training log");
    }
    std::vector<EpochRecord> out;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("epoch").get<std::size_t>(), j.at("train_loss").get<double>(), j.at("train_ce").get<double>(),
                     j.at("val_loss").get<double>(), j.at("e_opt").get<double>(), j.at("gl").get<double>()});
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace nnfc
