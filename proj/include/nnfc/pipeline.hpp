#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nnfc/baseline.hpp"
#include "nnfc/dataset.hpp"
#include "nnfc/metrics.hpp"
#include "nnfc/model.hpp"
#include "nnfc/training.hpp"

// Artifact-level operations behind the command-line tool: configuration,
// dataset generation, training, datastore construction, caption generation,
// evaluation and the ablation study.

namespace nnfc {

#ifdef NNFC_SCALAR_DOUBLE
using Scalar = double;
#else
using Scalar = float;
#endif

struct RunConfig {
  TrainConfig train;
  ModelConfig model;
  std::size_t knn_neighbors = 64;
  double lambda_knn = 0.25;
  bool no_nncm = false;
  bool no_cam = false;

  int samples = 5317;
  std::uint64_t data_seed = 0;
  SplitRatios ratios;
  bool single_reference = false;

  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string split = "test";
  std::filesystem::path dataset = "data";
  std::filesystem::path weights = "model.nnfc";
  std::filesystem::path datastore = "datastore.nnds";
  std::filesystem::path captions = "captions.txt";
  std::filesystem::path report = "report.json";
  std::filesystem::path log = "train_log.jsonl";
  std::filesystem::path work_dir = "ablation";
  bool quiet = false;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class V>
V parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  V v{};
  in >> v;
  if (in.fail() || !in.eof()) throw ConfigError("invalid value '" + value + "' for " + key);
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  throw ConfigError("invalid boolean '" + value + "' for " + key);
}

}  // namespace config_detail

// Applies one key=value setting; unknown keys are rejected.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  using config_detail::parse_bool;
  using config_detail::parse_number;
  auto num = [&](auto& field) { field = parse_number<std::decay_t<decltype(field)>>(key, value); };
  if (key == "lambda_ce") num(c.train.lambda_ce);
  else if (key == "lambda_nce") num(c.train.lambda_nce);
  else if (key == "lr") num(c.train.lr);
  else if (key == "beta1") num(c.train.beta1);
  else if (key == "beta2") num(c.train.beta2);
  else if (key == "adam_eps") num(c.train.adam_eps);
  else if (key == "batch") num(c.train.batch);
  else if (key == "max_epochs") num(c.train.max_epochs);
  else if (key == "gl_threshold") num(c.train.gl_threshold);
  else if (key == "temperature") num(c.train.temperature);
  else if (key == "cam_epochs") num(c.train.cam_epochs);
  else if (key == "cam_lr") num(c.train.cam_lr);
  else if (key == "seed") num(c.train.seed);
  else if (key == "d_model") num(c.model.d_model);
  else if (key == "heads") num(c.model.heads);
  else if (key == "encoder_layers") num(c.model.encoder_layers);
  else if (key == "decoder_layers") num(c.model.decoder_layers);
  else if (key == "ffn_mult") num(c.model.ffn_mult);
  else if (key == "max_len") num(c.model.max_len);
  else if (key == "cam_channels") num(c.model.cam_channels);
  else if (key == "knn_neighbors") num(c.knn_neighbors);
  else if (key == "lambda_knn") num(c.lambda_knn);
  else if (key == "no_nncm") c.no_nncm = parse_bool(key, value);
  else if (key == "no_cam") c.no_cam = parse_bool(key, value);
  else if (key == "samples") num(c.samples);
  else if (key == "data_seed") num(c.data_seed);
  else if (key == "train_ratio") num(c.ratios.train);
  else if (key == "val_ratio") num(c.ratios.val);
  else if (key == "test_ratio") num(c.ratios.test);
  else if (key == "single_reference") c.single_reference = parse_bool(key, value);
  else if (key == "split") c.split = value;
  else if (key == "dataset") c.dataset = value;
  else if (key == "weights") c.weights = value;
  else if (key == "datastore") c.datastore = value;
  else if (key == "captions") c.captions = value;
  else if (key == "report") c.report = value;
  else if (key == "log") c.log = value;
  else if (key == "work_dir") c.work_dir = value;
  else if (key == "quiet") c.quiet = parse_bool(key, value);
  else if (key == "seeds") {
    c.seeds.clear();
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) c.seeds.push_back(parse_number<std::uint64_t>(key, config_detail::trim(item)));
    if (c.seeds.empty()) throw ConfigError("seeds must list at least one seed");
  } else {
    throw ConfigError("unknown configuration key '" + key + "'");
  }
}

// Flat "key = value" file; '#' starts a comment.
inline void load_config_file(RunConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    apply_setting(c, config_detail::trim(line.substr(0, eq)), config_detail::trim(line.substr(eq + 1)));
  }
}

inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  apply_setting(c, config_detail::trim(assignment.substr(0, eq)), config_detail::trim(assignment.substr(eq + 1)));
}

class Progress {
 public:
  explicit Progress(bool quiet) : quiet_(quiet) {}
  template <class... A>
  void operator()(const A&... parts) const {
    if (quiet_) return;
    (std::cerr << ... << parts) << '\n';
  }

 private:
  bool quiet_;
};

// ---- dataset ----

inline Dataset generate_dataset(const RunConfig& c) {
  DatasetConfig dc;
  dc.single_reference = c.single_reference;
  return build_dataset(c.samples, c.data_seed, c.ratios, dc);
}

// ---- training ----

inline std::uint64_t model_init_seed(std::uint64_t seed) { return derive_seed(seed, 0x1A17); }

inline ModelConfig model_config_for(const RunConfig& c, const Dataset& ds) {
  ModelConfig mc = c.model;
  mc.vocab_size = ds.vocab.size();
  return mc;
}

inline std::vector<int> collision_labels(const std::vector<Sample>& samples) {
  std::vector<int> y;
  for (const auto& s : samples) y.push_back(s.collision_label ? 1 : 0);
  return y;
}

struct TrainedModel {
  std::unique_ptr<CaptionModel<Scalar>> model;
  TrainResult result;
  std::vector<CamEpoch> cam_log;
  double cam_val_accuracy = 0.0;
};

// CAM pre-training (skipped for the CAM ablation), then caption training.
inline TrainedModel train_pipeline(const Dataset& ds, const RunConfig& c, std::uint64_t seed,
                                   const EpochCallback& on_epoch = {}) {
  TrainConfig tc = c.train;
  tc.seed = seed;
  tc.validate();
  Progress say(c.quiet);
  TrainedModel out;
  out.model = std::make_unique<CaptionModel<Scalar>>(model_config_for(c, ds), model_init_seed(seed));
  auto& model = *out.model;
  if (!c.no_cam && tc.cam_epochs > 0) {
    std::vector<SampleInputs<Scalar>> cam_train, cam_val;
    for (const auto& s : ds.train) cam_train.push_back(model.inputs(s));
    for (const auto& s : ds.val) cam_val.push_back(model.inputs(s));
    out.cam_log = pretrain_cam(model, cam_train, collision_labels(ds.train), tc);
    if (!cam_val.empty()) out.cam_val_accuracy = cam_accuracy(model, cam_val, collision_labels(ds.val));
    say("cam: bce ", out.cam_log.back().bce, " train acc ", out.cam_log.back().accuracy, " val acc ",
        out.cam_val_accuracy);
  }
  const auto train_split = prepare_split(model, ds.train, c.no_cam);
  const auto val_split = prepare_split(model, ds.val, c.no_cam);
  out.result = train(model, train_split, val_split, tc, [&](const EpochRecord& r) {
    say("epoch ", r.epoch, ": train ", r.train_loss, " (ce ", r.train_ce, ") val ", r.val_loss, " gl ", r.gl);
    if (on_epoch) on_epoch(r);
  });
  return out;
}

inline std::unique_ptr<CaptionModel<Scalar>> load_model(const std::filesystem::path& path, const RunConfig& c) {
  const auto records = read_weights(path);
  auto model = std::make_unique<CaptionModel<Scalar>>(infer_config(records, c.model.heads), 0);
  load_records(model->params(), records);
  return model;
}

// ---- datastore ----

inline Datastore datastore_for(const CaptionModel<Scalar>& model, const std::vector<Sample>& train, bool no_cam) {
  const auto split = prepare_split(model, train, no_cam);
  return build_datastore(model, split.inputs, split.captions);
}

// ---- generation ----

struct CaptionLine {
  int id = 0;
  std::string text;
};

inline std::vector<CaptionLine> generate_captions(const CaptionModel<Scalar>& model, const Vocabulary& vocab,
                                                  const std::vector<Sample>& samples, bool no_cam,
                                                  const Datastore* store, std::size_t neighbors, double lambda) {
  if (model.config().vocab_size != vocab.size()) {
    throw FormatError("model vocabulary size " + std::to_string(model.config().vocab_size) +
                      " differs from dataset vocabulary size " + std::to_string(vocab.size()));
  }
  if (store && store->dim() != model.config().d_model) throw FormatError("datastore key width differs from model");
  KnnOptions knn{store, neighbors, lambda};
  std::vector<CaptionLine> out;
  for (const auto& s : samples) {
    auto in = model.inputs(s);
    model.attach_attention(in, no_cam);
    out.push_back({s.id, vocab.decode(greedy_generate(model, in, store ? &knn : nullptr))});
  }
  return out;
}

inline constexpr const char* kCaptionsMagic = "NNFC-CAPTIONS";
inline constexpr int kCaptionsVersion = 1;

// Header line "NNFC-CAPTIONS <version> <split> <count>", then "<id>\t<caption>".
inline void write_captions(const std::filesystem::path& path, const std::string& split,
                           const std::vector<CaptionLine>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write captions file " + path.string());
  out << kCaptionsMagic << ' ' << kCaptionsVersion << ' ' << split << ' ' << lines.size() << '\n';
  for (const auto& l : lines) out << l.id << '\t' << l.text << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

struct CaptionFile {
  std::string split;
  std::vector<CaptionLine> lines;
};

inline CaptionFile read_captions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read captions file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty captions file");
  std::istringstream header(line);
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  CaptionFile f;
  if (!(header >> magic >> version >> f.split >> count) || magic != kCaptionsMagic) {
    throw FormatError(path.string() + ": not a captions file");
  }
  if (version != kCaptionsVersion) throw FormatError(path.string() + ": unsupported captions version");
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ": malformed caption line");
    try {
      f.lines.push_back({std::stoi(line.substr(0, tab)), line.substr(tab + 1)});
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": malformed sample id");
    }
  }
  if (f.lines.size() != count) throw FormatError(path.string() + ": line count differs from header");
  return f;
}

// ---- evaluation ----

// Stands in for a caption that decoded to no words, so the corpus stays well-formed.
inline constexpr const char* kEmptyCaption = "<empty>";

inline EvalCorpus eval_corpus(const std::vector<CaptionLine>& lines, const std::vector<Sample>& samples) {
  std::map<int, const Sample*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  EvalCorpus corpus;
  for (const auto& l : lines) {
    auto it = by_id.find(l.id);
    if (it == by_id.end()) throw FormatError("caption for unknown sample id " + std::to_string(l.id));
    corpus.push_back(make_eval_item(l.text.empty() ? kEmptyCaption : l.text, it->second->captions_eval_text));
  }
  return corpus;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Sample standard deviation; zero for a single run.
inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("mean_std: no values");
  MeanStd r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

inline constexpr const char* kReportMagic = "NNFC-REPORT";
inline constexpr int kReportVersion = 1;

struct MetricSummary {
  MeanStd bleu4, rouge_l, cider_d;
  std::size_t runs = 0;
};

inline MetricSummary summarize(const std::vector<MetricScores>& runs) {
  std::vector<double> b, r, c;
  for (const auto& s : runs) {
    b.push_back(s.bleu4);
    r.push_back(s.rouge_l);
    c.push_back(s.cider_d);
  }
  return {mean_std(b), mean_std(r), mean_std(c), runs.size()};
}

inline nlohmann::json summary_json(const MetricSummary& s) {
  auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  return {{"runs", s.runs}, {"bleu4", ms(s.bleu4)}, {"rouge_l", ms(s.rouge_l)}, {"cider_d", ms(s.cider_d)}};
}

inline std::string format_mean_std(const MeanStd& m, int precision) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << m.mean << " ± " << m.std;
  return out.str();
}

// ---- ablation ----

struct AblationRow {
  std::string name;
  std::vector<MetricScores> runs;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds;
  std::size_t train = 0, val = 0, test = 0;
  double seconds = 0.0;

  const AblationRow& row(const std::string& name) const {
    for (const auto& r : rows) {
      if (r.name == name) return r;
    }
    throw ContractError("no ablation row named " + name);
  }
};

// Display scale: BLEU-4 and ROUGE-L as
// percentages, CIDEr-D x10. The best mean in each column is marked with **.
inline std::string format_ablation_table(const AblationReport& rep) {
  std::vector<MetricSummary> sums;
  for (const auto& r : rep.rows) sums.push_back(summarize(r.runs));
  auto best_of = [&](auto get) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < sums.size(); ++i) {
      if (get(sums[i]) > get(sums[best])) best = i;
    }
    return best;
  };
  const std::size_t bb = best_of([](const MetricSummary& s) { return s.bleu4.mean; });
  const std::size_t br = best_of([](const MetricSummary& s) { return s.rouge_l.mean; });
  const std::size_t bc = best_of([](const MetricSummary& s) { return s.cider_d.mean; });
  auto cell = [](MeanStd m, double factor, bool best) {
    std::string s = format_mean_std({m.mean * factor, m.std * factor}, 2);
    return best ? "**" + s + "**" : s;
  };
  std::ostringstream out;
  out << "| Method | BLEU-4 | ROUGE-L | CIDEr-D |\n|---|---|---|---|\n";
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    out << "| " << rep.rows[i].name << " | " << cell(sums[i].bleu4, 100.0, i == bb) << " | "
        << cell(sums[i].rouge_l, 100.0, i == br) << " | " << cell(sums[i].cider_d, 10.0, i == bc) << " |\n";
  }
  return out.str();
}

inline nlohmann::json ablation_json(const AblationReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    nlohmann::json runs = nlohmann::json::array();
    for (std::size_t i = 0; i < r.runs.size(); ++i) {
      runs.push_back({{"bleu4", r.runs[i].bleu4}, {"rouge_l", r.runs[i].rouge_l}, {"cider_d", r.runs[i].cider_d}});
    }
    rows.push_back({{"method", r.name}, {"summary", summary_json(summarize(r.runs))}, {"runs", runs}});
  }
  return {{"magic", kReportMagic}, {"version", kReportVersion}, {"kind", "ablation"},
          {"seeds", rep.seeds},    {"train", rep.train},          {"val", rep.val},
          {"test", rep.test},      {"seconds", rep.seconds},      {"rows", rows}};
}

inline MetricScores score_lines(const std::vector<CaptionLine>& lines, const std::vector<Sample>& samples) {
  return evaluate_corpus(eval_corpus(lines, samples));
}

// Every seed trains a full model (CAM + NNCM) and a CAM-ablated model on the
// same dataset. The NNCM ablation decodes the full model without the
// datastore. The frequency baseline is seed-independent.
inline AblationReport run_ablation(const Dataset& ds, const RunConfig& c) {
  const auto start = std::chrono::steady_clock::now();
  Progress say(c.quiet);
  const auto& test = ds.split(c.split);
  AblationReport rep;
  rep.seeds = c.seeds;
  rep.train = ds.train.size();
  rep.val = ds.val.size();
  rep.test = test.size();
  AblationRow full{"Ours", {}}, no_nncm{"Ours (w/o NNCM)", {}}, no_cam{"Ours (w/o CAM)", {}},
      base{"Frequency baseline", {}};
  const auto baseline = NgramBaseline::fit(ds.train);
  std::vector<CaptionLine> base_lines;
  for (const auto& s : test) base_lines.push_back({s.id, baseline.generate(s)});
  const auto base_scores = score_lines(base_lines, test);
  for (std::uint64_t seed : c.seeds) {
    for (bool ablate_cam : {false, true}) {
      RunConfig rc = c;
      rc.no_cam = ablate_cam;
      say("seed ", seed, ablate_cam ? ": training without CAM" : ": training full model");
      auto trained = train_pipeline(ds, rc, seed);
      const auto store = datastore_for(*trained.model, ds.train, ablate_cam);
      say("datastore entries: ", store.size());
      const auto with_knn =
          generate_captions(*trained.model, ds.vocab, test, ablate_cam, &store, c.knn_neighbors, c.lambda_knn);
      const auto scores = score_lines(with_knn, test);
      if (ablate_cam) {
        no_cam.runs.push_back(scores);
      } else {
        full.runs.push_back(scores);
        const auto plain =
            generate_captions(*trained.model, ds.vocab, test, false, nullptr, c.knn_neighbors, c.lambda_knn);
        no_nncm.runs.push_back(score_lines(plain, test));
      }
      say("  cider-d ", scores.cider_d);
    }
    base.runs.push_back(base_scores);
  }
  rep.rows = {full, no_nncm, no_cam, base};
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace nnfc
