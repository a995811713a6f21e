#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "nnfc/error.hpp"
#include "nnfc/scene.hpp"

namespace nnfc {

inline constexpr int kGridChannels = 4;
inline constexpr int kGridCells = kGridSize * kGridSize;
inline constexpr int kGridValues = kGridChannels * kGridCells;
inline constexpr int kRegionVisualDim = 32;

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

inline constexpr const char* kDatasetMagic = "NNFC-DATASET";
inline constexpr int kDatasetVersion = 1;

struct RegionDescriptor {
  std::array<double, kRegionVisualDim> visual{};
  std::array<double, 4> box{};  // x1, y1, x2, y2 in cells
};

struct Sample {
  int id = 0;
  Scene scene;
  Outcome outcome;
  std::vector<double> dest_grid;  // [4][16][16]: R, G, placement marker, height
  std::vector<double> targ_grid;  // [4][16][16]: R, G, shape, height
  std::vector<RegionDescriptor> regions;
  bool collision_label = false;
  std::string caption_train_text;
  std::vector<std::string> captions_eval_text;
  std::vector<int> caption_train;
  std::vector<std::vector<int>> captions_eval;
};

// Token <-> id map with PAD=0, BOS=1, EOS=2, UNK=3.
class Vocabulary {
 public:
  Vocabulary() : tokens_{"<pad>", "<bos>", "<eos>", "<unk>"} { reindex(); }

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 4 || tokens_[0] != "<pad>" || tokens_[1] != "<bos>" || tokens_[2] != "<eos>" ||
        tokens_[3] != "<unk>") {
      throw FormatError("vocabulary must start with <pad>, <bos>, <eos>, <unk>");
    }
    reindex();
  }

  // Builds from a corpus of captions; words are sorted so the result does not
  // depend on corpus order.
  static Vocabulary from_corpus(const std::vector<std::string>& captions) {
    std::set<std::string> words;
    for (const auto& c : captions) {
      for (auto& w : split_tokens(c)) words.insert(w);
    }
    std::vector<std::string> tokens{"<pad>", "<bos>", "<eos>", "<unk>"};
    for (const auto& w : words) {
      if (std::find(tokens.begin(), tokens.begin() + 4, w) == tokens.begin() + 4) tokens.push_back(w);
    }
    return Vocabulary(std::move(tokens));
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_tokens(text)) ids.push_back(id(w));
    return ids;
  }

  // Drops BOS/PAD and stops at EOS.
  std::string decode(const std::vector<int>& ids) const {
    std::vector<std::string> words;
    for (int i : ids) {
      if (i == kEosId) break;
      if (i == kBosId || i == kPadId) continue;
      if (i < 0 || static_cast<std::size_t>(i) >= tokens_.size()) throw DimensionError("token id out of range");
      words.push_back(tokens_[i]);
    }
    return join_tokens(words);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary file " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read vocabulary file " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    return Vocabulary(std::move(tokens));
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
        throw FormatError("duplicate vocabulary token '" + tokens_[i] + "'");
      }
    }
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

namespace render {

inline std::array<double, 2> surface_color(int kind) { return {0.05 + 0.05 * (kind % 3), 0.05 + 0.05 * (kind / 3)}; }
inline std::array<double, 2> obstacle_color(int cls) { return {0.3 + 0.15 * (cls % 5), 0.3 + 0.15 * (cls / 5)}; }
inline std::array<double, 2> target_color(int cls) { return {0.3 + 0.1 * (cls % 7), 0.3 + 0.4 * (cls / 7)}; }

inline double& at(std::vector<double>& grid, int channel, int row, int col) {
  return grid[(channel * kGridSize + row) * kGridSize + col];
}

inline std::vector<double> destination_grid(const Scene& scene) {
  std::vector<double> grid(kGridValues, 0.0);
  const auto surface = surface_color(scene.destination_kind);
  for (int r = 0; r < kGridSize; ++r) {
    for (int c = 0; c < kGridSize; ++c) {
      at(grid, 0, r, c) = surface[0];
      at(grid, 1, r, c) = surface[1];
    }
  }
  for (const auto& ob : scene.obstacles) {
    const auto color = obstacle_color(ob.cls);
    for (int r = ob.footprint.row; r < ob.footprint.row + ob.footprint.rows; ++r) {
      for (int c = ob.footprint.col; c < ob.footprint.col + ob.footprint.cols; ++c) {
        at(grid, 0, r, c) = color[0];
        at(grid, 1, r, c) = color[1];
        at(grid, 3, r, c) = ob.height / 4.0;
      }
    }
  }
  const CellRect fp = target_footprint(scene.target, scene.placement_row, scene.placement_col);
  for (int r = fp.row; r < fp.row + fp.rows; ++r) {
    for (int c = fp.col; c < fp.col + fp.cols; ++c) at(grid, 2, r, c) = 1.0;
  }
  return grid;
}

// Close-up of the held object, 4 pixels per footprint cell, centered.
inline std::vector<double> target_grid(int target) {
  std::vector<double> grid(kGridValues, 0.0);
  const auto& info = kTargetClasses.at(target);
  const auto color = target_color(target);
  const int h = info.rows * 4, w = info.cols * 4;
  const int r0 = (kGridSize - h) / 2, c0 = (kGridSize - w) / 2;
  for (int r = r0; r < r0 + h; ++r) {
    for (int c = c0; c < c0 + w; ++c) {
      if (info.round) {
        const double dy = (r + 0.5 - (r0 + h / 2.0)) / (h / 2.0);
        const double dx = (c + 0.5 - (c0 + w / 2.0)) / (w / 2.0);
        if (dx * dx + dy * dy > 1.0) continue;
      }
      at(grid, 0, r, c) = color[0];
      at(grid, 1, r, c) = color[1];
      at(grid, 2, r, c) = info.round ? 1.0 : 0.5;
      at(grid, 3, r, c) = info.height / 4.0;
    }
  }
  return grid;
}

// Class one-hot (25) followed by height, round, tall, near_edge, color (2), area.
inline RegionDescriptor region(const Obstacle& ob) {
  RegionDescriptor rd;
  rd.visual[ob.cls] = 1.0;
  const auto color = obstacle_color(ob.cls);
  rd.visual[25] = ob.height / 4.0;
  rd.visual[26] = ob.round ? 1.0 : 0.0;
  rd.visual[27] = ob.tall ? 1.0 : 0.0;
  rd.visual[28] = ob.near_edge ? 1.0 : 0.0;
  rd.visual[29] = color[0];
  rd.visual[30] = color[1];
  rd.visual[31] = ob.footprint.rows * ob.footprint.cols / 16.0;
  rd.box = {static_cast<double>(ob.footprint.col), static_cast<double>(ob.footprint.row),
            static_cast<double>(ob.footprint.col + ob.footprint.cols),
            static_cast<double>(ob.footprint.row + ob.footprint.rows)};
  return rd;
}

}  // namespace render

struct DatasetConfig {
  SceneConfig scene;
  bool single_reference = false;  // references = {caption_train} only
};

// Sample `index` of a corpus seeded with `seed`; token ids are left empty.
inline Sample generate_sample(std::uint64_t seed, int index, const DatasetConfig& config = {}) {
  const std::uint64_t child = derive_seed(seed, static_cast<std::uint64_t>(index));
  Sample s;
  s.id = index;
  s.scene = generate_scene(child, config.scene);
  s.outcome = simulate_placement(s.scene);
  s.collision_label = s.outcome.collided;
  s.dest_grid = render::destination_grid(s.scene);
  s.targ_grid = render::target_grid(s.scene.target);
  for (const auto& ob : s.scene.obstacles) s.regions.push_back(render::region(ob));
  std::mt19937_64 caption_rng(derive_seed(child, 0xCA));
  CaptionSet caps = make_captions(s.scene, s.outcome, caption_rng);
  s.caption_train_text = caps.train;
  s.captions_eval_text = config.single_reference ? std::vector<std::string>{caps.train} : caps.eval;
  return s;
}

inline void encode_captions(Sample& s, const Vocabulary& vocab) {
  s.caption_train = vocab.encode(s.caption_train_text);
  s.captions_eval.clear();
  for (const auto& c : s.captions_eval_text) s.captions_eval.push_back(vocab.encode(c));
}

struct SplitRatios {
  double train = 4186.0 / 5317.0;
  double val = 474.0 / 5317.0;
  double test = 657.0 / 5317.0;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  Vocabulary vocab;

  const std::vector<Sample>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
  }
};

// Largest-remainder apportionment of n items to the given shares.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& shares) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * shares[k];
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    rem[k] = exact - std::floor(exact);
    assigned += counts[k];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (rem[k] > rem[best]) best = k;
    }
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

// Assigns split labels (0 train, 1 val, 2 test) to samples ordered by
// destination kind so that every kind is spread proportionally, while the
// global split sizes are exactly the apportioned counts.
inline std::vector<int> stratified_labels(const std::vector<int>& kinds, const SplitRatios& ratios) {
  const std::array<double, 3> shares{ratios.train, ratios.val, ratios.test};
  for (double r : shares) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("split ratios must lie in [0, 1]");
  }
  if (std::abs(shares[0] + shares[1] + shares[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  const std::size_t n = kinds.size();
  std::map<int, std::size_t> per_kind;
  for (int k : kinds) ++per_kind[k];
  for (int kind = 0; kind < kNumDestinationKinds; ++kind) {
    const std::size_t count = per_kind.count(kind) ? per_kind[kind] : 0;
    for (int s = 0; s < 3; ++s) {
      if (shares[s] > 0.0 && static_cast<double>(count) * shares[s] < 0.5) {
        throw ConfigError("n=" + std::to_string(n) + " too small to stratify: destination '" +
                          std::string(kDestinationNames[kind]) + "' has " + std::to_string(count) + " samples");
      }
    }
  }
  const auto totals = apportion(n, shares);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return kinds[a] < kinds[b]; });
  std::vector<int> labels(n, 0);
  std::array<std::size_t, 3> assigned{};
  for (std::size_t p = 0; p < n; ++p) {
    int best = -1;
    double best_deficit = 0.0;
    for (int s = 0; s < 3; ++s) {
      if (assigned[s] >= totals[s]) continue;
      const double deficit = static_cast<double>(totals[s]) * static_cast<double>(p + 1) / static_cast<double>(n) -
                             static_cast<double>(assigned[s]);
      if (best < 0 || deficit > best_deficit) {
        best = s;
        best_deficit = deficit;
      }
    }
    labels[order[p]] = best;
    ++assigned[best];
  }
  return labels;
}

inline Dataset build_dataset(int n, std::uint64_t seed, const SplitRatios& ratios = {},
                             const DatasetConfig& config = {}) {
  if (n <= 0) throw ConfigError("dataset size must be positive");
  std::vector<Sample> all;
  all.reserve(n);
  std::vector<int> kinds;
  for (int i = 0; i < n; ++i) {
    all.push_back(generate_sample(seed, i, config));
    kinds.push_back(all.back().scene.destination_kind);
  }
  const auto labels = stratified_labels(kinds, ratios);
  Dataset ds;
  for (int i = 0; i < n; ++i) {
    auto& dst = labels[i] == 0 ? ds.train : (labels[i] == 1 ? ds.val : ds.test);
    dst.push_back(std::move(all[i]));
  }
  std::vector<std::string> corpus;
  for (const auto& s : ds.train) {
    for (const auto& c : s.captions_eval_text) corpus.push_back(c);
    corpus.push_back(s.caption_train_text);
  }
  ds.vocab = Vocabulary::from_corpus(corpus);
  for (auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (auto& s : *split) encode_captions(s, ds.vocab);
  }
  return ds;
}

// ---- line-delimited JSON persistence ----

namespace json_io {

using nlohmann::json;

inline json grid_to_json(const std::vector<double>& grid) {
  json out = json::array();
  for (int ch = 0; ch < kGridChannels; ++ch) {
    json rows = json::array();
    for (int r = 0; r < kGridSize; ++r) {
      json row = json::array();
      for (int c = 0; c < kGridSize; ++c) row.push_back(grid[(ch * kGridSize + r) * kGridSize + c]);
      rows.push_back(std::move(row));
    }
    out.push_back(std::move(rows));
  }
  return out;
}

inline std::vector<double> grid_from_json(const json& j) {
  std::vector<double> grid(kGridValues);
  if (!j.is_array() || j.size() != kGridChannels) throw FormatError("grid must have 4 channels");
  for (int ch = 0; ch < kGridChannels; ++ch) {
    if (j[ch].size() != kGridSize) throw FormatError("grid channel must have 16 rows");
    for (int r = 0; r < kGridSize; ++r) {
      if (j[ch][r].size() != kGridSize) throw FormatError("grid row must have 16 columns");
      for (int c = 0; c < kGridSize; ++c) grid[(ch * kGridSize + r) * kGridSize + c] = j[ch][r][c].get<double>();
    }
  }
  return grid;
}

inline json sample_to_json(const Sample& s) {
  json obstacles = json::array();
  for (const auto& ob : s.scene.obstacles) {
    obstacles.push_back({{"class", kObstacleClasses[ob.cls].name},
                         {"class_id", ob.cls},
                         {"footprint", {ob.footprint.row, ob.footprint.col, ob.footprint.rows, ob.footprint.cols}},
                         {"height", ob.height},
                         {"round", ob.round},
                         {"tall", ob.tall},
                         {"near_edge", ob.near_edge}});
  }
  json regions = json::array();
  for (const auto& rd : s.regions) regions.push_back({{"visual", rd.visual}, {"box", rd.box}});
  json outcome = {{"collided", s.outcome.collided}, {"event", event_name(s.outcome.event)}};
  outcome["obstacle"] = s.outcome.collided_obstacle ? json(*s.outcome.collided_obstacle) : json(nullptr);
  return {{"id", s.id},
          {"seed", s.scene.seed},
          {"destination_kind", kDestinationNames[s.scene.destination_kind]},
          {"destination_id", s.scene.destination_kind},
          {"target", kTargetClasses[s.scene.target].name},
          {"target_id", s.scene.target},
          {"placement", {s.scene.placement_row, s.scene.placement_col}},
          {"obstacles", obstacles},
          {"outcome", outcome},
          {"collision_label", s.collision_label},
          {"dest_grid", grid_to_json(s.dest_grid)},
          {"targ_grid", grid_to_json(s.targ_grid)},
          {"regions", regions},
          {"caption_train_text", s.caption_train_text},
          {"captions_eval_text", s.captions_eval_text},
          {"caption_train", s.caption_train},
          {"captions_eval", s.captions_eval}};
}

inline Sample sample_from_json(const json& j) {
  try {
    Sample s;
    s.id = j.at("id").get<int>();
    s.scene.seed = j.at("seed").get<std::uint64_t>();
    s.scene.destination_kind = j.at("destination_id").get<int>();
    s.scene.target = j.at("target_id").get<int>();
    s.scene.placement_row = j.at("placement").at(0).get<int>();
    s.scene.placement_col = j.at("placement").at(1).get<int>();
    for (const auto& o : j.at("obstacles")) {
      Obstacle ob;
      ob.cls = o.at("class_id").get<int>();
      const auto& fp = o.at("footprint");
      ob.footprint = {fp.at(0).get<int>(), fp.at(1).get<int>(), fp.at(2).get<int>(), fp.at(3).get<int>()};
      ob.height = o.at("height").get<int>();
      ob.round = o.at("round").get<bool>();
      ob.tall = o.at("tall").get<bool>();
      ob.near_edge = o.at("near_edge").get<bool>();
      s.scene.obstacles.push_back(ob);
      for (int r = ob.footprint.row; r < ob.footprint.row + ob.footprint.rows; ++r) {
        for (int c = ob.footprint.col; c < ob.footprint.col + ob.footprint.cols; ++c) {
          s.scene.height_field.at(r * kGridSize + c) = static_cast<std::uint8_t>(ob.height);
        }
      }
    }
    const auto& oc = j.at("outcome");
    s.outcome.collided = oc.at("collided").get<bool>();
    s.outcome.event = event_from_name(oc.at("event").get<std::string>());
    if (!oc.at("obstacle").is_null()) s.outcome.collided_obstacle = oc.at("obstacle").get<int>();
    s.collision_label = j.at("collision_label").get<bool>();
    s.dest_grid = grid_from_json(j.at("dest_grid"));
    s.targ_grid = grid_from_json(j.at("targ_grid"));
    for (const auto& r : j.at("regions")) {
      RegionDescriptor rd;
      rd.visual = r.at("visual").get<std::array<double, kRegionVisualDim>>();
      rd.box = r.at("box").get<std::array<double, 4>>();
      s.regions.push_back(rd);
    }
    s.caption_train_text = j.at("caption_train_text").get<std::string>();
    s.captions_eval_text = j.at("captions_eval_text").get<std::vector<std::string>>();
    s.caption_train = j.at("caption_train").get<std::vector<int>>();
    s.captions_eval = j.at("captions_eval").get<std::vector<std::vector<int>>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed sample record: ") + e.what());
  }
}

}  // namespace json_io

inline void write_split(const std::filesystem::path& path, const std::string& split,
                        const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  nlohmann::json header = {
      {"magic", kDatasetMagic}, {"version", kDatasetVersion}, {"split", split}, {"count", samples.size()}};
  out << header.dump() << '\n';
  for (const auto& s : samples) out << json_io::sample_to_json(s).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<Sample> read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty dataset file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw FormatError(path.string() + ": header is not a JSON record");
  }
  if (!header.is_object() || header.value("magic", "") != kDatasetMagic) {
    throw FormatError(path.string() + ": bad dataset magic");
  }
  if (header.value("version", 0) != kDatasetVersion) throw FormatError(path.string() + ": unsupported version");
  std::vector<Sample> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      samples.push_back(json_io::sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  if (samples.size() != header.value("count", std::size_t{0})) {
    throw FormatError(path.string() + ": record count differs from header");
  }
  return samples;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_split(dir / "train.jsonl", "train", ds.train);
  write_split(dir / "val.jsonl", "val", ds.val);
  write_split(dir / "test.jsonl", "test", ds.test);
  ds.vocab.save(dir / "vocab.txt");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  Dataset ds;
  ds.train = read_split(dir / "train.jsonl");
  ds.val = read_split(dir / "val.jsonl");
  ds.test = read_split(dir / "test.jsonl");
  ds.vocab = Vocabulary::load(dir / "vocab.txt");
  return ds;
}

}  // namespace nnfc
