#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nnfc/error.hpp"

// Synthetic placement scenes: a destination surface with obstacles, a target
// object and a planned placement cell, plus a rule-based collision outcome and
// template captions describing it.

namespace nnfc {

inline constexpr int kGridSize = 16;
inline constexpr int kMaxObstacles = 8;
inline constexpr int kNumDestinationKinds = 6;
inline constexpr int kNumTargetClasses = 14;
inline constexpr int kNumObstacleClasses = 25;

struct ObstacleClassInfo {
  std::string_view name;
  int height;
  bool round;
};

struct TargetClassInfo {
  std::string_view name;
  int rows;
  int cols;
  int height;
  bool round;
};

inline constexpr std::array<std::string_view, kNumDestinationKinds> kDestinationNames = {
    "table", "shelf", "desk", "tray", "counter", "cart"};

inline constexpr std::array<TargetClassInfo, kNumTargetClasses> kTargetClasses = {{
    {"bottle", 2, 2, 4, true},  {"cup", 2, 2, 2, true},    {"can", 2, 2, 2, true},   {"bowl", 3, 3, 1, true},
    {"box", 3, 3, 2, false},    {"book", 2, 3, 1, false},  {"ball", 2, 2, 2, true},  {"vase", 2, 2, 4, true},
    {"mug", 2, 2, 2, true},     {"jar", 2, 2, 3, true},    {"apple", 2, 2, 1, true}, {"phone", 2, 3, 1, false},
    {"sponge", 2, 3, 1, false}, {"candle", 2, 2, 3, true},
}};

inline constexpr std::array<ObstacleClassInfo, kNumObstacleClasses> kObstacleClasses = {{
    {"toy_car", 1, false},    {"teddy_bear", 2, false}, {"lamp", 4, false},        {"clock", 2, false},
    {"plant", 3, false},      {"wine_glass", 3, false}, {"tin_can", 2, true},      {"tennis_ball", 1, true},
    {"orange", 1, true},      {"globe", 3, true},       {"pencil_case", 1, false}, {"tissue_box", 1, false},
    {"remote", 1, false},     {"flower_vase", 4, false}, {"candlestick", 3, false}, {"plate", 1, false},
    {"book_stack", 2, false}, {"kettle", 2, false},     {"paper_cup", 2, false},   {"rubber_duck", 1, false},
    {"baseball", 1, true},    {"soda_bottle", 4, false}, {"toy_block", 1, false},  {"speaker", 2, false},
    {"mouse", 1, false},
}};

inline constexpr int kTallHeight = 3;

// Axis-aligned cell rectangle: rows [row, row + rows), cols [col, col + cols).
struct CellRect {
  int row = 0;
  int col = 0;
  int rows = 1;
  int cols = 1;

  bool intersects(const CellRect& o) const {
    return row < o.row + o.rows && o.row < row + rows && col < o.col + o.cols && o.col < col + cols;
  }
  int overlap_area(const CellRect& o) const {
    const int r = std::min(row + rows, o.row + o.rows) - std::max(row, o.row);
    const int c = std::min(col + cols, o.col + o.cols) - std::max(col, o.col);
    return (r > 0 && c > 0) ? r * c : 0;
  }
  bool inside(int grid) const { return row >= 0 && col >= 0 && row + rows <= grid && col + cols <= grid; }
  bool operator==(const CellRect&) const = default;
};

struct Obstacle {
  int cls = 0;
  CellRect footprint;
  int height = 1;
  bool round = false;
  bool tall = false;
  bool near_edge = false;
  bool operator==(const Obstacle&) const = default;
};

struct Scene {
  int destination_kind = 0;
  std::vector<Obstacle> obstacles;
  int target = 0;
  int placement_row = 0;
  int placement_col = 0;
  std::uint64_t seed = 0;
  std::array<std::uint8_t, kGridSize * kGridSize> height_field{};
  bool operator==(const Scene&) const = default;
};

enum class Event { kNone, kFallsOver, kRolls, kFallsOff, kPushed };

inline constexpr std::array<std::string_view, 5> kEventNames = {"none", "falls_over", "rolls", "falls_off",
                                                                 "pushed"};

inline std::string_view event_name(Event e) { return kEventNames[static_cast<int>(e)]; }

inline Event event_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kEventNames.size(); ++i) {
    if (kEventNames[i] == name) return static_cast<Event>(i);
  }
  throw FormatError("unknown event name '" + std::string(name) + "'");
}

struct Outcome {
  bool collided = false;
  std::optional<int> collided_obstacle;
  Event event = Event::kNone;
  bool operator==(const Outcome&) const = default;
};

struct SceneConfig {
  int min_obstacles = 1;
  int max_obstacles = 5;
  int min_obstacle_side = 2;
  int max_obstacle_side = 4;
  int max_attempts = 200;  // rejection budget per obstacle
};

// Deterministic child seed for item `index` of a run seeded with `seed` (splitmix64).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Footprint of target class `target` centered on a cell.
inline CellRect target_footprint(int target, int row, int col) {
  const auto& info = kTargetClasses.at(target);
  return CellRect{row - (info.rows - 1) / 2, col - (info.cols - 1) / 2, info.rows, info.cols};
}

inline bool touches_edge(const CellRect& r, int grid = kGridSize) {
  return r.row == 0 || r.col == 0 || r.row + r.rows == grid || r.col + r.cols == grid;
}

inline Scene generate_scene(std::uint64_t seed, const SceneConfig& config = {}) {
  if (config.min_obstacles < 1 || config.max_obstacles < config.min_obstacles ||
      config.max_obstacles > kMaxObstacles) {
    throw ConfigError("obstacle count range must satisfy 1 <= min <= max <= " + std::to_string(kMaxObstacles));
  }
  if (config.min_obstacle_side < 1 || config.max_obstacle_side < config.min_obstacle_side ||
      config.max_obstacle_side > kGridSize) {
    throw ConfigError("invalid obstacle side range");
  }
  std::mt19937_64 rng(seed);
  Scene scene;
  scene.seed = seed;
  scene.destination_kind = uniform_int(rng, 0, kNumDestinationKinds - 1);
  scene.target = uniform_int(rng, 0, kNumTargetClasses - 1);
  const int count = uniform_int(rng, config.min_obstacles, config.max_obstacles);
  for (int i = 0; i < count; ++i) {
    Obstacle ob;
    ob.cls = uniform_int(rng, 0, kNumObstacleClasses - 1);
    const auto& info = kObstacleClasses[ob.cls];
    ob.height = info.height;
    ob.round = info.round;
    ob.tall = info.height >= kTallHeight;
    bool placed = false;
    for (int attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
      CellRect r;
      r.rows = uniform_int(rng, config.min_obstacle_side, config.max_obstacle_side);
      r.cols = uniform_int(rng, config.min_obstacle_side, config.max_obstacle_side);
      r.row = uniform_int(rng, 0, kGridSize - r.rows);
      r.col = uniform_int(rng, 0, kGridSize - r.cols);
      placed = std::none_of(scene.obstacles.begin(), scene.obstacles.end(),
                            [&](const Obstacle& o) { return o.footprint.intersects(r); });
      if (placed) ob.footprint = r;
    }
    if (!placed) {
      throw GenerationError("rejection budget of " + std::to_string(config.max_attempts) +
                            " exhausted placing obstacle " + std::to_string(i) + " (seed " + std::to_string(seed) +
                            ")");
    }
    ob.near_edge = touches_edge(ob.footprint);
    scene.obstacles.push_back(ob);
  }
  const auto& tinfo = kTargetClasses[scene.target];
  scene.placement_row = uniform_int(rng, (tinfo.rows - 1) / 2, kGridSize - 1 - tinfo.rows / 2);
  scene.placement_col = uniform_int(rng, (tinfo.cols - 1) / 2, kGridSize - 1 - tinfo.cols / 2);
  for (const auto& o : scene.obstacles) {
    for (int r = o.footprint.row; r < o.footprint.row + o.footprint.rows; ++r) {
      for (int c = o.footprint.col; c < o.footprint.col + o.footprint.cols; ++c) {
        scene.height_field[r * kGridSize + c] = static_cast<std::uint8_t>(o.height);
      }
    }
  }
  return scene;
}

// Rule-based outcome: the target footprint collides with the obstacle it
// overlaps most (lowest index on ties); the event follows the priority
// near_edge > round > tall > otherwise pushed.
inline Outcome simulate_placement(const Scene& scene) {
  const CellRect fp = target_footprint(scene.target, scene.placement_row, scene.placement_col);
  Outcome out;
  int best_area = 0;
  for (std::size_t i = 0; i < scene.obstacles.size(); ++i) {
    const int area = fp.overlap_area(scene.obstacles[i].footprint);
    if (area > best_area) {
      best_area = area;
      out.collided_obstacle = static_cast<int>(i);
    }
  }
  if (!out.collided_obstacle) return out;
  out.collided = true;
  const Obstacle& ob = scene.obstacles[*out.collided_obstacle];
  if (ob.near_edge) {
    out.event = Event::kFallsOff;
  } else if (ob.round) {
    out.event = Event::kRolls;
  } else if (ob.tall) {
    out.event = Event::kFallsOver;
  } else {
    out.event = Event::kPushed;
  }
  return out;
}

// Paraphrase templates keyed by event. Slots: {t} target, {o} obstacle, {d} destination.
using TemplateBank = std::map<Event, std::vector<std::string>>;

inline const TemplateBank& default_templates() {
  static const TemplateBank bank = {
      {Event::kNone,
       {"the robot places the {t} on the {d} safely and nothing on the {d} is disturbed",
        "the {t} is put on the {d} without touching any object on it",
        "the robot puts the {t} down on the {d} and the {t} stays in place",
        "the {t} is placed on an empty spot of the {d} and everything stays still"}},
      {Event::kFallsOver,
       {"the {t} hits the {o} on the {d} and the {o} falls over",
        "when the robot places the {t} on the {d} the {t} bumps into the {o} and the {o} falls over",
        "the {t} collides with the {o} so the {o} topples and falls over on the {d}",
        "the {o} on the {d} is hit by the {t} and falls over"}},
      {Event::kRolls,
       {"the {t} hits the {o} on the {d} and the {o} rolls away",
        "placing the {t} on the {d} pushes the {o} and the {o} rolls across the {d}",
        "the {t} bumps into the {o} and the {o} starts to roll on the {d}"}},
      {Event::kFallsOff,
       {"the {t} hits the {o} and the {o} falls off the edge of the {d}",
        "the robot places the {t} on the {d} and the {t} knocks the {o} off the {d}",
        "the {t} collides with the {o} near the edge so the {o} falls off the {d}"}},
      {Event::kPushed,
       {"the {t} hits the {o} and the {o} is pushed aside on the {d}",
        "the {t} collides with the {o} on the {d} and pushes the {o} a little",
        "when the {t} is placed on the {d} it bumps the {o} and the {o} slides"}},
  };
  return bank;
}

// Words that only appear in collision descriptions.
inline const std::vector<std::string>& collision_verbs() {
  static const std::vector<std::string> verbs = {"hits",   "hit",   "collides", "bumps",  "bump", "knocks",
                                                 "falls",  "fall",  "rolls",    "roll",   "pushed", "pushes",
                                                 "topples", "slides", "strikes"};
  return verbs;
}

inline std::string fill_template(const std::string& tmpl, std::string_view target, std::string_view obstacle,
                                 std::string_view destination) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.compare(i, 3, "{t}") == 0) {
      out += target;
      i += 3;
    } else if (tmpl.compare(i, 3, "{o}") == 0) {
      out += obstacle;
      i += 3;
    } else if (tmpl.compare(i, 3, "{d}") == 0) {
      out += destination;
      i += 3;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

struct CaptionSet {
  std::string train;
  std::vector<std::string> eval;
};

// All paraphrases of the outcome's family become references; the training
// caption is one of them chosen uniformly.
inline CaptionSet make_captions(const Scene& scene, const Outcome& outcome, std::mt19937_64& rng,
                                const TemplateBank& bank = default_templates()) {
  auto it = bank.find(outcome.event);
  if (it == bank.end() || it->second.empty()) {
    throw ConfigError("template bank has no paraphrases for event '" + std::string(event_name(outcome.event)) + "'");
  }
  const std::string_view target = kTargetClasses[scene.target].name;
  const std::string_view dest = kDestinationNames[scene.destination_kind];
  const std::string_view obstacle =
      outcome.collided_obstacle ? kObstacleClasses[scene.obstacles[*outcome.collided_obstacle].cls].name : "";
  CaptionSet set;
  for (const auto& tmpl : it->second) set.eval.push_back(fill_template(tmpl, target, obstacle, dest));
  set.train = set.eval[uniform_int(rng, 0, static_cast<int>(set.eval.size()) - 1)];
  return set;
}

inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace nnfc
