#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "capforge/numerics/errors.hpp"
#include "capforge/numerics/tensor.hpp"
#include "capforge/util/rng.hpp"

namespace capforge {

/// One shape drawn in a scene; `row`/`col` index the 3x3 layout cells.
struct SceneObject {
  std::string color;
  std::string shape;
  int row = 0;
  int col = 0;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct SceneSample {
  std::string id;
  Tensor image;                          // [H x W x 3], values in [0, 1]
  std::vector<std::string> captions;     // at least one
  std::vector<double> attribute_labels;  // palette words then shape words, 0/1
  std::vector<SceneObject> objects;      // generator ground truth (may be empty)
  friend bool operator==(const SceneSample&, const SceneSample&) = default;
};

struct CorpusOptions {
  int grid = 16;
  std::vector<std::string> palette{"red", "green", "blue", "yellow"};
  std::vector<std::string> shapes{"square", "circle", "triangle", "cross"};
  int max_captions = 2;  // 1 keeps only the canonical description
  int max_objects = 3;
};

inline constexpr int kLayoutCells = 3;

namespace corpus_detail {

inline std::array<double, 3> color_rgb(const std::string& name) {
  struct Entry {
    const char* name;
    std::array<double, 3> rgb;
  };
  static const Entry table[] = {
      {"red", {0.9, 0.1, 0.1}},    {"green", {0.1, 0.8, 0.2}},   {"blue", {0.15, 0.2, 0.9}},
      {"yellow", {0.95, 0.9, 0.1}}, {"white", {0.95, 0.95, 0.95}}, {"orange", {0.95, 0.55, 0.1}},
      {"purple", {0.55, 0.15, 0.7}}, {"cyan", {0.1, 0.85, 0.9}},   {"magenta", {0.9, 0.1, 0.8}},
      {"gray", {0.5, 0.5, 0.5}},
  };
  for (const auto& e : table)
    if (name == e.name) return e.rgb;
  throw DataError("unknown palette color '" + name + "'");
}

/// Whether pixel (y, x) of an s x s box belongs to the named shape.
inline bool shape_covers(const std::string& shape, int s, int y, int x) {
  const double c = (s - 1) / 2.0;
  const double dx = x - c, dy = y - c;
  if (shape == "square") return true;
  if (shape == "circle") return dx * dx + dy * dy <= (s / 2.0) * (s / 2.0);
  if (shape == "triangle") return std::abs(dx) <= (y + 1) * (s / 2.0) / s;
  if (shape == "cross") {
    const double half = std::max(0.5, s / 6.0);
    return std::abs(dx) <= half || std::abs(dy) <= half;
  }
  if (shape == "diamond") return std::abs(dx) + std::abs(dy) <= s / 2.0;
  throw DataError("unknown shape '" + shape + "'");
}

/// Spatial relation phrase for `a` relative to `b`.
inline std::string relation(const SceneObject& a, const SceneObject& b) {
  const int dx = b.col - a.col, dy = b.row - a.row;
  if (dx != 0 && std::abs(dx) >= std::abs(dy)) return dx > 0 ? "left of" : "right of";
  return dy > 0 ? "above" : "below";
}

inline std::string phrase(const SceneObject& o) { return "a " + o.color + " " + o.shape; }

}  // namespace corpus_detail

/// Captions for a reading-order sorted object list. The first is canonical;
/// with two or more objects the second swaps the first pair.
inline std::vector<std::string> describe_scene(const std::vector<SceneObject>& objs, int max_captions) {
  using namespace corpus_detail;
  std::vector<std::string> caps;
  if (objs.size() == 1) {
    caps.push_back(phrase(objs[0]));
    return caps;
  }
  std::string tail;
  for (std::size_t i = 2; i < objs.size(); ++i) tail += " and " + phrase(objs[i]);
  caps.push_back(phrase(objs[0]) + " " + relation(objs[0], objs[1]) + " " + phrase(objs[1]) + tail);
  if (max_captions >= 2)
    caps.push_back(phrase(objs[1]) + " " + relation(objs[1], objs[0]) + " " + phrase(objs[0]) + tail);
  return caps;
}

/// Renders one scene. Per-sample randomness derives from (seed, index), so a
/// longer corpus with the same seed extends a shorter one.
inline SceneSample generate_scene(std::uint64_t seed, std::size_t index, const CorpusOptions& o) {
  using namespace corpus_detail;
  Rng rng(Rng::mix(seed) ^ Rng::mix(0x5ce7e + index));
  const int g = o.grid;
  const int cell = g / kLayoutCells;
  const int margin = (g - cell * kLayoutCells) / 2;
  // Odd boxes keep shapes symmetric; in a 4x4 box circle and cross cover the same pixels.
  const int box = cell < 5 || cell % 2 == 1 ? cell : cell - 1;

  SceneSample s;
  char buf[64];
  std::snprintf(buf, sizeof buf, "s%llu-%06zu", static_cast<unsigned long long>(seed), index);
  s.id = buf;
  s.image = Tensor({static_cast<std::size_t>(g), static_cast<std::size_t>(g), 3});
  for (double& v : s.image.storage()) v = rng.uniform(0.0, 0.1);

  const int n_obj = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(o.max_objects)));
  std::vector<int> cells(kLayoutCells * kLayoutCells);
  for (int i = 0; i < static_cast<int>(cells.size()); ++i) cells[i] = i;
  rng.shuffle(cells.begin(), cells.end());
  cells.resize(n_obj);
  std::sort(cells.begin(), cells.end());  // reading order
  for (int c : cells) {
    SceneObject obj;
    obj.row = c / kLayoutCells;
    obj.col = c % kLayoutCells;
    obj.color = o.palette[rng.below(o.palette.size())];
    obj.shape = o.shapes[rng.below(o.shapes.size())];
    const auto rgb = color_rgb(obj.color);
    const int y0 = margin + obj.row * cell, x0 = margin + obj.col * cell;
    for (int y = 0; y < box; ++y)
      for (int x = 0; x < box; ++x) {
        if (!shape_covers(obj.shape, box, y, x)) continue;
        for (int ch = 0; ch < 3; ++ch) {
          const double v = rgb[ch] + rng.uniform(-0.05, 0.05);
          s.image[(static_cast<std::size_t>(y0 + y) * g + (x0 + x)) * 3 + ch] = std::clamp(v, 0.0, 1.0);
        }
      }
    s.objects.push_back(obj);
  }
  s.captions = describe_scene(s.objects, o.max_captions);
  for (const auto& c : o.palette)
    s.attribute_labels.push_back(
        std::any_of(s.objects.begin(), s.objects.end(), [&](const SceneObject& x) { return x.color == c; }) ? 1.0
                                                                                                              : 0.0);
  for (const auto& sh : o.shapes)
    s.attribute_labels.push_back(
        std::any_of(s.objects.begin(), s.objects.end(), [&](const SceneObject& x) { return x.shape == sh; }) ? 1.0
                                                                                                              : 0.0);
  return s;
}

inline std::vector<SceneSample> generate_synthetic_corpus(std::uint64_t seed, std::size_t n,
                                                          const CorpusOptions& o = {}) {
  if (n < 1) throw DataError("n must be >= 1");
  if (o.grid < 8) throw DataError("grid must be >= 8");
  if (o.palette.empty() || o.shapes.empty()) throw DataError("palette and shape lists must be non-empty");
  if (o.max_objects < 1 || o.max_objects > kLayoutCells * kLayoutCells)
    throw DataError("max_objects must be in [1, 9]");
  if (o.max_captions < 1) throw DataError("max_captions must be >= 1");
  for (const auto& c : o.palette) corpus_detail::color_rgb(c);
  for (const auto& sh : o.shapes) corpus_detail::shape_covers(sh, 3, 0, 0);
  std::vector<SceneSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_scene(seed, i, o));
  return out;
}

}  // namespace capforge
