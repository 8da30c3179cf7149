#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "capforge/data/corpus.hpp"
#include "capforge/numerics/errors.hpp"

namespace capforge {

// One JSON object per line:
//   {"id": str, "image": [[[r,g,b],...],...], "captions": [str,...],
//    "attributes": [0|1,...], "objects": [{"color","shape","row","col"},...]}
// "objects" is optional. Doubles are written in shortest round-trip form.

inline nlohmann::json sample_to_json(const SceneSample& s) {
  nlohmann::json j;
  j["id"] = s.id;
  const std::size_t h = s.image.dim(0), w = s.image.dim(1), c = s.image.dim(2);
  nlohmann::json img = nlohmann::json::array();
  for (std::size_t y = 0; y < h; ++y) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t x = 0; x < w; ++x) {
      nlohmann::json px = nlohmann::json::array();
      for (std::size_t ch = 0; ch < c; ++ch) px.push_back(s.image[(y * w + x) * c + ch]);
      row.push_back(std::move(px));
    }
    img.push_back(std::move(row));
  }
  j["image"] = std::move(img);
  j["captions"] = s.captions;
  nlohmann::json attrs = nlohmann::json::array();
  for (double a : s.attribute_labels) attrs.push_back(static_cast<int>(a));
  j["attributes"] = std::move(attrs);
  if (!s.objects.empty()) {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : s.objects)
      objs.push_back({{"color", o.color}, {"shape", o.shape}, {"row", o.row}, {"col", o.col}});
    j["objects"] = std::move(objs);
  }
  return j;
}

inline SceneSample sample_from_json(const nlohmann::json& j) {
  SceneSample s;
  s.id = j.at("id").get<std::string>();
  const auto& img = j.at("image");
  if (!img.is_array() || img.empty() || !img[0].is_array() || img[0].empty() || !img[0][0].is_array())
    throw DataError("image must be a non-empty H x W x C nested array");
  const std::size_t h = img.size(), w = img[0].size(), c = img[0][0].size();
  if (c == 0) throw DataError("image has zero channels");
  std::vector<double> px;
  px.reserve(h * w * c);
  for (const auto& row : img) {
    if (row.size() != w) throw DataError("ragged image rows");
    for (const auto& p : row) {
      if (p.size() != c) throw DataError("ragged image pixels");
      for (const auto& v : p) px.push_back(v.get<double>());
    }
  }
  s.image = Tensor({h, w, c}, std::move(px));
  s.captions = j.at("captions").get<std::vector<std::string>>();
  if (s.captions.empty()) throw DataError("sample '" + s.id + "' has no captions");
  for (const auto& a : j.at("attributes")) {
    const double v = a.get<double>();
    if (v != 0.0 && v != 1.0) throw DataError("attribute labels must be 0 or 1");
    s.attribute_labels.push_back(v);
  }
  if (j.contains("objects"))
    for (const auto& o : j["objects"])
      s.objects.push_back({o.at("color").get<std::string>(), o.at("shape").get<std::string>(),
                           o.at("row").get<int>(), o.at("col").get<int>()});
  return s;
}

inline void save_dataset(const std::vector<SceneSample>& samples, std::ostream& os) {
  for (const auto& s : samples) os << sample_to_json(s).dump() << '\n';
}

inline void save_dataset(const std::vector<SceneSample>& samples, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  save_dataset(samples, os);
  if (!os) throw DataError("write to '" + path + "' failed");
}

/// Blank lines are skipped; any malformed record fails with its line number.
inline std::vector<SceneSample> load_dataset(std::istream& is) {
  std::vector<SceneSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const DataError& e) {
      throw DataError(e.what(), lineno);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed record: ") + e.what(), lineno);
    } catch (const ContractViolation& e) {
      throw DataError(std::string("malformed record: ") + e.what(), lineno);
    }
  }
  return out;
}

inline std::vector<SceneSample> load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset '" + path + "'");
  return load_dataset(is);
}

}  // namespace capforge
