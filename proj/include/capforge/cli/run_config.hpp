#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "capforge/trainer/config.hpp"

namespace capforge {

/// Training config plus the paths a `train` run needs. Flat JSON; unknown
/// keys are rejected.
struct RunConfig {
  TrainConfig train;
  std::string dataset;
  std::string val_dataset;   // empty: hold out `val_split` of `dataset`
  double val_split = 0.125;  // fraction of `dataset` held out from its tail
  std::string checkpoint;
  std::string log;  // empty: <checkpoint>.log.json

  std::string log_path() const { return log.empty() ? checkpoint + ".log.json" : log; }
};

inline nlohmann::json run_config_to_json(const RunConfig& rc) {
  nlohmann::json j = rc.train;
  j["dataset"] = rc.dataset;
  if (!rc.val_dataset.empty()) j["val_dataset"] = rc.val_dataset;
  j["val_split"] = rc.val_split;
  j["checkpoint"] = rc.checkpoint;
  if (!rc.log.empty()) j["log"] = rc.log;
  return j;
}

/// Parses and validates; every problem is reported in one ConfigError.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> path_keys{"dataset", "val_dataset", "val_split", "checkpoint", "log"};
  RunConfig rc;
  std::vector<std::string> errors = read_train_config(j, rc.train, path_keys);
  if (j.is_object()) {
    auto str = [&](const char* key, std::string& dst, bool required) {
      if (!j.contains(key)) {
        if (required) errors.push_back(std::string("missing required key '") + key + "'");
        return;
      }
      if (!j.at(key).is_string() || j.at(key).get<std::string>().empty())
        errors.push_back(std::string("key '") + key + "' must be a non-empty string");
      else
        dst = j.at(key).get<std::string>();
    };
    str("dataset", rc.dataset, true);
    str("val_dataset", rc.val_dataset, false);
    str("checkpoint", rc.checkpoint, true);
    str("log", rc.log, false);
    if (j.contains("val_split")) {
      if (!j.at("val_split").is_number())
        errors.push_back("key 'val_split' must be a number");
      else
        rc.val_split = j.at("val_split").get<double>();
    }
  }
  if (!(rc.val_split > 0.0 && rc.val_split < 1.0)) errors.push_back("val_split must be in (0, 1)");
  for (auto& p : rc.train.problems()) errors.push_back(std::move(p));
  if (!errors.empty()) {
    std::string msg = "invalid run config:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace capforge
