#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "capforge/model/config.hpp"
#include "capforge/numerics/adam.hpp"

namespace capforge {

/// Training hyperparameters plus model dimensions. Serialized as flat JSON.
struct TrainConfig {
  double lambda_recon = 1.0;
  std::size_t k_similar = 5;
  std::size_t max_epochs = 30;
  std::size_t max_steps = 0;  // 0 = no step cap
  std::size_t batch_size = 16;
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  std::size_t max_len = 16;
  std::size_t min_count = 1;
  std::size_t max_vocab = 0;
  ModelDims dims;

  AdamOptions adam() const { return {learning_rate, beta1, beta2, epsilon}; }

  /// Every problem found, not just the first.
  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    if (!(lambda_recon >= 0.0)) p.push_back("lambda_recon must be >= 0");
    if (max_epochs < 1) p.push_back("max_epochs must be >= 1");
    if (batch_size < 1) p.push_back("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) p.push_back("learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) p.push_back("beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) p.push_back("beta2 must be in [0, 1)");
    if (!(epsilon > 0.0)) p.push_back("epsilon must be > 0");
    if (max_len < 3) p.push_back("max_len must be >= 3");
    if (min_count < 1) p.push_back("min_count must be >= 1");
    if (dims.grid < 8 || dims.grid % 4 != 0) p.push_back("grid must be a multiple of 4 and >= 8");
    if (dims.conv1_channels < 1 || dims.conv2_channels < 1) p.push_back("conv channels must be >= 1");
    if (dims.feature_dim < 1) p.push_back("feature_dim must be >= 1");
    if (dims.embed_dim < 1 || dims.hidden_dim < 1) p.push_back("embed_dim and hidden_dim must be >= 1");
    return p;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid training config:";
    for (const auto& s : p) msg += "\n  - " + s;
    throw ConfigError(msg);
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lambda_recon", c.lambda_recon},
                     {"k_similar", c.k_similar},
                     {"max_epochs", c.max_epochs},
                     {"max_steps", c.max_steps},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon},
                     {"patience", c.patience},
                     {"seed", c.seed},
                     {"max_len", c.max_len},
                     {"min_count", c.min_count},
                     {"max_vocab", c.max_vocab},
                     {"grid", c.dims.grid},
                     {"conv1_channels", c.dims.conv1_channels},
                     {"conv2_channels", c.dims.conv2_channels},
                     {"feature_dim", c.dims.feature_dim},
                     {"embed_dim", c.dims.embed_dim},
                     {"hidden_dim", c.dims.hidden_dim},
                     {"cell", to_string(c.dims.cell)},
                     {"pooling", to_string(c.dims.pooling)}};
}

/// Reads the keys of `j` that belong to TrainConfig into `c`. Keys listed in
/// `extra_keys` are skipped; anything else unknown is reported. Type errors are
/// collected too, so a bad file yields one complete list.
inline std::vector<std::string> read_train_config(const nlohmann::json& j, TrainConfig& c,
                                                  const std::set<std::string>& extra_keys = {}) {
  std::vector<std::string> errors;
  if (!j.is_object()) return {"config must be a JSON object"};
  auto take = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const nlohmann::json::exception&) {
      errors.push_back(std::string("key '") + key + "' has the wrong type");
    }
  };
  auto take_size = [&](const char* key, std::size_t& dst) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
      errors.push_back(std::string("key '") + key + "' must be a non-negative integer");
    else
      dst = v.get<std::size_t>();
  };
  static const std::set<std::string> known{
      "lambda_recon", "k_similar", "max_epochs", "max_steps",      "batch_size",     "learning_rate",
      "beta1",        "beta2",     "epsilon",    "patience",       "seed",           "max_len",
      "min_count",    "max_vocab", "grid",       "conv1_channels", "conv2_channels", "feature_dim",
      "embed_dim",    "hidden_dim", "cell",      "pooling"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()) && !extra_keys.count(it.key())) errors.push_back("unknown key '" + it.key() + "'");
  take("lambda_recon", c.lambda_recon);
  take_size("k_similar", c.k_similar);
  take_size("max_epochs", c.max_epochs);
  take_size("max_steps", c.max_steps);
  take_size("batch_size", c.batch_size);
  take("learning_rate", c.learning_rate);
  take("beta1", c.beta1);
  take("beta2", c.beta2);
  take("epsilon", c.epsilon);
  take_size("patience", c.patience);
  take("seed", c.seed);
  take_size("max_len", c.max_len);
  take_size("min_count", c.min_count);
  take_size("max_vocab", c.max_vocab);
  take_size("grid", c.dims.grid);
  take_size("conv1_channels", c.dims.conv1_channels);
  take_size("conv2_channels", c.dims.conv2_channels);
  take_size("feature_dim", c.dims.feature_dim);
  take_size("embed_dim", c.dims.embed_dim);
  take_size("hidden_dim", c.dims.hidden_dim);
  if (j.contains("cell")) {
    try {
      c.dims.cell = parse_cell_kind(j.at("cell").get<std::string>());
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  if (j.contains("pooling")) {
    try {
      c.dims.pooling = parse_pooling(j.at("pooling").get<std::string>());
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  return errors;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto errors = read_train_config(j, c);
  for (auto& p : c.problems()) errors.push_back(std::move(p));
  if (!errors.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& s : errors) msg += "\n  - " + s;
    throw ConfigError(msg);
  }
  return c;
}

}  // namespace capforge
