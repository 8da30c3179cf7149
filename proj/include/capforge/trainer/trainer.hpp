#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "capforge/numerics/adam.hpp"
#include "capforge/trainer/objective.hpp"

namespace capforge {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t steps = 0;  // optimizer steps taken in this epoch
  double train_objective = 0.0;
  double train_log_likelihood = 0.0;
  double train_reconstruction = 0.0;
  double train_attribute_loss = 0.0;
  double val_objective = 0.0;
  double val_token_nll = 0.0;
  bool improved = false;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_objectives;  // batch objective at every optimizer step
  std::size_t best_epoch = 0;
  std::size_t total_steps = 0;
  std::string stop_reason;  // "max_epochs", "max_steps" or "early_stop"
  bool reconstruction_enabled = true;

  /// Timing fields are dropped when include_timing is false so two runs can be
  /// compared byte for byte.
  nlohmann::json to_json(bool include_timing = true) const {
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : epochs) {
      nlohmann::json r{{"epoch", e.epoch},
                       {"steps", e.steps},
                       {"train_objective", e.train_objective},
                       {"train_log_likelihood", e.train_log_likelihood},
                       {"train_attribute_loss", e.train_attribute_loss},
                       {"val_objective", e.val_objective},
                       {"val_token_nll", e.val_token_nll},
                       {"improved", e.improved}};
      if (reconstruction_enabled) r["train_reconstruction"] = e.train_reconstruction;
      if (include_timing) r["seconds"] = e.seconds;
      ep.push_back(std::move(r));
    }
    return {{"epochs", ep},
            {"step_objectives", step_objectives},
            {"best_epoch", best_epoch},
            {"total_steps", total_steps},
            {"stop_reason", stop_reason},
            {"reconstruction_enabled", reconstruction_enabled}};
  }
};

struct TrainResult {
  CaptionModel model;  // weights from the best validation epoch
  TrainLog log;
};

/// Vocabulary over every caption in the training set.
inline Vocabulary build_vocabulary(std::span<const SceneSample> train, const TrainConfig& cfg) {
  std::vector<std::string> caps;
  for (const auto& s : train)
    for (const auto& c : s.captions) caps.push_back(c);
  return Vocabulary::build(caps, cfg.min_count, cfg.max_vocab);
}

/// Fresh model sized by cfg.dims with a vocabulary built from `train`.
inline CaptionModel init_model(std::span<const SceneSample> train, const TrainConfig& cfg) {
  ModelDims d = cfg.dims;
  if (!train.empty()) d.attribute_dim = train.front().attribute_labels.size();
  return CaptionModel::create(d, build_vocabulary(train, cfg), cfg.seed);
}

/// Called after each epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Adam on the negated objective with seeded shuffling, a neighbor-cache
/// refresh each epoch, and early stopping on the validation objective.
inline TrainResult train(CaptionModel m, std::span<const SceneSample> train_set, std::span<const SceneSample> val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw ContractViolation("train: empty training set");
  if (val_set.empty()) throw ContractViolation("train: empty validation set");
  for (const auto* set : {&train_set, &val_set})
    for (const auto& s : *set) {
      if (s.attribute_labels.size() != m.dims.attribute_dim)
        throw ContractViolation("train: sample '" + s.id + "' has " + std::to_string(s.attribute_labels.size()) +
                                " attribute labels, model expects " + std::to_string(m.dims.attribute_dim));
    }

  const auto train_pairs = make_pairs(train_set, m.vocab, cfg.max_len);
  const auto val_pairs = make_pairs(val_set, m.vocab, cfg.max_len);
  if (train_pairs.empty() || val_pairs.empty()) throw ContractViolation("train: samples carry no captions");

  const bool use_cache = cfg.lambda_recon > 0.0 && cfg.k_similar > 0;
  Adam opt(cfg.adam());
  Rng shuffle_rng(Rng::mix(cfg.seed) ^ 0x7a11ULL);
  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult out{m, {}};
  out.log.reconstruction_enabled = cfg.lambda_recon > 0.0;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t failures = 0;
  std::size_t step = 0;
  std::vector<TrainingPair> batch;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    NeighborCache cache;
    if (use_cache) cache = NeighborCache::build(m, train_set, cfg.k_similar, val_set);
    const NeighborCache* cp = use_cache ? &cache : nullptr;

    shuffle_rng.shuffle(order.begin(), order.end());
    double sum_obj = 0, sum_ll = 0, sum_r = 0, sum_attr = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      if (cfg.max_steps && step >= cfg.max_steps) break;
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) batch.push_back(train_pairs[order[i]]);
      ObjectiveParts parts;
      try {
        parts = objective_and_gradient(m, batch, cfg, cp);
      } catch (const NumericFault& e) {
        throw NumericFault(e.op(), "training diverged at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(step + 1) + ": " + e.what());
      }
      if (!std::isfinite(parts.total))
        throw NumericFault("objective", "training diverged at epoch " + std::to_string(epoch) + ", step " +
                                            std::to_string(step + 1) + ": non-finite objective");
      for (Parameter* p : m.parameters()) opt.step(*p);
      ++step;
      ++rec.steps;
      out.log.step_objectives.push_back(parts.total);
      sum_obj += parts.total;
      sum_ll += parts.log_likelihood;
      sum_r += parts.reconstruction;
      sum_attr += parts.attribute_loss;
    }
    if (rec.steps == 0) break;  // step cap reached at an epoch boundary
    const double n = static_cast<double>(rec.steps);
    rec.train_objective = sum_obj / n;
    rec.train_log_likelihood = sum_ll / n;
    rec.train_reconstruction = sum_r / n;
    rec.train_attribute_loss = sum_attr / n;

    // Validation uses the cache from the start of the epoch, like training did.
    rec.val_objective = compute_objective(m, val_pairs, cfg, cp).total;
    rec.val_token_nll = per_token_nll(m, val_pairs);
    if (!std::isfinite(rec.val_objective))
      throw NumericFault("objective", "validation objective is non-finite after epoch " + std::to_string(epoch));
    rec.improved = rec.val_objective > best;
    if (rec.improved) {
      best = rec.val_objective;
      failures = 0;
      out.model = m;
      out.log.best_epoch = epoch;
    } else {
      ++failures;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.log.epochs.push_back(rec);
    out.log.total_steps = step;

    if (on_epoch && !on_epoch(rec)) {
      out.log.stop_reason = "callback";
      return out;
    }
    if (!rec.improved && failures >= std::max<std::size_t>(1, cfg.patience)) {
      out.log.stop_reason = "early_stop";
      return out;
    }
    if (cfg.max_steps && step >= cfg.max_steps) {
      out.log.stop_reason = "max_steps";
      return out;
    }
  }
  out.log.stop_reason = cfg.max_steps && step >= cfg.max_steps ? "max_steps" : "max_epochs";
  return out;
}

}  // namespace capforge
