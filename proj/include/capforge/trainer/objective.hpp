#pragma once

#include <algorithm>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "capforge/data/corpus.hpp"
#include "capforge/data/feature_index.hpp"
#include "capforge/model/caption_model.hpp"
#include "capforge/trainer/config.hpp"
#include "capforge/util/parallel.hpp"

namespace capforge {

/// One training example: an image and one of its reference captions.
struct TrainingPair {
  const SceneSample* sample = nullptr;
  TokenSequence tokens;
};

inline std::vector<TrainingPair> make_pairs(std::span<const SceneSample> samples, const Vocabulary& vocab,
                                            std::size_t max_len) {
  std::vector<TrainingPair> out;
  for (const auto& s : samples)
    for (const auto& c : s.captions) out.push_back({&s, vocab.encode(c, max_len)});
  return out;
}

/// Snapshot of encoder features and each sample's k most similar training
/// images. Neighbor targets come from here and are constants with respect to
/// the parameters being optimized.
class NeighborCache {
 public:
  static NeighborCache build(const CaptionModel& m, std::span<const SceneSample> train, std::size_t k_similar,
                             std::span<const SceneSample> extra = {}) {
    NeighborCache c;
    c.k_ = k_similar;
    c.index_ = FeatureIndex(m.dims.feature_dim);
    std::vector<std::vector<double>> feats(train.size() + extra.size());
    parallel_for(feats.size(), [&](std::size_t i) {
      const SceneSample& s = i < train.size() ? train[i] : extra[i - train.size()];
      feats[i] = encode_image(m.encoder, s.image);
    });
    for (std::size_t i = 0; i < train.size(); ++i) c.index_.add(train[i].id, feats[i]);
    for (std::size_t i = 0; i < feats.size(); ++i) {
      const SceneSample& s = i < train.size() ? train[i] : extra[i - train.size()];
      c.features_[s.id] = std::move(feats[i]);
    }
    for (std::size_t i = 0; i < feats.size(); ++i) {
      const SceneSample& s = i < train.size() ? train[i] : extra[i - train.size()];
      const auto& f = c.features_.at(s.id);
      const bool zero = std::all_of(f.begin(), f.end(), [](double v) { return v == 0.0; });
      c.neighbors_[s.id] = (k_similar == 0 || zero) ? std::vector<std::string>{} : c.index_.nearest(f, k_similar, s.id);
    }
    return c;
  }

  std::size_t k_similar() const noexcept { return k_; }
  const FeatureIndex& index() const noexcept { return index_; }
  bool contains(const std::string& id) const { return features_.count(id) > 0; }
  const std::vector<double>& feature(const std::string& id) const { return features_.at(id); }
  const std::vector<std::string>& neighbors(const std::string& id) const { return neighbors_.at(id); }

  /// Cached features of the sample's neighbors (not the sample itself).
  std::vector<const std::vector<double>*> neighbor_features(const std::string& id) const {
    auto it = neighbors_.find(id);
    if (it == neighbors_.end()) throw ContractViolation("neighbor cache has no entry for sample '" + id + "'");
    std::vector<const std::vector<double>*> out;
    for (const auto& n : it->second) out.push_back(&features_.at(n));
    return out;
  }

 private:
  std::size_t k_ = 0;
  FeatureIndex index_;
  std::unordered_map<std::string, std::vector<double>> features_;
  std::unordered_map<std::string, std::vector<std::string>> neighbors_;
};

/// Batch means of the objective and its parts. The objective is maximized:
///   total = log_likelihood + lambda * reconstruction - attribute_loss
struct ObjectiveParts {
  double total = 0.0;
  double log_likelihood = 0.0;
  double reconstruction = 0.0;  // mean R; 0 when lambda == 0 (not evaluated)
  double attribute_loss = 0.0;
  std::size_t word_steps = 0;   // summed over the batch
  bool reconstruction_evaluated = false;
};

namespace objective_detail {

struct SampleTape {
  Tape tape;
  Var total;
  double log_likelihood = 0.0, reconstruction = 0.0, attribute_loss = 0.0, value = 0.0;
  std::size_t steps = 0;
};

inline void forward(SampleTape& st, const CaptionModel& m, const TrainingPair& pair, double lambda,
                    const NeighborCache* cache, bool track) {
  Tape& t = st.tape;
  Var f = encode_image(t, m.encoder, pair.sample->image, track);
  Var a = predict_attributes(t, m.encoder, f, track);
  TracedDecode dec = decode_teacher_forced(t, m.decoder, f, a, pair.tokens.ids, track);
  Var attr = ops::binary_cross_entropy(t, a, pair.sample->attribute_labels);
  // total = LL - attr (+ lambda R)
  Var total = ops::sub(t, dec.log_likelihood, attr);
  st.log_likelihood = t.value(dec.log_likelihood).item();
  st.attribute_loss = t.value(attr).item();
  st.steps = dec.trace.size();
  if (lambda > 0.0) {
    // Own image: the live feature. Neighbors: the epoch snapshot.
    std::vector<Var> targets{f};
    if (cache)
      for (const auto* tg : cache->neighbor_features(pair.sample->id)) targets.push_back(t.constant(Tensor::vector(*tg)));
    Var pooled = pool_hidden(t, m.reconstructor.pooling, dec.trace);
    Var rec = reconstruct_feature(t, m.reconstructor, pooled, track);
    Var r = reconstruction_score(t, rec, targets);
    st.reconstruction = t.value(r).item();
    total = ops::add(t, total, ops::affine(t, r, lambda));
  }
  st.total = total;
  st.value = t.value(total).item();
}

inline void check_cache(std::span<const TrainingPair> batch, const TrainConfig& cfg, const NeighborCache* cache) {
  require(!batch.empty(), "objective over an empty batch");
  if (cfg.lambda_recon > 0.0 && cfg.k_similar > 0 && !cache)
    throw ContractViolation("objective: k_similar > 0 needs a populated neighbor cache");
}

inline ObjectiveParts reduce(const std::vector<SampleTape>& tapes, bool evaluated) {
  ObjectiveParts o;
  for (const auto& st : tapes) {
    o.total += st.value;
    o.log_likelihood += st.log_likelihood;
    o.reconstruction += st.reconstruction;
    o.attribute_loss += st.attribute_loss;
    o.word_steps += st.steps;
  }
  const double n = static_cast<double>(tapes.size());
  o.total /= n;
  o.log_likelihood /= n;
  o.reconstruction /= n;
  o.attribute_loss /= n;
  o.reconstruction_evaluated = evaluated;
  return o;
}

}  // namespace objective_detail

/// Batch-mean joint objective, no gradients. With lambda == 0 the
/// reconstructor is never run. Without a cache (allowed only when
/// k_similar == 0) the only target is the image's own feature.
inline ObjectiveParts compute_objective(const CaptionModel& m, std::span<const TrainingPair> batch,
                                        const TrainConfig& cfg, const NeighborCache* cache) {
  objective_detail::check_cache(batch, cfg, cache);
  std::vector<objective_detail::SampleTape> tapes(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    objective_detail::forward(tapes[i], m, batch[i], cfg.lambda_recon, cache, false);
  });
  return objective_detail::reduce(tapes, cfg.lambda_recon > 0.0);
}

/// Same value as compute_objective; also overwrites every parameter's grad
/// with d(-objective)/d(param), the loss the optimizer minimizes. Per-sample
/// tapes may run in parallel; gradients are summed in batch order.
inline ObjectiveParts objective_and_gradient(CaptionModel& m, std::span<const TrainingPair> batch,
                                             const TrainConfig& cfg, const NeighborCache* cache) {
  objective_detail::check_cache(batch, cfg, cache);
  auto params = m.parameters();
  for (Parameter* p : params) p->zero_grad();
  std::vector<objective_detail::SampleTape> tapes(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    objective_detail::forward(tapes[i], m, batch[i], cfg.lambda_recon, cache, true);
    tapes[i].tape.backward(tapes[i].total);
  });
  const double scale = -1.0 / static_cast<double>(batch.size());
  for (const auto& st : tapes) st.tape.accumulate_param_grads(params, scale);
  return objective_detail::reduce(tapes, cfg.lambda_recon > 0.0);
}

/// -sum(log-likelihood) / sum(word steps) over the pairs.
inline double per_token_nll(const CaptionModel& m, std::span<const TrainingPair> pairs) {
  std::vector<double> ll(pairs.size());
  std::vector<std::size_t> steps(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const EncodedImage enc = m.encode(pairs[i].sample->image);
    ll[i] = decode_teacher_forced(m.decoder, enc, pairs[i].tokens).log_likelihood;
    steps[i] = pairs[i].tokens.word_steps();
  });
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    total -= ll[i];
    n += steps[i];
  }
  return total / static_cast<double>(n);
}

}  // namespace capforge
