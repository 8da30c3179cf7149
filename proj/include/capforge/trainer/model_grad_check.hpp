#pragma once

#include <vector>

#include "capforge/numerics/grad_check.hpp"
#include "capforge/trainer/trainer.hpp"

namespace capforge {

/// Small enough that every element of every tensor can be checked quickly.
inline ModelDims tiny_dims() {
  ModelDims d;
  d.grid = 8;
  d.conv1_channels = 2;
  d.conv2_channels = 3;
  d.feature_dim = 6;
  d.embed_dim = 4;
  d.hidden_dim = 5;
  return d;
}

struct ModelGradCheckOptions {
  ModelDims dims = tiny_dims();
  std::uint64_t seed = 3;
  std::size_t batch = 4;
  double lambda_recon = 1.0;
  std::size_t k_similar = 2;
  GradCheckOptions check;
};

/// Finite-difference check of d(-objective)/d(theta) for every parameter
/// tensor of a freshly initialized model on a small synthetic batch.
inline GradCheckReport model_grad_check(const ModelGradCheckOptions& o) {
  CorpusOptions co;
  co.grid = static_cast<int>(o.dims.grid);
  co.max_captions = 1;
  const auto samples = generate_synthetic_corpus(o.seed, o.batch, co);
  TrainConfig cfg;
  cfg.dims = o.dims;
  cfg.seed = o.seed;
  cfg.lambda_recon = o.lambda_recon;
  cfg.k_similar = o.k_similar;
  CaptionModel m = init_model(samples, cfg);
  const auto pairs = make_pairs(samples, m.vocab, cfg.max_len);
  // Neighbor targets come from a snapshot at the unperturbed weights, as in
  // training, so finite differences see them as the constants they are.
  const bool use_cache = cfg.lambda_recon > 0.0 && cfg.k_similar > 0;
  NeighborCache cache;
  if (use_cache) cache = NeighborCache::build(m, samples, cfg.k_similar);
  const NeighborCache* cp = use_cache ? &cache : nullptr;
  ScalarObjective f = [&](bool with_grad) {
    if (with_grad) return -objective_and_gradient(m, pairs, cfg, cp).total;
    return -compute_objective(m, pairs, cfg, cp).total;
  };
  return grad_check(f, m.parameters(), o.check);
}

}  // namespace capforge
