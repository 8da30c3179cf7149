#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "capforge/model/config.hpp"
#include "capforge/numerics/ops.hpp"
#include "capforge/util/rng.hpp"

namespace capforge {

/// Semantic reconstructor: pools the decoder's hidden trace into h_c and maps
/// it affinely back to image-feature space (I_r).
struct ReconstructorParams {
  PoolingTag pooling = PoolingTag::mean;
  Parameter weight;  // [D_v x d_h]
  Parameter bias;    // [D_v]

  static ReconstructorParams init(const ModelDims& d, Rng& rng) {
    ReconstructorParams p;
    p.pooling = d.pooling;
    Tensor w({d.feature_dim, d.hidden_dim});
    const double sd = 1.0 / std::sqrt(static_cast<double>(d.hidden_dim));
    for (double& v : w.storage()) v = sd * rng.normal();
    p.weight = {"reconstructor.weight", std::move(w)};
    p.bias = {"reconstructor.bias", Tensor({d.feature_dim})};
    return p;
  }

  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
  std::size_t feature_dim() const { return bias.value.size(); }
  std::size_t hidden_dim() const { return weight.value.dim(1); }
};

struct ReconstructionResult {
  std::vector<double> pooled;         // h_c
  std::vector<double> reconstructed;  // I_r
  double score = 0.0;                 // R <= 0
};

// ---------------------------------------------------------------------------
// Plain forms.

/// mean: elementwise average; max: elementwise maximum; last: final state.
inline std::vector<double> pool_hidden(PoolingTag tag, const std::vector<std::vector<double>>& trace) {
  if (trace.empty()) throw ContractViolation("pool_hidden: empty trace");
  const std::size_t d = trace[0].size();
  for (const auto& h : trace) require(h.size() == d, "pool_hidden: ragged trace");
  switch (tag) {
    case PoolingTag::last: return trace.back();
    case PoolingTag::max: {
      std::vector<double> out = trace[0];
      for (const auto& h : trace)
        for (std::size_t i = 0; i < d; ++i) out[i] = std::max(out[i], h[i]);
      return out;
    }
    case PoolingTag::mean: {
      std::vector<double> out(d, 0.0);
      for (const auto& h : trace)
        for (std::size_t i = 0; i < d; ++i) out[i] += h[i];
      // same arithmetic as the traced form: sum, then scale by 1/N
      const double inv = 1.0 / static_cast<double>(trace.size());
      for (double& v : out) v *= inv;
      return out;
    }
  }
  return {};
}

inline std::vector<double> reconstruct_feature(const ReconstructorParams& p, const std::vector<double>& pooled) {
  require(pooled.size() == p.hidden_dim(), "reconstruct_feature: h_c length mismatch");
  std::vector<double> out(p.feature_dim());
  kernels::matvec(p.weight.value.data(), p.feature_dim(), p.hidden_dim(), pooled, p.bias.value.data(), out);
  return out;
}

/// R = -(1/|T|) sum_j ||I_r - F_j||^2 / D_v.
inline double reconstruction_score(const std::vector<double>& reconstructed,
                                   const std::vector<const std::vector<double>*>& targets) {
  if (targets.empty()) throw ContractViolation("reconstruction_score: no targets");
  const std::size_t d = reconstructed.size();
  double total = 0.0;
  for (const auto* tg : targets) {
    require(tg->size() == d, "reconstruction_score: target length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double e = reconstructed[i] - (*tg)[i];
      s += e * e;
    }
    total += s;
  }
  return -total / (static_cast<double>(targets.size()) * static_cast<double>(d));
}

inline double reconstruction_score(const std::vector<double>& reconstructed,
                                   const std::vector<std::vector<double>>& targets) {
  std::vector<const std::vector<double>*> ptrs;
  for (const auto& t : targets) ptrs.push_back(&t);
  return reconstruction_score(reconstructed, ptrs);
}

inline ReconstructionResult reconstruct(const ReconstructorParams& p, const std::vector<std::vector<double>>& trace,
                                        const std::vector<const std::vector<double>*>& targets) {
  ReconstructionResult r;
  r.pooled = pool_hidden(p.pooling, trace);
  r.reconstructed = reconstruct_feature(p, r.pooled);
  r.score = reconstruction_score(r.reconstructed, targets);
  return r;
}

// ---------------------------------------------------------------------------
// Traced forms.

inline Var pool_hidden(Tape& t, PoolingTag tag, const std::vector<Var>& trace) {
  if (trace.empty()) throw ContractViolation("pool_hidden: empty trace");
  switch (tag) {
    case PoolingTag::last: return trace.back();
    case PoolingTag::max: return ops::max_over(t, trace);
    case PoolingTag::mean: return ops::mean_over(t, trace);
  }
  return {};
}

inline Var reconstruct_feature(Tape& t, const ReconstructorParams& p, Var pooled, bool track = true) {
  return ops::matvec(t, t.param(p.weight, track), pooled, t.param(p.bias, track));
}

inline Var reconstruction_score(Tape& t, Var reconstructed, const std::vector<Var>& targets) {
  if (targets.empty()) throw ContractViolation("reconstruction_score: no targets");
  std::vector<Var> sq;
  sq.reserve(targets.size());
  for (Var tg : targets) {
    Var diff = ops::sub(t, reconstructed, tg);
    sq.push_back(ops::dot(t, diff, diff));
  }
  const double denom = static_cast<double>(targets.size()) * static_cast<double>(t.value(reconstructed).size());
  return ops::affine(t, ops::add_n(t, sq), -1.0 / denom);
}

}  // namespace capforge
