#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "capforge/numerics/errors.hpp"

namespace capforge {

/// Exhaustive cosine-similarity index over per-sample feature vectors.
class FeatureIndex {
 public:
  struct Entry {
    std::string id;
    std::vector<double> feature;
    double norm = 0.0;
  };

  FeatureIndex() = default;
  explicit FeatureIndex(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  static constexpr const char* metric() { return "cosine"; }

  void add(std::string id, std::vector<double> feature) {
    if (dim_ == 0 && entries_.empty()) dim_ = feature.size();
    require(feature.size() == dim_, "feature index: vector of length " + std::to_string(feature.size()) +
                                        " in an index of dimension " + std::to_string(dim_));
    const double n = norm_of(feature);
    entries_.push_back({std::move(id), std::move(feature), n});
  }

  /// Up to k ids by descending cosine similarity (ties: ascending id),
  /// skipping `exclude_id`. A zero-norm entry has similarity 0.
  std::vector<std::string> nearest(const std::vector<double>& query, std::size_t k,
                                   const std::string& exclude_id = {}) const {
    require(query.size() == dim_, "nearest_images: query dimension mismatch");
    const double qn = norm_of(query);
    if (qn == 0.0) throw ContractViolation("nearest_images: zero-norm query");
    if (k == 0) return {};
    struct Scored {
      double sim;
      const std::string* id;
    };
    std::vector<Scored> scored;
    scored.reserve(entries_.size());
    for (const auto& e : entries_) {
      if (!exclude_id.empty() && e.id == exclude_id) continue;
      double d = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) d += e.feature[i] * query[i];
      scored.push_back({e.norm == 0.0 ? 0.0 : d / (e.norm * qn), &e.id});
    }
    const std::size_t m = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(m), scored.end(),
                      [](const Scored& a, const Scored& b) {
                        if (a.sim != b.sim) return a.sim > b.sim;
                        return *a.id < *b.id;
                      });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < m; ++i) out.push_back(*scored[i].id);
    return out;
  }

 private:
  static double norm_of(const std::vector<double>& v) {
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  }
  std::size_t dim_ = 0;
  std::vector<Entry> entries_;
};

/// Free-function form used by the trainer.
inline std::vector<std::string> nearest_images(const FeatureIndex& index, const std::vector<double>& query,
                                               std::size_t k, const std::string& exclude_id = {}) {
  return index.nearest(query, k, exclude_id);
}

}  // namespace capforge
