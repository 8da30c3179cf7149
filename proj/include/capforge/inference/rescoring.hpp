#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "capforge/inference/beam_search.hpp"
#include "capforge/util/parallel.hpp"

namespace capforge {

struct RankedCaption {
  std::vector<TokenId> ids;
  double log_likelihood = 0.0;  // P
  double reconstruction = 0.0;  // R
  double combined = 0.0;        // P + lambda_test * R
  std::size_t rank = 0;         // 0 = best
};

/// Combined score descending; ties by higher P, then lexicographic ids.
inline bool ranks_before(const RankedCaption& a, const RankedCaption& b) {
  if (a.combined != b.combined) return a.combined > b.combined;
  if (a.log_likelihood != b.log_likelihood) return a.log_likelihood > b.log_likelihood;
  return a.ids < b.ids;
}

inline std::vector<RankedCaption> rank_captions(std::vector<RankedCaption> c) {
  std::sort(c.begin(), c.end(), ranks_before);
  for (std::size_t i = 0; i < c.size(); ++i) c[i].rank = i;
  return c;
}

/// Scores each hypothesis's hidden trace against `targets` and ranks by
/// P + lambda_test * R.
inline std::vector<RankedCaption> rescore_candidates(const CaptionModel& m, const std::vector<BeamHypothesis>& hyps,
                                                     double lambda_test,
                                                     const std::vector<const std::vector<double>*>& targets) {
  if (hyps.empty()) throw ContractViolation("rescore_candidates: no hypotheses");
  std::vector<RankedCaption> out;
  out.reserve(hyps.size());
  for (const auto& h : hyps) {
    RankedCaption r;
    r.ids = h.ids;
    r.log_likelihood = h.log_likelihood;
    r.reconstruction = reconstruct(m.reconstructor, h.trace, targets).score;
    r.combined = r.log_likelihood + lambda_test * r.reconstruction;
    out.push_back(std::move(r));
  }
  return rank_captions(std::move(out));
}

/// Target set is the image's own feature.
inline std::vector<RankedCaption> rescore_candidates(const CaptionModel& m, const EncodedImage& enc,
                                                     const std::vector<BeamHypothesis>& hyps, double lambda_test) {
  return rescore_candidates(m, hyps, lambda_test, {&enc.feature});
}

struct CaptionOptions {
  std::size_t beam_width = 3;
  double lambda_test = 1.0;
  std::size_t max_len = 16;
};

struct CaptionResult {
  std::string id;
  std::string caption;
  std::vector<RankedCaption> candidates;  // ranked; candidates[0] is the chosen one
};

/// encode -> beam search -> rescore -> decode the winner.
inline CaptionResult caption_image(const CaptionModel& m, const Tensor& image, const CaptionOptions& o) {
  const EncodedImage enc = m.encode(image);
  CaptionResult r;
  r.candidates = rescore_candidates(m, enc, beam_search(m, enc, o.beam_width, o.max_len), o.lambda_test);
  r.caption = m.vocab.decode(r.candidates.front().ids);
  return r;
}

inline CaptionResult caption_image(const CaptionModel& m, const SceneSample& s, const CaptionOptions& o) {
  CaptionResult r = caption_image(m, s.image, o);
  r.id = s.id;
  return r;
}

/// Fans out over worker threads; results are in input order.
inline std::vector<CaptionResult> caption_batch(const CaptionModel& m, const std::vector<SceneSample>& samples,
                                                const CaptionOptions& o) {
  std::vector<CaptionResult> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) { out[i] = caption_image(m, samples[i], o); });
  return out;
}

inline nlohmann::json caption_header_json(const CaptionOptions& o) {
  return {{"header", {{"beam_width", o.beam_width}, {"lambda_test", o.lambda_test}, {"max_len", o.max_len}}}};
}

inline nlohmann::json caption_to_json(const CaptionModel& m, const CaptionResult& r) {
  nlohmann::json all = nlohmann::json::array();
  for (const auto& c : r.candidates)
    all.push_back({{"caption", m.vocab.decode(c.ids)},
                   {"tokens", c.ids},
                   {"P", c.log_likelihood},
                   {"R", c.reconstruction},
                   {"combined", c.combined},
                   {"rank", c.rank}});
  const auto& best = r.candidates.front();
  return {{"id", r.id},
          {"caption", r.caption},
          {"P", best.log_likelihood},
          {"R", best.reconstruction},
          {"combined", best.combined},
          {"all_candidates", all}};
}

}  // namespace capforge
