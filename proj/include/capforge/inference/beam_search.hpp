#pragma once

#include <algorithm>
#include <vector>

#include "capforge/model/caption_model.hpp"
#include "capforge/numerics/kernels.hpp"

namespace capforge {

struct BeamHypothesis {
  std::vector<TokenId> ids;  // starts with BOS
  double log_likelihood = 0.0;
  StepState state;
  HiddenTrace trace;  // one hidden state per emitted token
  bool finished = false;
};

namespace beam_detail {

/// Higher score first; equal scores go to the lexicographically smaller ids.
inline bool better(double sa, const std::vector<TokenId>& a, double sb, const std::vector<TokenId>& b) {
  if (sa != sb) return sa > sb;
  return a < b;
}

struct Candidate {
  std::size_t parent;
  TokenId token;  // ignored when `frozen`
  double score;
  bool frozen;  // a finished hypothesis carried over unchanged
};

}  // namespace beam_detail

/// Length-synchronous beam search over the full vocabulary. `max_len` bounds
/// the sequence length including BOS; a hypothesis finishes on EOS or when it
/// reaches max_len. Finished hypotheses stay in the beam and compete with the
/// live ones. Returns the final beam sorted by log-likelihood.
inline std::vector<BeamHypothesis> beam_search(const CaptionModel& m, const EncodedImage& enc,
                                               std::size_t beam_width, std::size_t max_len) {
  using beam_detail::Candidate;
  if (beam_width < 1) throw ContractViolation("beam_search: beam_width must be >= 1");
  if (max_len < 2) throw ContractViolation("beam_search: max_len must be >= 2");
  const DecoderParams& p = m.decoder;
  const std::size_t V = p.vocab_size();

  std::vector<BeamHypothesis> beam(1);
  beam[0].ids = {Vocabulary::kBos};
  beam[0].state = inject_image(p, enc);

  while (std::any_of(beam.begin(), beam.end(), [](const BeamHypothesis& h) { return !h.finished; })) {
    std::vector<Candidate> cands;
    std::vector<StepState> next_state(beam.size());
    std::vector<std::vector<double>> next_logp(beam.size());
    for (std::size_t b = 0; b < beam.size(); ++b) {
      const BeamHypothesis& h = beam[b];
      if (h.finished) {
        cands.push_back({b, 0, h.log_likelihood, true});
        continue;
      }
      next_state[b] = cell_step(p.cell, embedding_row(p, h.ids.back()), h.state);
      next_logp[b] = kernels::log_softmax(step_logits(p, next_state[b].hidden));
      for (std::size_t v = 0; v < V; ++v)
        cands.push_back({b, static_cast<TokenId>(v), h.log_likelihood + next_logp[b][v], false});
    }
    // Token sequences are needed only to break exact score ties.
    auto ids_of = [&](const Candidate& c) {
      std::vector<TokenId> ids = beam[c.parent].ids;
      if (!c.frozen) ids.push_back(c.token);
      return ids;
    };
    auto cmp = [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      return ids_of(a) < ids_of(b);
    };
    const std::size_t keep = std::min(beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), cmp);

    std::vector<BeamHypothesis> next;
    next.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      const BeamHypothesis& parent = beam[c.parent];
      if (c.frozen) {
        next.push_back(parent);
        continue;
      }
      BeamHypothesis h;
      h.ids = parent.ids;
      h.ids.push_back(c.token);
      h.log_likelihood = c.score;
      h.state = next_state[c.parent];
      h.trace = parent.trace;
      h.trace.push_back(next_state[c.parent].hidden);
      h.finished = c.token == Vocabulary::kEos || h.ids.size() >= max_len;
      next.push_back(std::move(h));
    }
    beam = std::move(next);
  }
  std::stable_sort(beam.begin(), beam.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
    return beam_detail::better(a.log_likelihood, a.ids, b.log_likelihood, b.ids);
  });
  return beam;
}

/// Argmax decoding, the reference for beam_width == 1.
inline BeamHypothesis greedy_decode(const CaptionModel& m, const EncodedImage& enc, std::size_t max_len) {
  if (max_len < 2) throw ContractViolation("greedy_decode: max_len must be >= 2");
  const DecoderParams& p = m.decoder;
  BeamHypothesis h;
  h.ids = {Vocabulary::kBos};
  h.state = inject_image(p, enc);
  while (!h.finished) {
    h.state = cell_step(p.cell, embedding_row(p, h.ids.back()), h.state);
    const auto logp = kernels::log_softmax(step_logits(p, h.state.hidden));
    const auto best = static_cast<TokenId>(std::max_element(logp.begin(), logp.end()) - logp.begin());
    h.ids.push_back(best);
    h.log_likelihood += logp[best];
    h.trace.push_back(h.state.hidden);
    h.finished = best == Vocabulary::kEos || h.ids.size() >= max_len;
  }
  return h;
}

}  // namespace capforge
