#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "capforge/data/vocabulary.hpp"
#include "capforge/numerics/errors.hpp"

namespace capforge {

using Tokens = std::vector<std::string>;

struct EvalPair {
  Tokens candidate;
  std::vector<Tokens> references;

  static EvalPair from_text(const std::string& candidate, const std::vector<std::string>& references) {
    EvalPair p{tokenize(candidate), {}};
    for (const auto& r : references) p.references.push_back(tokenize(r));
    return p;
  }
};

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NgramCounts ngram_counts(const Tokens& t, std::size_t n) {
  NgramCounts c;
  if (n == 0 || t.size() < n) return c;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++c[Tokens(t.begin() + i, t.begin() + i + n)];
  return c;
}

namespace metrics_detail {

inline void check_pairs(const std::vector<EvalPair>& pairs) {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].references.empty()) throw ContractViolation("eval pair " + std::to_string(i) + " has no references");
    for (const auto& r : pairs[i].references)
      for (const auto& tok : r)
        if (tok.empty()) throw ContractViolation("eval pair " + std::to_string(i) + " has an empty token");
  }
}

}  // namespace metrics_detail

// ---------------------------------------------------------------------------
// BLEU

/// Corpus BLEU@max_order: clipped n-gram matches summed over the corpus,
/// uniform geometric mean, brevity penalty against the closest reference
/// length (ties to the shorter). No smoothing.
inline double bleu(const std::vector<EvalPair>& pairs, std::size_t max_order) {
  if (max_order < 1 || max_order > 4) throw ContractViolation("bleu: max_order must be in [1, 4]");
  metrics_detail::check_pairs(pairs);
  std::vector<double> matched(max_order, 0.0), total(max_order, 0.0);
  double c_len = 0.0, r_len = 0.0;
  for (const auto& p : pairs) {
    const std::size_t c = p.candidate.size();
    c_len += static_cast<double>(c);
    std::size_t best = p.references.front().size();
    for (const auto& r : p.references) {
      const auto d = [&](std::size_t x) { return x > c ? x - c : c - x; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    r_len += static_cast<double>(best);
    for (std::size_t n = 1; n <= max_order; ++n) {
      const NgramCounts cand = ngram_counts(p.candidate, n);
      NgramCounts max_ref;
      for (const auto& r : p.references)
        for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
      for (const auto& [g, k] : cand) {
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += static_cast<double>(std::min(k, it->second));
      }
      total[n - 1] += static_cast<double>(c >= n ? c - n + 1 : 0);
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < max_order; ++n) {
    if (matched[n] == 0.0 || total[n] == 0.0) return 0.0;
    log_sum += std::log(matched[n] / total[n]);
  }
  const double bp = c_len <= r_len ? std::exp(1.0 - r_len / c_len) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(max_order));
}

// ---------------------------------------------------------------------------
// ROUGE-L

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Per pair: max over references of the LCS F-measure (beta = 1.2); corpus
/// score is the mean over pairs.
inline double rouge_l(const std::vector<EvalPair>& pairs, double beta = 1.2) {
  metrics_detail::check_pairs(pairs);
  if (pairs.empty()) return 0.0;
  const double b2 = beta * beta;
  double sum = 0.0;
  for (const auto& p : pairs) {
    double best = 0.0;
    for (const auto& r : p.references) {
      const std::size_t l = lcs_length(p.candidate, r);
      if (l == 0) continue;
      const double prec = static_cast<double>(l) / static_cast<double>(p.candidate.size());
      const double rec = static_cast<double>(l) / static_cast<double>(r.size());
      best = std::max(best, (1.0 + b2) * prec * rec / (rec + b2 * prec));
    }
    sum += best;
  }
  return sum / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// CIDEr-D

/// Per-pair CIDEr-D scores. Each pair is one image; document frequencies are
/// counted over the images' reference sets.
inline std::vector<double> cider_d_scores(const std::vector<EvalPair>& pairs, double sigma = 6.0) {
  metrics_detail::check_pairs(pairs);
  constexpr std::size_t kOrders = 4;
  const std::size_t N = pairs.size();
  std::vector<double> out(N, 0.0);
  if (N == 0) return out;
  std::map<std::vector<std::string>, double> df;
  for (const auto& p : pairs) {
    std::map<std::vector<std::string>, bool> seen;
    for (const auto& r : p.references)
      for (std::size_t n = 1; n <= kOrders; ++n)
        for (const auto& [g, k] : ngram_counts(r, n)) seen[g] = true;
    for (const auto& [g, _] : seen) df[g] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(N));
  // tf-idf vector and its norm for one order.
  auto weigh = [&](const NgramCounts& counts, std::map<std::vector<std::string>, double>& vec) {
    double sq = 0.0;
    for (const auto& [g, k] : counts) {
      auto it = df.find(g);
      const double d = it == df.end() ? 0.0 : it->second;
      const double w = static_cast<double>(k) * (log_n - std::log(std::max(1.0, d)));
      vec[g] = w;
      sq += w * w;
    }
    return std::sqrt(sq);
  };
  for (std::size_t i = 0; i < N; ++i) {
    const auto& p = pairs[i];
    double sum_orders = 0.0;
    for (std::size_t n = 1; n <= kOrders; ++n) {
      std::map<std::vector<std::string>, double> hv;
      const double hn = weigh(ngram_counts(p.candidate, n), hv);
      double sum_refs = 0.0;
      for (const auto& r : p.references) {
        std::map<std::vector<std::string>, double> rv;
        const double rn = weigh(ngram_counts(r, n), rv);
        double val = 0.0;
        for (const auto& [g, w] : hv) {
          auto it = rv.find(g);
          if (it != rv.end()) val += std::min(w, it->second) * it->second;
        }
        if (hn != 0.0 && rn != 0.0) val /= hn * rn;
        const double delta = static_cast<double>(p.candidate.size()) - static_cast<double>(r.size());
        sum_refs += val * std::exp(-(delta * delta) / (2.0 * sigma * sigma));
      }
      sum_orders += sum_refs / static_cast<double>(p.references.size());
    }
    out[i] = 10.0 * sum_orders / static_cast<double>(kOrders);
  }
  return out;
}

inline double cider_d(const std::vector<EvalPair>& pairs, double sigma = 6.0) {
  const auto s = cider_d_scores(pairs, sigma);
  if (s.empty()) return 0.0;
  double sum = 0.0;
  for (double v : s) sum += v;
  return sum / static_cast<double>(s.size());
}

// ---------------------------------------------------------------------------
// METEOR-lite

/// Strips one of -ing, -es, -ed, -s when at least three letters remain.
inline std::string naive_stem(const std::string& w) {
  for (const char* suf : {"ing", "es", "ed", "s"}) {
    const std::string s(suf);
    if (w.size() >= s.size() + 3 && w.compare(w.size() - s.size(), s.size(), s) == 0)
      return w.substr(0, w.size() - s.size());
  }
  return w;
}

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

/// Alignment with the most matches and, among those, the fewest chunks.
/// Words match when identical or when their naive stems agree.
inline MeteorAlignment meteor_align(const Tokens& cand, const Tokens& ref) {
  const std::size_t nc = cand.size(), nr = ref.size();
  std::vector<std::vector<std::size_t>> options(nc);
  std::vector<std::string> rs(nr);
  for (std::size_t j = 0; j < nr; ++j) rs[j] = naive_stem(ref[j]);
  for (std::size_t i = 0; i < nc; ++i) {
    const std::string cs = naive_stem(cand[i]);
    for (std::size_t j = 0; j < nr; ++j)
      if (cand[i] == ref[j] || cs == rs[j]) options[i].push_back(j);
  }
  // Upper bound on matches from position i onward.
  std::vector<std::size_t> reach(nc + 1, 0);
  for (std::size_t i = nc; i-- > 0;) reach[i] = reach[i + 1] + (options[i].empty() ? 0 : 1);

  MeteorAlignment best;
  bool have = false;
  std::vector<bool> used(nr, false);
  // prev_ref: reference index matched at candidate position i-1, or npos.
  const std::size_t npos = static_cast<std::size_t>(-1);
  auto dfs = [&](auto&& self, std::size_t i, std::size_t prev_ref, std::size_t m, std::size_t ch) -> void {
    if (have) {
      // Chunks never decrease along a branch, so a branch that cannot beat the
      // best match count, or only tie it with as many chunks, is dead.
      const std::size_t bound = m + reach[i];
      if (bound < best.matches || (bound == best.matches && ch >= best.chunks)) return;
    }
    if (i == nc) {
      if (!have || m > best.matches || (m == best.matches && ch < best.chunks)) best = {m, ch}, have = true;
      return;
    }
    for (std::size_t j : options[i]) {
      if (used[j]) continue;
      used[j] = true;
      const bool extends = prev_ref != npos && j == prev_ref + 1;
      self(self, i + 1, j, m + 1, ch + (extends ? 0 : 1));
      used[j] = false;
    }
    self(self, i + 1, npos, m, ch);
  };
  dfs(dfs, 0, npos, 0, 0);
  return best;
}

struct MeteorParams {
  double alpha = 0.9;
  double gamma = 0.5;
  double beta = 3.0;
};

inline double meteor_sentence(const Tokens& cand, const Tokens& ref, const MeteorParams& mp = {}) {
  if (cand.empty() || ref.empty()) return 0.0;
  const MeteorAlignment a = meteor_align(cand, ref);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = p * r / (mp.alpha * p + (1.0 - mp.alpha) * r);
  const double penalty = mp.gamma * std::pow(static_cast<double>(a.chunks) / m, mp.beta);
  return fmean * (1.0 - penalty);
}

/// Best reference per pair, mean over pairs.
inline double meteor_lite(const std::vector<EvalPair>& pairs, const MeteorParams& mp = {}) {
  metrics_detail::check_pairs(pairs);
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : pairs) {
    double best = 0.0;
    for (const auto& r : p.references) best = std::max(best, meteor_sentence(p.candidate, r, mp));
    sum += best;
  }
  return sum / static_cast<double>(pairs.size());
}

}  // namespace capforge
