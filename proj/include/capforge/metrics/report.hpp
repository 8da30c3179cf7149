#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "capforge/data/corpus.hpp"
#include "capforge/metrics/caption_metrics.hpp"

namespace capforge {

struct MetricReport {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double meteor_lite = 0;
  double rouge_l = 0;
  double cider_d = 0;
  std::size_t corpus_size = 0;

  nlohmann::json to_json() const {
    return {{"bleu1", bleu1},
            {"bleu2", bleu2},
            {"bleu3", bleu3},
            {"bleu4", bleu4},
            {"meteor_lite", meteor_lite},
            {"rouge_l", rouge_l},
            {"cider_d", cider_d},
            {"corpus_size", corpus_size},
            {"config",
             {{"bleu_ref_length", "closest, ties to shorter"},
              {"bleu_smoothing", "none"},
              {"rouge_beta", 1.2},
              {"cider_sigma", 6.0},
              {"meteor", {{"alpha", 0.9}, {"gamma", 0.5}, {"beta", 3.0}, {"matching", "exact+suffix-stem"}}}}}};
  }
};

inline MetricReport evaluate_pairs(const std::vector<EvalPair>& pairs) {
  MetricReport r;
  r.corpus_size = pairs.size();
  if (pairs.empty()) return r;
  r.bleu1 = bleu(pairs, 1);
  r.bleu2 = bleu(pairs, 2);
  r.bleu3 = bleu(pairs, 3);
  r.bleu4 = bleu(pairs, 4);
  r.meteor_lite = meteor_lite(pairs);
  r.rouge_l = rouge_l(pairs);
  r.cider_d = cider_d(pairs);
  return r;
}

struct CandidateCaption {
  std::string id;
  std::string caption;
};

/// Reads {id, caption} JSONL. Lines holding a "header" object are skipped.
inline std::vector<CandidateCaption> read_candidates(std::istream& is) {
  std::vector<CandidateCaption> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("header")) continue;
      out.push_back({j.at("id").get<std::string>(), j.at("caption").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("bad candidate record: ") + e.what(), lineno);
    }
  }
  return out;
}

inline std::vector<CandidateCaption> read_candidates(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open candidates file '" + path + "'");
  return read_candidates(is);
}

/// Pairs each candidate with its sample's captions; every missing id is listed.
inline std::vector<EvalPair> match_references(const std::vector<CandidateCaption>& cands,
                                              const std::vector<SceneSample>& samples) {
  std::unordered_map<std::string, const SceneSample*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  std::vector<EvalPair> pairs;
  std::vector<std::string> missing;
  for (const auto& c : cands) {
    auto it = by_id.find(c.id);
    if (it == by_id.end() || it->second->captions.empty()) {
      missing.push_back(c.id);
      continue;
    }
    pairs.push_back(EvalPair::from_text(c.caption, it->second->captions));
  }
  if (!missing.empty()) {
    std::string msg = "no references for " + std::to_string(missing.size()) + " candidate id(s):";
    for (const auto& id : missing) msg += " " + id;
    throw DataError(msg);
  }
  return pairs;
}

inline MetricReport evaluate_corpus(const std::vector<CandidateCaption>& cands, const std::vector<SceneSample>& samples) {
  return evaluate_pairs(match_references(cands, samples));
}

}  // namespace capforge
