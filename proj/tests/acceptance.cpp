// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// writes acceptance_report.json to the working directory.
//
//   acceptance            run every criterion
//   acceptance 3 4 5      run only the listed ones
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "capforge/cli/commands.hpp"
#include "capforge/inference/rescoring.hpp"
#include "capforge/metrics/report.hpp"
#include "capforge/trainer/model_grad_check.hpp"
#include "capforge/trainer/trainer.hpp"

using namespace capforge;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string summary;
  json details = json::object();
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. gradient fidelity

Verdict gradient_fidelity() {
  const auto t0 = Clock::now();
  Verdict v{true, "", json::object()};
  double worst = 0.0;
  std::string worst_name;
  for (PoolingTag tag : {PoolingTag::mean, PoolingTag::max, PoolingTag::last}) {
    ModelGradCheckOptions o;  // batch 4, tiny dims
    o.dims.pooling = tag;
    o.check.step = 1e-5;
    o.check.tolerance = 1e-4;
    const GradCheckReport r = model_grad_check(o);
    json tensors = json::object();
    for (const auto& p : r.params) {
      tensors[p.name] = p.max_rel_error;
      if (!(p.max_rel_error < 1e-4)) v.pass = false;
      if (p.max_rel_error > worst) worst = p.max_rel_error, worst_name = to_string(tag) + ":" + p.name;
    }
    v.details[to_string(tag)] = tensors;
  }
  const double secs = seconds_since(t0);
  v.pass = v.pass && secs < 300;
  v.details["seconds"] = secs;
  v.summary = "worst rel err " + fmt(worst, 3) + " (" + worst_name + "), " + fmt(secs, 3) + " s";
  return v;
}

// ---------------------------------------------------------------------------
// 2. overfit and recite

std::optional<CaptionModel> overfit_model;  // reused by criterion 6
std::vector<SceneSample> overfit_set;

Verdict overfit_and_recite() {
  const auto t0 = Clock::now();
  CorpusOptions co;
  co.max_captions = 1;  // one training caption per image
  overfit_set = generate_synthetic_corpus(11, 32, co);
  TrainConfig cfg;
  cfg.lambda_recon = 1.0;
  cfg.learning_rate = 5e-4;
  cfg.batch_size = 16;
  cfg.max_steps = 1000;
  cfg.max_epochs = 1000;
  cfg.patience = 1000;
  const TrainResult res = train(init_model(overfit_set, cfg), overfit_set, overfit_set, cfg);
  const auto pairs = make_pairs(overfit_set, res.model.vocab, cfg.max_len);
  const double nll = per_token_nll(res.model, pairs);
  CaptionOptions o;
  o.beam_width = 3;
  const auto caps = caption_batch(res.model, overfit_set, o);
  int recited = 0;
  json misses = json::array();
  for (std::size_t i = 0; i < caps.size(); ++i) {
    if (caps[i].caption == overfit_set[i].captions.front())
      ++recited;
    else
      misses.push_back({{"id", caps[i].id}, {"got", caps[i].caption}, {"want", overfit_set[i].captions.front()}});
  }
  overfit_model = res.model;
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = res.log.total_steps <= 2000 && nll < 0.1 && recited >= 30 && secs < 600;
  v.summary = "nll " + fmt(nll, 4) + " after " + std::to_string(res.log.total_steps) + " steps, recited " +
              std::to_string(recited) + "/32, " + fmt(secs, 3) + " s";
  v.details = {{"token_nll", nll}, {"steps", res.log.total_steps}, {"recited", recited},
               {"misses", misses}, {"seconds", secs}, {"config", cfg}};
  return v;
}

// ---------------------------------------------------------------------------
// 3. beam-search exactness

void enumerate(std::size_t V, std::size_t max_len, std::vector<TokenId>& cur, std::vector<std::vector<TokenId>>& out) {
  if ((cur.size() > 1 && cur.back() == Vocabulary::kEos) || cur.size() == max_len) {
    out.push_back(cur);
    return;
  }
  for (TokenId t = 0; t < V; ++t) {
    cur.push_back(t);
    enumerate(V, max_len, cur, out);
    cur.pop_back();
  }
}

Verdict beam_exactness() {
  const auto t0 = Clock::now();
  const Vocabulary vocab = Vocabulary::from_tokens({"<pad>", "<bos>", "<eos>", "<unk>", "w"});
  const std::size_t max_len = 4, width = 625;
  std::vector<std::vector<TokenId>> all;
  std::vector<TokenId> cur{Vocabulary::kBos};
  enumerate(vocab.size(), max_len, cur, all);
  Verdict v{true, "", json::array()};
  double worst = 0.0;
  const auto samples = generate_synthetic_corpus(31, 10);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CaptionModel m = CaptionModel::create(ModelDims{}, vocab, seed);
    Rng rng(seed + 1000);
    for (double& x : m.decoder.embedding.value.storage()) x = rng.normal();  // non-flat distributions
    const EncodedImage enc = m.encode(samples[seed - 1].image);
    // Oracle: taped teacher-forced scoring of every terminal sequence.
    double best = -INFINITY;
    std::vector<TokenId> best_ids;
    for (const auto& ids : all) {
      const double ll = score_tokens(m.decoder, enc, ids).log_likelihood;
      if (ll > best || (ll == best && ids < best_ids)) best = ll, best_ids = ids;
    }
    const auto beam = beam_search(m, enc, width, max_len);
    const double err = std::abs(beam.front().log_likelihood - best);
    const bool ok = beam.front().ids == best_ids && err <= 1e-10;
    worst = std::max(worst, err);
    v.pass = v.pass && ok;
    v.details.push_back({{"seed", seed}, {"ids_equal", beam.front().ids == best_ids}, {"ll_abs_err", err}});
  }
  const double secs = seconds_since(t0);
  v.pass = v.pass && secs < 60;
  v.summary = "10 seeded models, " + std::to_string(all.size()) + " sequences each, max |dP| " + fmt(worst, 3) + ", " +
              fmt(secs, 3) + " s";
  return v;
}

// ---------------------------------------------------------------------------
// 4. metric oracle suite

double metric_by_name(const MetricReport& r, const std::string& name) {
  const json j = r.to_json();
  return j.at(name).get<double>();
}

Verdict metric_oracles() {
  std::ifstream is(std::string(CAPFORGE_FIXTURE_DIR) + "/metric_fixtures.json");
  Verdict v{true, "", json::array()};
  if (!is) return {false, "fixture file missing", {}};
  const json fx = json::parse(is);
  auto pairs_of = [](const json& j) {
    std::vector<EvalPair> out;
    for (const auto& p : j)
      out.push_back(EvalPair::from_text(p.at("candidate").get<std::string>(),
                                        p.at("references").get<std::vector<std::string>>()));
    return out;
  };
  std::size_t checked = 0;
  double worst = 0.0;
  auto check = [&](const std::string& label, const json& pairs, const json& expected) {
    const MetricReport r = evaluate_pairs(pairs_of(pairs));
    for (const auto& [name, want] : expected.items()) {
      const double err = std::abs(metric_by_name(r, name) - want.get<double>());
      ++checked;
      worst = std::max(worst, err);
      if (!(err <= 1e-9)) {
        v.pass = false;
        v.details.push_back({{"case", label}, {"metric", name}, {"err", err}});
      }
    }
  };
  for (const auto& c : fx.at("cases")) check(c.at("name"), c.at("pairs"), c.at("expected"));
  const std::size_t corpus_pairs = fx.at("corpus").at("pairs").size();
  check("corpus", fx.at("corpus").at("pairs"), fx.at("corpus").at("expected"));
  if (corpus_pairs < 6) v.pass = false;

  // Identity: exact, not approximate.
  bool identity_exact = true;
  for (const auto& c : fx.at("cases")) {
    if (c.at("name") != "identity") continue;
    const MetricReport r = evaluate_pairs(pairs_of(c.at("pairs")));
    identity_exact = r.bleu1 == 1.0 && r.bleu2 == 1.0 && r.bleu3 == 1.0 && r.bleu4 == 1.0 && r.rouge_l == 1.0;
  }
  v.pass = v.pass && identity_exact;
  v.summary = std::to_string(checked) + " fixture values, max err " + fmt(worst, 3) + ", corpus " +
              std::to_string(corpus_pairs) + " pairs, identity exact: " + (identity_exact ? "yes" : "no");
  return v;
}

// ---------------------------------------------------------------------------
// 5. objective decomposition

Verdict objective_decomposition() {
  const auto samples = generate_synthetic_corpus(41, 8);
  TrainConfig cfg;
  cfg.k_similar = 3;
  const CaptionModel m = init_model(samples, cfg);
  const auto pairs = make_pairs(samples, m.vocab, cfg.max_len);
  const NeighborCache cache = NeighborCache::build(m, samples, cfg.k_similar);

  // mean(R), computed directly: own live feature plus cached neighbor features.
  double mean_r = 0.0;
  for (const auto& p : pairs) {
    const EncodedImage enc = m.encode(p.sample->image);
    const DecodeResult d = decode_teacher_forced(m.decoder, enc, p.tokens);
    std::vector<const std::vector<double>*> targets{&enc.feature};
    for (const auto* f : cache.neighbor_features(p.sample->id)) targets.push_back(f);
    mean_r += reconstruct(m.reconstructor, d.trace, targets).score;
  }
  mean_r /= static_cast<double>(pairs.size());

  TrainConfig zero = cfg;
  zero.lambda_recon = 0.0;
  const double base = compute_objective(m, pairs, zero, &cache).total;
  Verdict v{true, "", json::array()};
  double worst = 0.0;
  for (double lambda : {0.5, 1.0, 2.0}) {
    TrainConfig c = cfg;
    c.lambda_recon = lambda;
    const double diff = compute_objective(m, pairs, c, &cache).total - base;
    const double err = std::abs(diff - lambda * mean_r);
    worst = std::max(worst, err);
    v.pass = v.pass && err <= 1e-10;
    v.details.push_back({{"lambda", lambda}, {"difference", diff}, {"lambda_mean_R", lambda * mean_r}, {"err", err}});
  }
  v.summary = "mean R " + fmt(mean_r) + ", max |diff - lambda*mean R| " + fmt(worst, 3);
  return v;
}

// ---------------------------------------------------------------------------
// 6. rescoring degeneracy

Verdict rescoring_degeneracy() {
  Verdict v{true, "", json::object()};
  std::size_t images = 0, mismatches = 0;
  auto check_model = [&](const CaptionModel& m, const std::vector<SceneSample>& set) {
    for (const auto& s : set) {
      const EncodedImage enc = m.encode(s.image);
      const auto beam = beam_search(m, enc, 5, 16);
      const auto ranked = rescore_candidates(m, enc, beam, 0.0);
      // Likelihood ranking: P descending, ties by ids.
      auto by_p = beam;
      std::sort(by_p.begin(), by_p.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
        return a.log_likelihood != b.log_likelihood ? a.log_likelihood > b.log_likelihood : a.ids < b.ids;
      });
      ++images;
      for (std::size_t i = 0; i < by_p.size(); ++i)
        if (ranked[i].ids != by_p[i].ids) {
          ++mismatches;
          break;
        }
    }
  };
  const auto test_set = generate_synthetic_corpus(51, 64);
  std::vector<std::string> caps;
  for (const auto& s : test_set) caps.insert(caps.end(), s.captions.begin(), s.captions.end());
  check_model(CaptionModel::create(ModelDims{}, Vocabulary::build(caps), 5), test_set);
  if (overfit_model) check_model(*overfit_model, overfit_set);
  v.pass = mismatches == 0;

  // Equal-likelihood candidates with distinct traces rank by R alone.
  const CaptionModel m = CaptionModel::create(ModelDims{}, Vocabulary::build(caps), 6);
  Rng rng(7);
  std::size_t sets = 0, r_mismatches = 0;
  for (int trial = 0; trial < 50; ++trial, ++sets) {
    std::vector<double> target(m.dims.feature_dim);
    for (double& x : target) x = rng.normal();
    std::vector<BeamHypothesis> hyps(6);
    std::vector<std::pair<double, std::size_t>> oracle;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      hyps[i].ids = {Vocabulary::kBos, static_cast<TokenId>(4 + i), Vocabulary::kEos};
      hyps[i].log_likelihood = -3.25;
      for (int k = 0; k < 2; ++k) {
        std::vector<double> h(m.dims.hidden_dim);
        for (double& x : h) x = rng.normal();
        hyps[i].trace.push_back(h);
      }
      oracle.emplace_back(reconstruct(m.reconstructor, hyps[i].trace, {&target}).score, i);
    }
    std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (double lambda : {0.5, 1.0, 4.0}) {
      const auto ranked = rescore_candidates(m, hyps, lambda, {&target});
      for (std::size_t i = 0; i < ranked.size(); ++i)
        if (ranked[i].ids != hyps[oracle[i].second].ids) {
          ++r_mismatches;
          break;
        }
    }
  }
  v.pass = v.pass && r_mismatches == 0;
  v.summary = "lambda_test=0 order mismatches " + std::to_string(mismatches) + "/" + std::to_string(images) +
              " images; equal-P order mismatches " + std::to_string(r_mismatches) + "/" + std::to_string(sets * 3);
  v.details = {{"images", images}, {"likelihood_mismatches", mismatches}, {"equal_p_mismatches", r_mismatches}};
  return v;
}

// ---------------------------------------------------------------------------
// 7. GRU vs LSTM cost

Verdict cell_cost() {
  cli::BenchArgs a;  // d_e = d_h = 256, 10^4 timed iterations after warmup
  const json b = cli::bench_cells(a);
  std::ofstream("bench_cells_report.json") << b.dump(1) << "\n";
  Verdict v;
  v.pass = b["param_ratio_is_three_quarters"].get<bool>() && b["gru_faster"].get<bool>();
  v.summary = "params " + std::to_string(b["gru_params"].get<std::size_t>()) + "/" +
              std::to_string(b["lstm_params"].get<std::size_t>()) + ", median ns GRU " +
              fmt(b["gru_median_ns"].get<double>(), 5) + " vs LSTM " + fmt(b["lstm_median_ns"].get<double>(), 5) +
              " (margin " + fmt(100 * b["margin"].get<double>(), 3) + "%)";
  v.details = b;
  return v;
}

// ---------------------------------------------------------------------------
// 8. reconstruction benefit

Verdict reconstruction_benefit() {
  const auto t0 = Clock::now();
  const auto held_out = generate_synthetic_corpus(9000, 128);
  json runs = json::array();
  double sum[2] = {0, 0};
  const double lambdas[2] = {1.0, 0.0};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    // 512 samples: the last 64 are the validation split.
    const auto corpus = generate_synthetic_corpus(100 + seed, 512);
    const std::vector<SceneSample> tr(corpus.begin(), corpus.begin() + 448), va(corpus.begin() + 448, corpus.end());
    for (int li = 0; li < 2; ++li) {
      TrainConfig cfg;
      cfg.lambda_recon = lambdas[li];
      cfg.learning_rate = 2e-3;
      cfg.max_epochs = 30;
      cfg.patience = 5;
      cfg.seed = seed;
      const TrainResult res = train(init_model(tr, cfg), tr, va, cfg);
      CaptionOptions o;
      o.lambda_test = lambdas[li];
      std::vector<CandidateCaption> cands;
      for (const auto& r : caption_batch(res.model, held_out, o)) cands.push_back({r.id, r.caption});
      const MetricReport rep = evaluate_corpus(cands, held_out);
      sum[li] += rep.cider_d;
      json run{{"seed", seed},
               {"lambda", lambdas[li]},
               {"cider_d", rep.cider_d},
               {"bleu4", rep.bleu4},
               {"best_epoch", res.log.best_epoch},
               {"stop_reason", res.log.stop_reason}};
      if (lambdas[li] > 0.0) {
        // Diagnostic only: the same model without test-time rescoring.
        o.lambda_test = 0.0;
        std::vector<CandidateCaption> plain;
        for (const auto& r : caption_batch(res.model, held_out, o)) plain.push_back({r.id, r.caption});
        run["cider_d_without_rescoring"] = evaluate_corpus(plain, held_out).cider_d;
      }
      runs.push_back(run);
      std::cerr << "  [8] seed " << seed << " lambda " << lambdas[li] << " CIDEr-D " << rep.cider_d << " ("
                << fmt(seconds_since(t0), 4) << " s)\n";
    }
  }
  const double with = sum[0] / 3, without = sum[1] / 3;
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = with >= without - 0.02 && secs < 1800;
  v.summary = "mean CIDEr-D lambda=1 " + fmt(with, 5) + " vs lambda=0 " + fmt(without, 5) + " (diff " +
              fmt(with - without, 3) + ", " + (with > without ? "improves" : "does not improve") + "), " +
              fmt(secs, 4) + " s";
  double no_rescore = 0.0;
  for (const auto& r : runs)
    if (r.contains("cider_d_without_rescoring")) no_rescore += r["cider_d_without_rescoring"].get<double>() / 3;
  v.summary += "; lambda=1 without rescoring " + fmt(no_rescore, 5);
  v.details = {{"runs", runs}, {"mean_lambda1", with}, {"mean_lambda0", without},
               {"mean_lambda1_without_rescoring", no_rescore},
               {"difference", with - without}, {"improves", with > without}, {"seconds", secs}};
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"overfit and recite", overfit_and_recite},
      {"beam search exactness", beam_exactness},
      {"metric oracle suite", metric_oracles},
      {"objective decomposition", objective_decomposition},
      {"rescoring degeneracy", rescoring_degeneracy},
      {"GRU vs LSTM cost", cell_cost},
      {"reconstruction benefit", reconstruction_benefit},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  json report = json::object();
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(n)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what(), {}};
    }
    all = all && v.pass;
    std::cout << "CRITERION " << n << " " << (v.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << v.summary << std::endl;
    report[std::to_string(n)] = {{"name", criteria[i].first}, {"pass", v.pass}, {"summary", v.summary},
                                 {"details", v.details}};
  }
  std::ofstream("acceptance_report.json") << report.dump(1) << "\n";
  return all ? 0 : 1;
}
