#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "capforge/cli/run_config.hpp"
#include "capforge/data/dataset_io.hpp"
#include "capforge/inference/rescoring.hpp"
#include "capforge/metrics/report.hpp"
#include "capforge/numerics/op_self_test.hpp"
#include "capforge/trainer/checkpoint.hpp"
#include "capforge/trainer/model_grad_check.hpp"

// Subcommand bodies. Each returns the process exit code; errors other than
// contract failures propagate as exceptions for main() to report.
namespace capforge::cli {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw DataError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::uint64_t seed = 1;
  std::size_t n = 64;
  std::string out;
  CorpusOptions corpus;
};

inline int gen_data(const GenDataArgs& a, std::ostream& log) {
  const auto samples = generate_synthetic_corpus(a.seed, a.n, a.corpus);
  save_dataset(samples, a.out);
  std::vector<std::string> caps;
  for (const auto& s : samples)
    for (const auto& c : s.captions) caps.push_back(c);
  const Vocabulary v = Vocabulary::build(caps);
  log << nlohmann::json{{"samples", samples.size()},
                        {"out", a.out},
                        {"vocab_size_estimate", v.size()},
                        {"attribute_dim", samples.front().attribute_labels.size()},
                        {"grid", a.corpus.grid}}
             .dump()
      << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

inline int train(const RunConfig& rc, std::ostream& log) {
  std::vector<SceneSample> train_set = load_dataset(rc.dataset), val_set;
  if (!rc.val_dataset.empty()) {
    val_set = load_dataset(rc.val_dataset);
  } else {
    const auto n_val = static_cast<std::size_t>(std::llround(rc.val_split * static_cast<double>(train_set.size())));
    if (n_val < 1 || n_val >= train_set.size())
      throw ConfigError("val_split " + std::to_string(rc.val_split) + " leaves an empty train or validation set for " +
                        std::to_string(train_set.size()) + " samples");
    val_set.assign(train_set.end() - static_cast<std::ptrdiff_t>(n_val), train_set.end());
    train_set.resize(train_set.size() - n_val);
  }
  if (train_set.empty() || val_set.empty()) throw DataError("training and validation sets must be non-empty");
  for (const auto& s : train_set)
    if (s.image.dim(0) != rc.train.dims.grid)
      throw DataError("sample '" + s.id + "' is " + std::to_string(s.image.dim(0)) + " px, config grid is " +
                      std::to_string(rc.train.dims.grid));

  CaptionModel m = init_model(train_set, rc.train);
  TrainResult res = train(std::move(m), train_set, val_set, rc.train, [&](const EpochRecord& e) {
    log << "epoch " << e.epoch << "  objective " << e.train_objective << "  val_objective " << e.val_objective
        << "  val_nll " << e.val_token_nll << (e.improved ? "  *" : "") << "\n";
    return true;
  });
  save_checkpoint(res.model, rc.checkpoint, run_config_to_json(rc));

  nlohmann::json out = res.log.to_json();
  const auto train_pairs = make_pairs(train_set, res.model.vocab, rc.train.max_len);
  const auto val_pairs = make_pairs(val_set, res.model.vocab, rc.train.max_len);
  out["final_train_token_nll"] = per_token_nll(res.model, train_pairs);
  out["final_val_token_nll"] = per_token_nll(res.model, val_pairs);
  out["config"] = run_config_to_json(rc);
  write_text(rc.log_path(), out.dump(1) + "\n");
  log << "best epoch " << res.log.best_epoch << " (" << res.log.stop_reason << "), train nll "
      << out["final_train_token_nll"].get<double>() << ", checkpoint " << rc.checkpoint << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// caption

struct CaptionArgs {
  std::string checkpoint;
  std::string dataset;
  std::string out;
  CaptionOptions opts;
};

inline void check_compatible(const CaptionModel& m, const std::vector<SceneSample>& samples) {
  for (const auto& s : samples)
    if (s.image.rank() != 3 || s.image.dim(0) != m.dims.grid || s.image.dim(1) != m.dims.grid || s.image.dim(2) != 3)
      throw DataError("sample '" + s.id + "' has image shape " + shape_str(s.image.shape()) +
                      " but the checkpoint expects " + std::to_string(m.dims.grid) + "x" +
                      std::to_string(m.dims.grid) + "x3");
}

inline std::string captions_jsonl(const CaptionModel& m, const std::vector<CaptionResult>& results,
                                  const CaptionOptions& o) {
  std::string text = caption_header_json(o).dump() + "\n";
  for (const auto& r : results) text += caption_to_json(m, r).dump() + "\n";
  return text;
}

inline int caption(const CaptionArgs& a, std::ostream& log) {
  const CaptionModel m = load_checkpoint(a.checkpoint);
  const auto samples = load_dataset(a.dataset);
  check_compatible(m, samples);
  const auto results = caption_batch(m, samples, a.opts);
  write_text(a.out, captions_jsonl(m, results, a.opts));
  log << "captioned " << results.size() << " images (beam " << a.opts.beam_width << ", lambda_test "
      << a.opts.lambda_test << ") -> " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

inline int eval(const std::string& candidates, const std::string& dataset, const std::string& out, std::ostream& log) {
  const MetricReport r = evaluate_corpus(read_candidates(candidates), load_dataset(dataset));
  const std::string text = r.to_json().dump(1) + "\n";
  if (!out.empty()) write_text(out, text);
  log << text;
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string checkpoint;
  std::string dataset;
  std::string out;
  std::vector<std::size_t> beams{1, 2, 3, 5};
  std::vector<double> lambdas{1.0};
  std::size_t max_len = 16;
};

/// One row per (beam width, lambda_test). Beam search runs once per width;
/// rescoring is repeated per lambda.
inline nlohmann::json sweep_table(const CaptionModel& m, const std::vector<SceneSample>& samples, const SweepArgs& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t beam : a.beams) {
    std::vector<EncodedImage> encs(samples.size());
    std::vector<std::vector<BeamHypothesis>> hyps(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
      encs[i] = m.encode(samples[i].image);
      hyps[i] = beam_search(m, encs[i], beam, a.max_len);
    });
    for (double lambda : a.lambdas) {
      std::vector<CandidateCaption> cands;
      std::vector<std::size_t> counts;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto ranked = rescore_candidates(m, encs[i], hyps[i], lambda);
        cands.push_back({samples[i].id, m.vocab.decode(ranked.front().ids)});
        counts.push_back(ranked.size());
      }
      nlohmann::json row = evaluate_corpus(cands, samples).to_json();
      row.erase("config");
      row["beam_width"] = beam;
      row["lambda_test"] = lambda;
      double mean = 0.0;
      for (auto c : counts) mean += static_cast<double>(c);
      row["mean_candidates"] = samples.empty() ? 0.0 : mean / static_cast<double>(samples.size());
      row["candidates_per_image"] = counts;
      nlohmann::json top = nlohmann::json::array();
      for (const auto& c : cands) top.push_back(c.caption);
      row["captions"] = top;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::string sweep_csv(const nlohmann::json& rows) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "beam_width,lambda_test,bleu1,bleu2,bleu3,bleu4,meteor_lite,rouge_l,cider_d,mean_candidates\n";
  for (const auto& r : rows)
    os << r["beam_width"].get<std::size_t>() << "," << r["lambda_test"].get<double>() << "," << r["bleu1"].get<double>()
       << "," << r["bleu2"].get<double>() << "," << r["bleu3"].get<double>() << "," << r["bleu4"].get<double>() << ","
       << r["meteor_lite"].get<double>() << "," << r["rouge_l"].get<double>() << "," << r["cider_d"].get<double>()
       << "," << r["mean_candidates"].get<double>() << "\n";
  return os.str();
}

inline int sweep(const SweepArgs& a, std::ostream& log) {
  if (a.beams.empty() || a.lambdas.empty()) throw ConfigError("sweep needs at least one beam width and one lambda");
  const CaptionModel m = load_checkpoint(a.checkpoint);
  const auto samples = load_dataset(a.dataset);
  check_compatible(m, samples);
  const nlohmann::json rows = sweep_table(m, samples, a);
  const bool csv = a.out.size() >= 4 && a.out.compare(a.out.size() - 4, 4, ".csv") == 0;
  write_text(a.out, csv ? sweep_csv(rows) : nlohmann::json{{"rows", rows}}.dump(1) + "\n");
  log << sweep_csv(rows);
  return 0;
}

// ---------------------------------------------------------------------------
// bench-cells

struct BenchArgs {
  std::size_t embed_dim = 256;
  std::size_t hidden_dim = 256;
  std::size_t iters = 10000;
  std::uint64_t seed = 1;
  std::string out;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Times single tape-free cell steps. GRU and LSTM iterations alternate so
/// both see the same machine conditions.
inline nlohmann::json bench_cells(const BenchArgs& a) {
  if (a.iters < 1) throw ConfigError("iters must be >= 1");
  Rng rng(a.seed);
  const RecurrentCell gru = RecurrentCell::init(CellKind::gru, a.embed_dim, a.hidden_dim, rng);
  const RecurrentCell lstm = RecurrentCell::init(CellKind::lstm, a.embed_dim, a.hidden_dim, rng);
  std::vector<double> x(a.embed_dim);
  for (double& v : x) v = rng.normal();
  StepState sg = StepState::zeros(a.hidden_dim), sl = StepState::zeros(a.hidden_dim);
  for (std::size_t i = 0; i < a.hidden_dim; ++i) sg.hidden[i] = sl.hidden[i] = 0.1 * rng.normal();
  const StepState g0 = sg, l0 = sl;

  using clock = std::chrono::steady_clock;
  const std::size_t warmup = std::max<std::size_t>(10, a.iters / 10);
  std::vector<double> tg, tl;
  tg.reserve(a.iters);
  tl.reserve(a.iters);
  double sink = 0.0;
  for (std::size_t i = 0; i < warmup + a.iters; ++i) {
    const auto t0 = clock::now();
    StepState ng = gru_step(gru, x, sg);
    const auto t1 = clock::now();
    StepState nl = lstm_step(lstm, x, sl);
    const auto t2 = clock::now();
    sink += ng.hidden[0] + nl.hidden[0];
    // Restart from the initial state so every timed call does identical work.
    sg = g0;
    sl = l0;
    if (i >= warmup) {
      tg.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
      tl.push_back(std::chrono::duration<double, std::nano>(t2 - t1).count());
    }
  }
  const double mg = median_of(tg), ml = median_of(tl);
  const std::size_t pg = gru.parameter_count(), pl = lstm.parameter_count();
  nlohmann::json j{{"embed_dim", a.embed_dim},
                   {"hidden_dim", a.hidden_dim},
                   {"iters", a.iters},
                   {"warmup", warmup},
                   {"gru_params", pg},
                   {"lstm_params", pl},
                   {"param_ratio", static_cast<double>(pg) / static_cast<double>(pl)},
                   {"param_ratio_is_three_quarters", 4 * pg == 3 * pl},
                   {"gru_median_ns", mg},
                   {"lstm_median_ns", ml},
                   {"gru_faster", mg < ml},
                   {"margin", ml > 0 ? (ml - mg) / ml : 0.0},
                   {"checksum", sink}};
  if (a.iters < 100) j["warning"] = "fewer than 100 iterations; timings are noisy";
  return j;
}

inline int bench_cells_cmd(const BenchArgs& a, std::ostream& log) {
  const nlohmann::json j = bench_cells(a);
  if (j.contains("warning")) std::cerr << "warning: " << j["warning"].get<std::string>() << "\n";
  const std::string text = j.dump(1) + "\n";
  if (!a.out.empty()) write_text(a.out, text);
  log << text;
  return 0;
}

// ---------------------------------------------------------------------------
// grad-check

struct GradCheckArgs {
  ModelDims dims = tiny_dims();
  std::uint64_t seed = 3;
  std::vector<PoolingTag> poolings{PoolingTag::mean, PoolingTag::max, PoolingTag::last};
  std::string corrupt_op;  // test hook: scale this op's backward rule
  double tolerance = 1e-4;
  std::string out;
};

inline int grad_check_cmd(const GradCheckArgs& a, std::ostream& log) {
  struct HookGuard {
    explicit HookGuard(const std::string& op) { debug_hooks::corrupted_op() = op; }
    ~HookGuard() { debug_hooks::corrupted_op().clear(); }
  } guard(a.corrupt_op);

  nlohmann::json report{{"seed", a.seed}, {"tolerance", a.tolerance}};
  if (!a.corrupt_op.empty()) report["corrupted_op"] = a.corrupt_op;
  bool ok = true;
  nlohmann::json runs = nlohmann::json::array();
  for (PoolingTag tag : a.poolings) {
    ModelGradCheckOptions o;
    o.dims = a.dims;
    o.dims.pooling = tag;
    o.seed = a.seed;
    o.check.tolerance = a.tolerance;
    const GradCheckReport r = model_grad_check(o);
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& p : r.params) {
      tensors.push_back({{"name", p.name},
                         {"max_rel_error", p.max_rel_error},
                         {"elements", p.elements_checked},
                         {"passed", p.passed}});
      if (!p.passed)
        log << "FAIL [" << to_string(tag) << "] " << p.name << " max rel err " << p.max_rel_error << " (analytic "
            << p.analytic_at_worst << ", numeric " << p.numeric_at_worst << ")\n";
    }
    ok = ok && r.passed();
    runs.push_back({{"pooling", to_string(tag)}, {"passed", r.passed()}, {"max_rel_error", r.max_rel_error()},
                    {"tensors", tensors}});
  }
  report["runs"] = runs;
  if (!ok) {
    // Localize: which primitive rules disagree with finite differences?
    nlohmann::json bad = nlohmann::json::array();
    for (const auto& c : op_self_test())
      if (!c.passed) bad.push_back({{"op", c.op}, {"max_rel_error", c.max_rel_error}});
    report["failing_ops"] = bad;
    for (const auto& b : bad) log << "FAIL op " << b["op"].get<std::string>() << "\n";
  }
  report["passed"] = ok;
  const std::string text = report.dump(1) + "\n";
  if (!a.out.empty()) write_text(a.out, text);
  log << (ok ? "grad-check passed" : "grad-check FAILED") << " (max rel err over " << a.poolings.size()
      << " pooling runs)\n";
  return ok ? 0 : 1;
}

}  // namespace capforge::cli
