// capforge: synthetic-scene captioning pipeline.
//
//   capforge gen-data --seed 7 --n 64 --out scenes.jsonl
//   capforge train --config run.json
//   capforge caption --checkpoint model.ckpt --dataset scenes.jsonl --out captions.jsonl
//   capforge eval --candidates captions.jsonl --dataset scenes.jsonl
//   capforge sweep --checkpoint model.ckpt --dataset scenes.jsonl --beams 1,2,3,5 --out sweep.json
//   capforge bench-cells --embed 256 --hidden 256 --iters 10000
//   capforge grad-check --seed 3

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "capforge/cli/commands.hpp"

using namespace capforge;

namespace {

void add_dims_options(CLI::App* cmd, ModelDims& d) {
  cmd->add_option("--grid", d.grid, "image side length");
  cmd->add_option("--conv1", d.conv1_channels, "first conv layer channels");
  cmd->add_option("--conv2", d.conv2_channels, "second conv layer channels");
  cmd->add_option("--feature-dim", d.feature_dim, "encoder feature size");
  cmd->add_option("--embed", d.embed_dim, "word embedding size");
  cmd->add_option("--hidden", d.hidden_dim, "decoder hidden size");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capforge: CNN-GRU captioning with semantic reconstruction"};
  app.require_subcommand(1);

  cli::GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a seeded synthetic scene corpus as JSONL");
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--n", gen.n, "number of samples")->required();
  gen_cmd->add_option("--out", gen.out, "output JSONL path")->required();
  gen_cmd->add_option("--grid", gen.corpus.grid, "image side length");
  gen_cmd->add_option("--max-captions", gen.corpus.max_captions, "captions per image (1 or 2)");
  gen_cmd->add_option("--max-objects", gen.corpus.max_objects, "objects per scene upper bound");

  std::string config_path;
  double split = -1.0;
  auto* train_cmd = app.add_subcommand("train", "train a model from a flat JSON run config");
  train_cmd->add_option("--config", config_path, "run config JSON")->required();
  train_cmd->add_option("--split", split, "validation fraction (overrides val_split)");

  cli::CaptionArgs cap;
  auto* cap_cmd = app.add_subcommand("caption", "caption every image of a dataset");
  cap_cmd->add_option("--checkpoint", cap.checkpoint)->required();
  cap_cmd->add_option("--dataset", cap.dataset)->required();
  cap_cmd->add_option("--out", cap.out, "captions JSONL path")->required();
  cap_cmd->add_option("--beam", cap.opts.beam_width, "beam width")->capture_default_str();
  cap_cmd->add_option("--lambda-test", cap.opts.lambda_test, "reconstruction weight when rescoring")
      ->capture_default_str();
  cap_cmd->add_option("--max-len", cap.opts.max_len, "max tokens including BOS")->capture_default_str();

  std::string cand_path, eval_dataset, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "score a captions file against dataset references");
  eval_cmd->add_option("--candidates", cand_path)->required();
  eval_cmd->add_option("--dataset", eval_dataset)->required();
  eval_cmd->add_option("--out", eval_out, "report JSON path");

  cli::SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "metrics over a grid of beam widths and lambda_test values");
  sweep_cmd->add_option("--checkpoint", sw.checkpoint)->required();
  sweep_cmd->add_option("--dataset", sw.dataset)->required();
  sweep_cmd->add_option("--out", sw.out, "table path (.json or .csv)")->required();
  sweep_cmd->add_option("--beams", sw.beams, "beam widths")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--lambdas", sw.lambdas, "lambda_test values")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--max-len", sw.max_len)->capture_default_str();

  cli::BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench-cells", "GRU vs LSTM step timing and parameter counts");
  bench_cmd->add_option("--embed", bench.embed_dim)->capture_default_str();
  bench_cmd->add_option("--hidden", bench.hidden_dim)->capture_default_str();
  bench_cmd->add_option("--iters", bench.iters)->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed);
  bench_cmd->add_option("--out", bench.out, "report JSON path");

  cli::GradCheckArgs gc;
  std::vector<std::string> poolings;
  auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference check of every model parameter tensor");
  gc_cmd->add_option("--seed", gc.seed)->capture_default_str();
  gc_cmd->add_option("--pooling", poolings, "pooling tags to check (default: all)")->delimiter(',');
  gc_cmd->add_option("--corrupt-op", gc.corrupt_op, "test hook: break this op's gradient rule");
  gc_cmd->add_option("--out", gc.out, "report JSON path");
  add_dims_options(gc_cmd, gc.dims);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return cli::gen_data(gen, std::cout);
    if (*train_cmd) {
      RunConfig rc = load_run_config(config_path);
      if (split >= 0.0) {
        nlohmann::json j = run_config_to_json(rc);
        j["val_split"] = split;
        j.erase("val_dataset");
        rc = run_config_from_json(j);
      }
      return cli::train(rc, std::cout);
    }
    if (*cap_cmd) return cli::caption(cap, std::cerr);
    if (*eval_cmd) return cli::eval(cand_path, eval_dataset, eval_out, std::cout);
    if (*sweep_cmd) return cli::sweep(sw, std::cout);
    if (*bench_cmd) return cli::bench_cells_cmd(bench, std::cout);
    if (*gc_cmd) {
      if (!poolings.empty()) {
        gc.poolings.clear();
        for (const auto& p : poolings) gc.poolings.push_back(parse_pooling(p));
      }
      return cli::grad_check_cmd(gc, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
