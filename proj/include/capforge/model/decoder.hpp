#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "capforge/data/vocabulary.hpp"
#include "capforge/model/config.hpp"
#include "capforge/model/encoder.hpp"
#include "capforge/numerics/kernels.hpp"
#include "capforge/numerics/ops.hpp"
#include "capforge/util/rng.hpp"

namespace capforge {

/// Recurrent cell weights. Each gate has a [hidden x (input + hidden)] matrix
/// over the concatenation [x, h] plus a bias.
///   GRU gates:  z (update), r (reset), n (candidate)
///   LSTM gates: i, f, o, g
struct RecurrentCell {
  CellKind kind = CellKind::gru;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::vector<Parameter> weights;
  std::vector<Parameter> biases;

  static std::size_t gate_count(CellKind k) { return k == CellKind::gru ? 3 : 4; }

  static RecurrentCell init(CellKind kind, std::size_t input_dim, std::size_t hidden_dim, Rng& rng,
                            const std::string& prefix = "decoder.cell") {
    static const char* gru_names[] = {"z", "r", "n"};
    static const char* lstm_names[] = {"i", "f", "o", "g"};
    RecurrentCell c;
    c.kind = kind;
    c.input_dim = input_dim;
    c.hidden_dim = hidden_dim;
    const double sd = 1.0 / std::sqrt(static_cast<double>(input_dim + hidden_dim));
    for (std::size_t g = 0; g < gate_count(kind); ++g) {
      const std::string gate = kind == CellKind::gru ? gru_names[g] : lstm_names[g];
      Tensor w({hidden_dim, input_dim + hidden_dim});
      for (double& v : w.storage()) v = sd * rng.normal();
      c.weights.emplace_back(prefix + "." + gate + ".weight", std::move(w));
      c.biases.emplace_back(prefix + "." + gate + ".bias", Tensor({hidden_dim}));
    }
    return c;
  }

  /// Learnable scalars in the gates: gates * (input + hidden + 1) * hidden.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.value.size();
    for (const auto& b : biases) n += b.value.size();
    return n;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (std::size_t g = 0; g < weights.size(); ++g) {
      out.push_back(&weights[g]);
      out.push_back(&biases[g]);
    }
    return out;
  }
};

/// Recurrent state; `cell` is only used by the LSTM.
struct StepState {
  std::vector<double> hidden;
  std::vector<double> cell;

  static StepState zeros(std::size_t hidden_dim) { return {std::vector<double>(hidden_dim, 0.0), std::vector<double>(hidden_dim, 0.0)}; }
};

/// Word embeddings E (also the tied output layer), the A/F injection
/// projections, the recurrent cell and the output projection v, b so that
/// logits = E (v h + b).
struct DecoderParams {
  Parameter embedding;  // [vocab x d_e]
  Parameter attribute_in_weight, attribute_in_bias;
  Parameter feature_in_weight, feature_in_bias;
  RecurrentCell cell;
  Parameter output_weight, output_bias;  // v [d_e x d_h], b [d_e]

  static DecoderParams init(const ModelDims& d, Rng& rng) {
    auto gauss = [&](Shape s, double sd) {
      Tensor t(std::move(s));
      for (double& v : t.storage()) v = sd * rng.normal();
      return t;
    };
    DecoderParams p;
    p.embedding = {"decoder.embedding", gauss({d.vocab_size, d.embed_dim}, 0.1)};
    p.attribute_in_weight = {"decoder.attribute_in.weight",
                             gauss({d.embed_dim, d.attribute_dim}, 1.0 / std::sqrt(double(d.attribute_dim)))};
    p.attribute_in_bias = {"decoder.attribute_in.bias", Tensor({d.embed_dim})};
    p.feature_in_weight = {"decoder.feature_in.weight",
                           gauss({d.embed_dim, d.feature_dim}, 1.0 / std::sqrt(double(d.feature_dim)))};
    p.feature_in_bias = {"decoder.feature_in.bias", Tensor({d.embed_dim})};
    p.cell = RecurrentCell::init(d.cell, d.embed_dim, d.hidden_dim, rng);
    p.output_weight = {"decoder.output.weight", gauss({d.embed_dim, d.hidden_dim}, 1.0 / std::sqrt(double(d.hidden_dim)))};
    p.output_bias = {"decoder.output.bias", Tensor({d.embed_dim})};
    return p;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out{&embedding, &attribute_in_weight, &attribute_in_bias, &feature_in_weight,
                                &feature_in_bias};
    for (Parameter* p : cell.parameters()) out.push_back(p);
    out.push_back(&output_weight);
    out.push_back(&output_bias);
    return out;
  }

  std::size_t vocab_size() const { return embedding.value.dim(0); }
  std::size_t embed_dim() const { return embedding.value.dim(1); }
  std::size_t hidden_dim() const { return cell.hidden_dim; }
};

// ---------------------------------------------------------------------------
// Tape-free cell steps (inference and benchmarks).

inline StepState gru_step(const RecurrentCell& c, std::span<const double> x, const StepState& s) {
  require(c.kind == CellKind::gru, "gru_step on a non-GRU cell");
  require(x.size() == c.input_dim && s.hidden.size() == c.hidden_dim, "gru_step: shape mismatch");
  const std::size_t n = c.hidden_dim;
  std::vector<double> z(n), r(n), rh(n), cand(n);
  kernels::matvec2(c.weights[0].value.data(), n, x, s.hidden, c.biases[0].value.data(), z);
  kernels::matvec2(c.weights[1].value.data(), n, x, s.hidden, c.biases[1].value.data(), r);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = kernels::sigmoid(z[i]);
    rh[i] = kernels::sigmoid(r[i]) * s.hidden[i];
  }
  kernels::matvec2(c.weights[2].value.data(), n, x, rh, c.biases[2].value.data(), cand);
  StepState out;
  out.hidden.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.hidden[i] = (1.0 - z[i]) * s.hidden[i] + z[i] * std::tanh(cand[i]);
  return out;
}

inline StepState lstm_step(const RecurrentCell& c, std::span<const double> x, const StepState& s) {
  require(c.kind == CellKind::lstm, "lstm_step on a non-LSTM cell");
  require(x.size() == c.input_dim && s.hidden.size() == c.hidden_dim && s.cell.size() == c.hidden_dim,
          "lstm_step: shape mismatch");
  const std::size_t n = c.hidden_dim;
  std::vector<double> i_g(n), f_g(n), o_g(n), g_g(n);
  kernels::matvec2(c.weights[0].value.data(), n, x, s.hidden, c.biases[0].value.data(), i_g);
  kernels::matvec2(c.weights[1].value.data(), n, x, s.hidden, c.biases[1].value.data(), f_g);
  kernels::matvec2(c.weights[2].value.data(), n, x, s.hidden, c.biases[2].value.data(), o_g);
  kernels::matvec2(c.weights[3].value.data(), n, x, s.hidden, c.biases[3].value.data(), g_g);
  StepState out{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.cell[k] = kernels::sigmoid(f_g[k]) * s.cell[k] + kernels::sigmoid(i_g[k]) * std::tanh(g_g[k]);
    out.hidden[k] = kernels::sigmoid(o_g[k]) * std::tanh(out.cell[k]);
  }
  return out;
}

inline StepState cell_step(const RecurrentCell& c, std::span<const double> x, const StepState& s) {
  return c.kind == CellKind::gru ? gru_step(c, x, s) : lstm_step(c, x, s);
}

/// logits = E (v h + b), one entry per vocabulary id.
inline std::vector<double> step_logits(const DecoderParams& p, std::span<const double> hidden) {
  require(hidden.size() == p.hidden_dim(), "step_logits: hidden length mismatch");
  std::vector<double> u(p.embed_dim()), logits(p.vocab_size());
  kernels::matvec(p.output_weight.value.data(), p.embed_dim(), p.hidden_dim(), hidden, p.output_bias.value.data(), u);
  kernels::matvec(p.embedding.value.data(), p.vocab_size(), p.embed_dim(), u, {}, logits);
  return logits;
}

inline std::span<const double> embedding_row(const DecoderParams& p, TokenId id) {
  require(id < p.vocab_size(), "token id out of range");
  return p.embedding.value.data().subspan(id * p.embed_dim(), p.embed_dim());
}

/// State after the two injection steps (A, then F) from a zero state.
inline StepState inject_image(const DecoderParams& p, const EncodedImage& enc) {
  require(enc.attributes.size() == p.attribute_in_weight.value.dim(1), "inject: attribute length mismatch");
  require(enc.feature.size() == p.feature_in_weight.value.dim(1), "inject: feature length mismatch");
  std::vector<double> xa(p.embed_dim()), xf(p.embed_dim());
  kernels::matvec(p.attribute_in_weight.value.data(), p.embed_dim(), enc.attributes.size(), enc.attributes,
                  p.attribute_in_bias.value.data(), xa);
  kernels::matvec(p.feature_in_weight.value.data(), p.embed_dim(), enc.feature.size(), enc.feature,
                  p.feature_in_bias.value.data(), xf);
  StepState s = cell_step(p.cell, xa, StepState::zeros(p.hidden_dim()));
  return cell_step(p.cell, xf, s);
}

// ---------------------------------------------------------------------------
// Traced forms.

struct TracedState {
  Var hidden;
  Var cell;  // LSTM only
};

inline TracedState gru_step(Tape& t, const RecurrentCell& c, Var x, TracedState s, bool track = true) {
  require(c.kind == CellKind::gru, "gru_step on a non-GRU cell");
  Var xh = ops::concat(t, {x, s.hidden});
  Var z = ops::sigmoid(t, ops::matvec(t, t.param(c.weights[0], track), xh, t.param(c.biases[0], track)));
  Var r = ops::sigmoid(t, ops::matvec(t, t.param(c.weights[1], track), xh, t.param(c.biases[1], track)));
  Var xrh = ops::concat(t, {x, ops::mul(t, r, s.hidden)});
  Var cand = ops::tanh(t, ops::matvec(t, t.param(c.weights[2], track), xrh, t.param(c.biases[2], track)));
  // h' = (1 - z) * h + z * cand
  Var keep = ops::mul(t, ops::affine(t, z, -1.0, 1.0), s.hidden);
  return {ops::add(t, keep, ops::mul(t, z, cand)), {}};
}

inline TracedState lstm_step(Tape& t, const RecurrentCell& c, Var x, TracedState s, bool track = true) {
  require(c.kind == CellKind::lstm, "lstm_step on a non-LSTM cell");
  Var xh = ops::concat(t, {x, s.hidden});
  auto gate = [&](std::size_t g) { return ops::matvec(t, t.param(c.weights[g], track), xh, t.param(c.biases[g], track)); };
  Var i = ops::sigmoid(t, gate(0));
  Var f = ops::sigmoid(t, gate(1));
  Var o = ops::sigmoid(t, gate(2));
  Var g = ops::tanh(t, gate(3));
  Var cell = ops::add(t, ops::mul(t, f, s.cell), ops::mul(t, i, g));
  return {ops::mul(t, o, ops::tanh(t, cell)), cell};
}

inline TracedState cell_step(Tape& t, const RecurrentCell& c, Var x, TracedState s, bool track = true) {
  return c.kind == CellKind::gru ? gru_step(t, c, x, s, track) : lstm_step(t, c, x, s, track);
}

inline Var step_logits(Tape& t, const DecoderParams& p, Var hidden, bool track = true) {
  Var u = ops::matvec(t, t.param(p.output_weight, track), hidden, t.param(p.output_bias, track));
  return ops::matvec(t, t.param(p.embedding, track), u);
}

struct TracedDecode {
  Var log_likelihood;         // scalar: sum over word steps of log P(w_t | ...)
  std::vector<Var> trace;     // hidden state that scored each word step
};

/// Teacher-forced pass: inject A, then F (no loss), then for each word step
/// feed the previous token and score the next one.
inline TracedDecode decode_teacher_forced(Tape& t, const DecoderParams& p, Var feature, Var attributes,
                                          const std::vector<TokenId>& ids, bool track = true) {
  if (ids.size() < 2) throw ContractViolation("decode_teacher_forced: sequence shorter than BOS+EOS");
  TracedState s{t.constant(Tensor({p.hidden_dim()})), t.constant(Tensor({p.hidden_dim()}))};
  Var xa = ops::matvec(t, t.param(p.attribute_in_weight, track), attributes, t.param(p.attribute_in_bias, track));
  s = cell_step(t, p.cell, xa, s, track);
  Var xf = ops::matvec(t, t.param(p.feature_in_weight, track), feature, t.param(p.feature_in_bias, track));
  s = cell_step(t, p.cell, xf, s, track);
  TracedDecode out;
  std::vector<Var> logits;
  std::vector<std::size_t> targets;
  Var table = t.param(p.embedding, track);
  for (std::size_t k = 0; k + 1 < ids.size(); ++k) {
    s = cell_step(t, p.cell, ops::gather_row(t, table, ids[k]), s, track);
    out.trace.push_back(s.hidden);
    logits.push_back(step_logits(t, p, s.hidden, track));
    targets.push_back(ids[k + 1]);
  }
  const double n = static_cast<double>(targets.size());
  Var nll = ops::softmax_cross_entropy(t, ops::stack(t, logits), std::move(targets));
  out.log_likelihood = ops::affine(t, nll, -n);
  return out;
}

using HiddenTrace = std::vector<std::vector<double>>;

struct DecodeResult {
  double log_likelihood = 0.0;
  HiddenTrace trace;
};

/// Scores every token after the leading BOS; `ids` need not end in EOS.
inline DecodeResult score_tokens(const DecoderParams& p, const EncodedImage& enc, const std::vector<TokenId>& ids) {
  Tape t;
  Var f = t.constant(Tensor::vector(enc.feature));
  Var a = t.constant(Tensor::vector(enc.attributes));
  TracedDecode d = decode_teacher_forced(t, p, f, a, ids, false);
  DecodeResult r;
  r.log_likelihood = t.value(d.log_likelihood).item();
  for (Var h : d.trace) r.trace.push_back(t.value(h).storage());
  return r;
}

/// log P(S | F, A) and the word-step hidden trace for a BOS...EOS sequence.
inline DecodeResult decode_teacher_forced(const DecoderParams& p, const EncodedImage& enc, const TokenSequence& s) {
  if (s.ids.size() < 2 || s.ids.front() != Vocabulary::kBos || s.ids.back() != Vocabulary::kEos)
    throw ContractViolation("decode_teacher_forced: sequence must begin with BOS and end with EOS");
  return score_tokens(p, enc, s.ids);
}

}  // namespace capforge
