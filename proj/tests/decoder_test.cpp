#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "capforge/model/decoder.hpp"
#include "capforge/numerics/grad_check.hpp"

using namespace capforge;

namespace {

ModelDims dims(std::size_t vocab, std::size_t embed, std::size_t hidden, CellKind cell = CellKind::gru) {
  ModelDims d;
  d.vocab_size = vocab;
  d.embed_dim = embed;
  d.hidden_dim = hidden;
  d.feature_dim = 6;
  d.attribute_dim = 4;
  d.cell = cell;
  return d;
}

std::vector<double> randn(Rng& rng, std::size_t n, double sd = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = sd * rng.normal();
  return v;
}

void randomize_biases(DecoderParams& p, Rng& rng) {
  for (Parameter* q : p.parameters())
    if (q->value.rank() == 1)
      for (double& v : q->value.storage()) v = 0.3 * rng.normal();
}

void zero_all(DecoderParams& p) {
  for (Parameter* q : p.parameters()) q->value.fill(0.0);
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Row `i` of gate `g` applied to [x, h], written out index by index.
double gate_row(const RecurrentCell& c, std::size_t g, std::size_t i, const std::vector<double>& x,
                const std::vector<double>& h) {
  const Tensor& w = c.weights[g].value;
  const std::size_t cols = x.size() + h.size();
  double s = c.biases[g].value[i];
  for (std::size_t j = 0; j < x.size(); ++j) s += w[i * cols + j] * x[j];
  for (std::size_t j = 0; j < h.size(); ++j) s += w[i * cols + x.size() + j] * h[j];
  return s;
}

std::vector<double> gru_oracle(const RecurrentCell& c, const std::vector<double>& x, const std::vector<double>& h) {
  const std::size_t n = h.size();
  std::vector<double> rh(n), out(n);
  for (std::size_t i = 0; i < n; ++i) rh[i] = sig(gate_row(c, 1, i, x, h)) * h[i];
  for (std::size_t i = 0; i < n; ++i) {
    const double z = sig(gate_row(c, 0, i, x, h));
    const double cand = std::tanh(gate_row(c, 2, i, x, rh));
    out[i] = (1 - z) * h[i] + z * cand;
  }
  return out;
}

StepState lstm_oracle(const RecurrentCell& c, const std::vector<double>& x, const StepState& s) {
  const std::size_t n = s.hidden.size();
  StepState out{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const double i = sig(gate_row(c, 0, k, x, s.hidden));
    const double f = sig(gate_row(c, 1, k, x, s.hidden));
    const double o = sig(gate_row(c, 2, k, x, s.hidden));
    const double g = std::tanh(gate_row(c, 3, k, x, s.hidden));
    out.cell[k] = f * s.cell[k] + i * g;
    out.hidden[k] = o * std::tanh(out.cell[k]);
  }
  return out;
}

double log_softmax_at(const std::vector<double>& logits, std::size_t k) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double z = 0;
  for (double v : logits) z += std::exp(v - m);
  return logits[k] - m - std::log(z);
}

EncodedImage random_encoding(Rng& rng, const ModelDims& d) {
  EncodedImage e{randn(rng, d.feature_dim), {}};
  for (std::size_t i = 0; i < d.attribute_dim; ++i) e.attributes.push_back(rng.uniform(0.05, 0.95));
  return e;
}

}  // namespace

TEST(GruStep, MatchesScalarLoopOracle) {
  Rng rng(1);
  const ModelDims d = dims(9, 5, 7);
  DecoderParams p = DecoderParams::init(d, rng);
  randomize_biases(p, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = randn(rng, 5), h = randn(rng, 7, 0.5);
    const StepState got = gru_step(p.cell, x, {h, {}});
    const auto want = gru_oracle(p.cell, x, h);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(got.hidden[i], want[i], 1e-12);
    // Taped form agrees with the tape-free one.
    Tape t;
    TracedState ts = gru_step(t, p.cell, t.constant(Tensor::vector(x)), {t.constant(Tensor::vector(h)), {}});
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(t.value(ts.hidden)[i], want[i], 1e-12);
  }
}

TEST(LstmStep, MatchesScalarLoopOracle) {
  Rng rng(2);
  const ModelDims d = dims(9, 5, 7, CellKind::lstm);
  DecoderParams p = DecoderParams::init(d, rng);
  randomize_biases(p, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = randn(rng, 5);
    const StepState s{randn(rng, 7, 0.5), randn(rng, 7, 0.5)};
    const StepState got = lstm_step(p.cell, x, s);
    const StepState want = lstm_oracle(p.cell, x, s);
    for (std::size_t i = 0; i < 7; ++i) {
      EXPECT_NEAR(got.hidden[i], want.hidden[i], 1e-12);
      EXPECT_NEAR(got.cell[i], want.cell[i], 1e-12);
    }
    Tape t;
    TracedState ts = lstm_step(t, p.cell, t.constant(Tensor::vector(x)),
                               {t.constant(Tensor::vector(s.hidden)), t.constant(Tensor::vector(s.cell))});
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(t.value(ts.hidden)[i], want.hidden[i], 1e-12);
  }
}

TEST(GruStep, ZeroWeightsHalveTheState) {
  Rng rng(3);
  DecoderParams p = DecoderParams::init(dims(9, 5, 7), rng);
  zero_all(p);
  const auto x = randn(rng, 5), h = randn(rng, 7);
  const StepState s = gru_step(p.cell, x, {h, {}});
  for (std::size_t i = 0; i < 7; ++i) EXPECT_DOUBLE_EQ(s.hidden[i], 0.5 * h[i]);
  const StepState z = gru_step(p.cell, std::vector<double>(5), StepState::zeros(7));
  for (double v : z.hidden) EXPECT_EQ(v, 0.0);
}

TEST(LstmStep, ZeroWeightsClosedForm) {
  Rng rng(4);
  DecoderParams p = DecoderParams::init(dims(9, 5, 7, CellKind::lstm), rng);
  zero_all(p);
  const StepState s{randn(rng, 7), randn(rng, 7)};
  const StepState out = lstm_step(p.cell, randn(rng, 5), s);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_DOUBLE_EQ(out.cell[i], 0.5 * s.cell[i]);
    EXPECT_DOUBLE_EQ(out.hidden[i], 0.5 * std::tanh(0.5 * s.cell[i]));
  }
  const StepState z = lstm_step(p.cell, std::vector<double>(5), StepState::zeros(7));
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(z.hidden[i], 0.0);
    EXPECT_EQ(z.cell[i], 0.0);
  }
}

TEST(CellSteps, ShapeMismatchIsAnError) {
  Rng rng(5);
  const DecoderParams g = DecoderParams::init(dims(9, 5, 7), rng);
  const DecoderParams l = DecoderParams::init(dims(9, 5, 7, CellKind::lstm), rng);
  EXPECT_THROW(gru_step(g.cell, std::vector<double>(4), StepState::zeros(7)), ContractViolation);
  EXPECT_THROW(gru_step(g.cell, std::vector<double>(5), StepState::zeros(6)), ContractViolation);
  EXPECT_THROW(lstm_step(l.cell, std::vector<double>(5), {std::vector<double>(7), {}}), ContractViolation);
  EXPECT_THROW(lstm_step(g.cell, std::vector<double>(5), StepState::zeros(7)), ContractViolation);
}

TEST(RecurrentCell, GruUsesThreeQuartersOfLstmParameters) {
  for (auto [e, h] : {std::pair<std::size_t, std::size_t>{32, 64}, {256, 256}, {5, 3}}) {
    Rng rng(6);
    const auto gru = RecurrentCell::init(CellKind::gru, e, h, rng);
    const auto lstm = RecurrentCell::init(CellKind::lstm, e, h, rng);
    EXPECT_EQ(gru.parameter_count(), 3 * (e + h + 1) * h);
    EXPECT_EQ(lstm.parameter_count(), 4 * (e + h + 1) * h);
    EXPECT_EQ(4 * gru.parameter_count(), 3 * lstm.parameter_count());
  }
}

TEST(StepLogits, ShapeAndUniformAtZero) {
  Rng rng(7);
  DecoderParams p = DecoderParams::init(dims(5, 4, 6), rng);
  p.output_bias.value.fill(0.0);
  const auto logits = step_logits(p, std::vector<double>(6));
  ASSERT_EQ(logits.size(), 5u);
  for (double v : logits) EXPECT_EQ(v, logits[0]);
  EXPECT_THROW(step_logits(p, std::vector<double>(5)), ContractViolation);
}

TEST(StepLogits, BothMatrixOrderingsAgree) {
  Rng rng(8);
  DecoderParams p = DecoderParams::init(dims(11, 4, 6), rng);
  randomize_biases(p, rng);
  const std::size_t V = 11, E = 4, H = 6;
  const auto& emb = p.embedding.value;
  const auto& v = p.output_weight.value;
  const auto& b = p.output_bias.value;
  for (int trial = 0; trial < 5; ++trial) {
    const auto h = randn(rng, H);
    // (E v) h + E b: multiply the matrices first.
    std::vector<double> want(V, 0.0);
    for (std::size_t w = 0; w < V; ++w) {
      for (std::size_t j = 0; j < H; ++j) {
        double ev = 0;
        for (std::size_t k = 0; k < E; ++k) ev += emb[w * E + k] * v[k * H + j];
        want[w] += ev * h[j];
      }
      for (std::size_t k = 0; k < E; ++k) want[w] += emb[w * E + k] * b[k];
    }
    const auto got = step_logits(p, h);
    for (std::size_t w = 0; w < V; ++w) EXPECT_NEAR(got[w], want[w], 1e-12);
  }
}

TEST(DecodeTeacherForced, ZeroModelIsUniform) {
  Rng rng(9);
  const ModelDims d = dims(7, 4, 5);
  DecoderParams p = DecoderParams::init(d, rng);
  zero_all(p);
  const TokenSequence s{{Vocabulary::kBos, 4, 5, 6, 4, Vocabulary::kEos}};
  const DecodeResult r = decode_teacher_forced(p, random_encoding(rng, d), s);
  EXPECT_NEAR(r.log_likelihood, 5 * std::log(1.0 / 7), 1e-12);
  EXPECT_EQ(r.trace.size(), 5u);
}

TEST(DecodeTeacherForced, RejectsMalformedSequences) {
  Rng rng(10);
  const ModelDims d = dims(7, 4, 5);
  const DecoderParams p = DecoderParams::init(d, rng);
  const EncodedImage e = random_encoding(rng, d);
  EXPECT_THROW(decode_teacher_forced(p, e, TokenSequence{{Vocabulary::kBos}}), ContractViolation);
  EXPECT_THROW(decode_teacher_forced(p, e, TokenSequence{{4, Vocabulary::kEos}}), ContractViolation);
  EXPECT_THROW(decode_teacher_forced(p, e, TokenSequence{{Vocabulary::kBos, 4}}), ContractViolation);
}

// Per-step recomputation with the tape-free primitives: A, then F, then words.
TEST(DecodeTeacherForced, EqualsPerStepRecomputation) {
  for (CellKind kind : {CellKind::gru, CellKind::lstm}) {
    Rng rng(11);
    const ModelDims d = dims(9, 4, 6, kind);
    DecoderParams p = DecoderParams::init(d, rng);
    randomize_biases(p, rng);
    const EncodedImage e = random_encoding(rng, d);
    const std::vector<TokenId> ids{Vocabulary::kBos, 4, 7, 8, 5, 4, 6, 7, Vocabulary::kEos};

    auto project = [](const Parameter& w, const Parameter& b, const std::vector<double>& x) {
      const std::size_t rows = w.value.dim(0), cols = w.value.dim(1);
      std::vector<double> y(rows);
      for (std::size_t i = 0; i < rows; ++i) {
        y[i] = b.value[i];
        for (std::size_t j = 0; j < cols; ++j) y[i] += w.value[i * cols + j] * x[j];
      }
      return y;
    };
    StepState s = StepState::zeros(6);
    s = cell_step(p.cell, project(p.attribute_in_weight, p.attribute_in_bias, e.attributes), s);
    s = cell_step(p.cell, project(p.feature_in_weight, p.feature_in_bias, e.feature), s);
    double ll = 0, prob = 1;
    std::vector<std::vector<double>> trace;
    for (std::size_t k = 0; k + 1 < ids.size(); ++k) {
      const auto row = embedding_row(p, ids[k]);
      s = cell_step(p.cell, std::vector<double>(row.begin(), row.end()), s);
      trace.push_back(s.hidden);
      const double lp = log_softmax_at(step_logits(p, s.hidden), ids[k + 1]);
      ll += lp;
      prob *= std::exp(lp);
    }
    const DecodeResult r = decode_teacher_forced(p, e, TokenSequence{ids});
    EXPECT_NEAR(r.log_likelihood, ll, 1e-12);
    EXPECT_NEAR(std::exp(r.log_likelihood), prob, 1e-10);
    ASSERT_EQ(r.trace.size(), trace.size());
    for (std::size_t k = 0; k < trace.size(); ++k)
      for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(r.trace[k][i], trace[k][i], 1e-12);
    // The incremental inference path starts from the same injected state.
    const StepState inj = inject_image(p, e);
    StepState s2 = StepState::zeros(6);
    s2 = cell_step(p.cell, project(p.attribute_in_weight, p.attribute_in_bias, e.attributes), s2);
    s2 = cell_step(p.cell, project(p.feature_in_weight, p.feature_in_bias, e.feature), s2);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(inj.hidden[i], s2.hidden[i], 1e-12);
  }
}

TEST(DecodeTeacherForced, AllDecoderParametersPassGradCheck) {
  for (CellKind kind : {CellKind::gru, CellKind::lstm}) {
    Rng rng(12);
    const ModelDims d = dims(7, 4, 5, kind);
    DecoderParams p = DecoderParams::init(d, rng);
    randomize_biases(p, rng);
    const EncodedImage e = random_encoding(rng, d);
    const std::vector<TokenId> ids{Vocabulary::kBos, 4, 6, 5, 4, Vocabulary::kEos};
    auto params = p.parameters();
    ScalarObjective f = [&](bool with_grad) {
      Tape t;
      TracedDecode dec = decode_teacher_forced(t, p, t.constant(Tensor::vector(e.feature)),
                                               t.constant(Tensor::vector(e.attributes)), ids);
      if (with_grad) {
        for (Parameter* q : params) q->zero_grad();
        t.backward(dec.log_likelihood);
        t.accumulate_param_grads(params);
      }
      return t.value(dec.log_likelihood).item();
    };
    const GradCheckReport r = grad_check(f, params);
    for (const auto& pc : r.params)
      EXPECT_TRUE(pc.passed) << to_string(kind) << " " << pc.name << " rel err " << pc.max_rel_error;
  }
}
