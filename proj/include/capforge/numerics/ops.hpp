#pragma once

// Differentiable ops over Tape variables. Each op computes its output eagerly
// and records a local gradient rule when any input requires a gradient.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "capforge/numerics/kernels.hpp"
#include "capforge/numerics/tape.hpp"

namespace capforge::ops {

namespace detail {

inline void add_into(Tensor* dst, std::span<const double> src, double scale = 1.0) {
  if (!dst) return;
  auto& d = dst->storage();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * src[i];
}

inline void same_shape(const Tape& t, Var a, Var b, const char* op) {
  require(t.value(a).shape() == t.value(b).shape(),
          std::string(op) + ": shape mismatch " + shape_str(t.value(a).shape()) + " vs " +
              shape_str(t.value(b).shape()));
}

template <class F, class DF>
Var unary(Tape& t, Var a, const char* op, F f, DF df_from_out) {
  const Tensor& x = t.value(a);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return t.record(op, std::move(y), t.requires_grad(a), [a, df_from_out](Tape& tp, const Tensor& g) {
    Tensor* ga = tp.grad_sink(a);
    if (!ga) return;
    const Tensor& xv = tp.value(a);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df_from_out(xv[i]);
  });
}

}  // namespace detail

inline Var add(Tape& t, Var a, Var b) {
  detail::same_shape(t, a, b, "add");
  Tensor y = t.value(a);
  const Tensor& bv = t.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return t.record("add", std::move(y), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Tensor& g) {
                    detail::add_into(tp.grad_sink(a), g.data());
                    detail::add_into(tp.grad_sink(b), g.data());
                  });
}

inline Var sub(Tape& t, Var a, Var b) {
  detail::same_shape(t, a, b, "sub");
  Tensor y = t.value(a);
  const Tensor& bv = t.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return t.record("sub", std::move(y), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Tensor& g) {
                    detail::add_into(tp.grad_sink(a), g.data());
                    detail::add_into(tp.grad_sink(b), g.data(), -1.0);
                  });
}

/// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
  detail::same_shape(t, a, b, "mul");
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return t.record("mul", std::move(y), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Tensor& g) {
                    const Tensor& av = tp.value(a);
                    const Tensor& bv = tp.value(b);
                    if (Tensor* ga = tp.grad_sink(a))
                      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                    if (Tensor* gb = tp.grad_sink(b))
                      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                  });
}

/// scale * a + shift, elementwise.
inline Var affine(Tape& t, Var a, double scale, double shift = 0.0) {
  const Tensor& x = t.value(a);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = scale * x[i] + shift;
  return t.record("affine", std::move(y), t.requires_grad(a), [a, scale](Tape& tp, const Tensor& g) {
    detail::add_into(tp.grad_sink(a), g.data(), scale);
  });
}

inline Var sigmoid(Tape& t, Var a) {
  // d/dx sigmoid = s(1-s); recomputed from the input to keep the rule local.
  return detail::unary(t, a, "sigmoid", kernels::sigmoid, [](double x) {
    const double s = kernels::sigmoid(x);
    return s * (1.0 - s);
  });
}

inline Var tanh(Tape& t, Var a) {
  return detail::unary(t, a, "tanh", [](double x) { return std::tanh(x); }, [](double x) {
    const double th = std::tanh(x);
    return 1.0 - th * th;
  });
}

inline Var relu(Tape& t, Var a) {
  return detail::unary(t, a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                       [](double x) { return x > 0 ? 1.0 : 0.0; });
}

/// W[m x n] * x[n] + bias[m]. Pass an invalid Var to skip the bias.
inline Var matvec(Tape& t, Var w, Var x, Var bias = {}) {
  const Tensor& wv = t.value(w);
  const Tensor& xv = t.value(x);
  require(wv.rank() == 2 && wv.dim(1) == xv.size(),
          "matvec: weight " + shape_str(wv.shape()) + " incompatible with input of length " +
              std::to_string(xv.size()));
  const std::size_t m = wv.dim(0), n = wv.dim(1);
  Tensor y({m});
  std::span<const double> bspan;
  if (bias.valid()) {
    require(t.value(bias).size() == m, "matvec: bias length mismatch");
    bspan = t.value(bias).data();
  }
  kernels::matvec(wv.data(), m, n, xv.data(), bspan, y.data());
  const bool ng = t.requires_grad(w) || t.requires_grad(x) || (bias.valid() && t.requires_grad(bias));
  return t.record("matvec", std::move(y), ng, [w, x, bias, m, n](Tape& tp, const Tensor& g) {
    const Tensor& wv = tp.value(w);
    const Tensor& xv = tp.value(x);
    if (Tensor* gw = tp.grad_sink(w))
      for (std::size_t r = 0; r < m; ++r) {
        double* row = gw->data().data() + r * n;
        for (std::size_t c = 0; c < n; ++c) row[c] += g[r] * xv[c];
      }
    if (Tensor* gx = tp.grad_sink(x))
      for (std::size_t r = 0; r < m; ++r) {
        const double* row = wv.data().data() + r * n;
        for (std::size_t c = 0; c < n; ++c) (*gx)[c] += g[r] * row[c];
      }
    if (bias.valid()) detail::add_into(tp.grad_sink(bias), g.data());
  });
}

/// Flat concatenation of any-shaped inputs into a vector.
inline Var concat(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat of nothing");
  std::vector<double> out;
  bool ng = false;
  for (Var p : parts) {
    const auto d = t.value(p).data();
    out.insert(out.end(), d.begin(), d.end());
    ng = ng || t.requires_grad(p);
  }
  return t.record("concat", Tensor::vector(std::move(out)), ng, [parts](Tape& tp, const Tensor& g) {
    std::size_t off = 0;
    for (Var p : parts) {
      const std::size_t n = tp.value(p).size();
      detail::add_into(tp.grad_sink(p), g.data().subspan(off, n));
      off += n;
    }
  });
}

inline Var reshape(Tape& t, Var a, Shape s) {
  Tensor y = t.value(a).reshaped(std::move(s));
  return t.record("reshape", std::move(y), t.requires_grad(a),
                  [a](Tape& tp, const Tensor& g) { detail::add_into(tp.grad_sink(a), g.data()); });
}

/// Row `index` of a [rows x cols] matrix (embedding lookup).
inline Var gather_row(Tape& t, Var table, std::size_t index) {
  const Tensor& e = t.value(table);
  require(e.rank() == 2, "gather_row: table must be a matrix");
  require(index < e.dim(0), "gather_row: index " + std::to_string(index) + " out of range");
  const std::size_t cols = e.dim(1);
  std::vector<double> row(e.data().begin() + index * cols, e.data().begin() + (index + 1) * cols);
  return t.record("gather_row", Tensor::vector(std::move(row)), t.requires_grad(table),
                  [table, index, cols](Tape& tp, const Tensor& g) {
                    if (Tensor* ge = tp.grad_sink(table))
                      for (std::size_t c = 0; c < cols; ++c) (*ge)[index * cols + c] += g[c];
                  });
}

inline Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a).data()) s += v;
  return t.record("sum", Tensor::scalar(s), t.requires_grad(a), [a](Tape& tp, const Tensor& g) {
    if (Tensor* ga = tp.grad_sink(a))
      for (double& v : ga->storage()) v += g[0];
  });
}

inline Var mean(Tape& t, Var a) {
  const double n = static_cast<double>(t.value(a).size());
  return affine(t, sum(t, a), 1.0 / n);
}

inline Var dot(Tape& t, Var a, Var b) {
  detail::same_shape(t, a, b, "dot");
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return t.record("dot", Tensor::scalar(s), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Tensor& g) {
                    const Tensor& av = tp.value(a);
                    const Tensor& bv = tp.value(b);
                    if (Tensor* ga = tp.grad_sink(a))
                      for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += g[0] * bv[i];
                    if (Tensor* gb = tp.grad_sink(b))
                      for (std::size_t i = 0; i < av.size(); ++i) (*gb)[i] += g[0] * av[i];
                  });
}

/// Elementwise sum of equally shaped inputs.
inline Var add_n(Tape& t, const std::vector<Var>& xs) {
  require(!xs.empty(), "add_n of nothing");
  Tensor y = t.value(xs[0]);
  bool ng = t.requires_grad(xs[0]);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    detail::same_shape(t, xs[0], xs[k], "add_n");
    const Tensor& v = t.value(xs[k]);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += v[i];
    ng = ng || t.requires_grad(xs[k]);
  }
  return t.record("add_n", std::move(y), ng, [xs](Tape& tp, const Tensor& g) {
    for (Var x : xs) detail::add_into(tp.grad_sink(x), g.data());
  });
}

/// Elementwise mean over a list of equally shaped vectors.
inline Var mean_over(Tape& t, const std::vector<Var>& xs) {
  return affine(t, add_n(t, xs), 1.0 / static_cast<double>(xs.size()));
}

/// Elementwise max over a list of equally shaped vectors. The gradient goes to
/// the argmax; ties resolve to the lowest list index.
inline Var max_over(Tape& t, const std::vector<Var>& xs) {
  require(!xs.empty(), "max_over of nothing");
  const std::size_t n = t.value(xs[0]).size();
  Tensor y = t.value(xs[0]);
  std::vector<std::size_t> arg(n, 0);
  bool ng = t.requires_grad(xs[0]);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    detail::same_shape(t, xs[0], xs[k], "max_over");
    const Tensor& v = t.value(xs[k]);
    for (std::size_t i = 0; i < n; ++i)
      if (v[i] > y[i]) {
        y[i] = v[i];
        arg[i] = k;
      }
    ng = ng || t.requires_grad(xs[k]);
  }
  return t.record("max_over", std::move(y), ng, [xs, arg](Tape& tp, const Tensor& g) {
    for (std::size_t i = 0; i < arg.size(); ++i)
      if (Tensor* gx = tp.grad_sink(xs[arg[i]])) (*gx)[i] += g[i];
  });
}

/// Stack equally sized vectors into an [N x d] matrix.
inline Var stack(Tape& t, const std::vector<Var>& rows) {
  require(!rows.empty(), "stack of nothing");
  const std::size_t d = t.value(rows[0]).size();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  bool ng = false;
  for (Var r : rows) {
    require(t.value(r).size() == d, "stack: row length mismatch");
    const auto v = t.value(r).data();
    out.insert(out.end(), v.begin(), v.end());
    ng = ng || t.requires_grad(r);
  }
  return t.record("stack", Tensor({rows.size(), d}, std::move(out)), ng,
                  [rows, d](Tape& tp, const Tensor& g) {
                    for (std::size_t k = 0; k < rows.size(); ++k)
                      detail::add_into(tp.grad_sink(rows[k]), g.data().subspan(k * d, d));
                  });
}

/// Mean over rows of -log softmax(logits[row])[target[row]], max-subtracted.
inline Var softmax_cross_entropy(Tape& t, Var logits, std::vector<std::size_t> targets) {
  const Tensor& z = t.value(logits);
  require(z.rank() == 2, "softmax_cross_entropy: logits must be [batch x vocab]");
  const std::size_t b = z.dim(0), v = z.dim(1);
  require(targets.size() == b, "softmax_cross_entropy: one target per row required");
  for (auto tg : targets)
    if (tg >= v)
      throw ContractViolation("softmax_cross_entropy: target " + std::to_string(tg) +
                              " out of range for vocab " + std::to_string(v));
  Tensor probs({b, v});
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const auto row = z.data().subspan(r * v, v);
    const auto lp = kernels::log_softmax(row);
    loss -= lp[targets[r]];
    for (std::size_t c = 0; c < v; ++c) probs.at(r, c) = std::exp(lp[c]);
  }
  loss /= static_cast<double>(b);
  return t.record("softmax_cross_entropy", Tensor::scalar(loss), t.requires_grad(logits),
                  [logits, targets = std::move(targets), probs = std::move(probs), b, v](
                      Tape& tp, const Tensor& g) {
                    Tensor* gz = tp.grad_sink(logits);
                    if (!gz) return;
                    const double s = g[0] / static_cast<double>(b);
                    for (std::size_t r = 0; r < b; ++r)
                      for (std::size_t c = 0; c < v; ++c)
                        gz->at(r, c) += s * (probs.at(r, c) - (c == targets[r] ? 1.0 : 0.0));
                  });
}

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7].
/// Labels must be exactly 0 or 1.
inline Var binary_cross_entropy(Tape& t, Var probs, std::span<const double> labels) {
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  const Tensor& p = t.value(probs);
  require(p.size() == labels.size(), "binary_cross_entropy: length mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0)
      throw ContractViolation("binary_cross_entropy: label " + std::to_string(labels[i]) +
                              " is not in {0,1}");
    const double q = std::clamp(p[i], lo, hi);
    loss -= labels[i] == 1.0 ? std::log(q) : std::log(1.0 - q);
  }
  const double n = static_cast<double>(p.size());
  loss /= n;
  std::vector<double> y(labels.begin(), labels.end());
  return t.record("binary_cross_entropy", Tensor::scalar(loss), t.requires_grad(probs),
                  [probs, y = std::move(y), n](Tape& tp, const Tensor& g) {
                    Tensor* gp = tp.grad_sink(probs);
                    if (!gp) return;
                    const Tensor& p = tp.value(probs);
                    for (std::size_t i = 0; i < y.size(); ++i) {
                      if (p[i] < lo || p[i] > hi) continue;  // flat outside the clamp
                      const double d = y[i] == 1.0 ? -1.0 / p[i] : 1.0 / (1.0 - p[i]);
                      (*gp)[i] += g[0] * d / n;
                    }
                  });
}

/// 3x3 convolution, stride 1, zero "same" padding.
/// input [C_in x H x W], kernels [C_out x C_in x 3 x 3], bias [C_out].
inline Var conv3x3(Tape& t, Var input, Var kernels, Var bias) {
  const Tensor& x = t.value(input);
  const Tensor& k = t.value(kernels);
  require(x.rank() == 3 && k.rank() == 4 && k.dim(1) == x.dim(0) && k.dim(2) == 3 && k.dim(3) == 3,
          "conv3x3: input " + shape_str(x.shape()) + " incompatible with kernels " + shape_str(k.shape()));
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2), co = k.dim(0);
  require(t.value(bias).size() == co, "conv3x3: bias length mismatch");
  const Tensor& bv = t.value(bias);
  Tensor y({co, h, w});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        double acc = bv[o];
        for (std::size_t i = 0; i < ci; ++i)
          for (std::size_t dr = 0; dr < 3; ++dr) {
            const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + dr) - 1;
            if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t dc = 0; dc < 3; ++dc) {
              const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + dc) - 1;
              if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += k[((o * ci + i) * 3 + dr) * 3 + dc] * x[(i * h + rr) * w + cc];
            }
          }
        y[(o * h + r) * w + c] = acc;
      }
  const bool ng = t.requires_grad(input) || t.requires_grad(kernels) || t.requires_grad(bias);
  return t.record("conv3x3", std::move(y), ng, [input, kernels, bias, ci, h, w, co](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(input);
    const Tensor& k = tp.value(kernels);
    Tensor* gx = tp.grad_sink(input);
    Tensor* gk = tp.grad_sink(kernels);
    Tensor* gb = tp.grad_sink(bias);
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const double go = g[(o * h + r) * w + c];
          if (go == 0.0) continue;
          if (gb) (*gb)[o] += go;
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t dr = 0; dr < 3; ++dr) {
              const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + dr) - 1;
              if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t dc = 0; dc < 3; ++dc) {
                const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + dc) - 1;
                if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t ki = ((o * ci + i) * 3 + dr) * 3 + dc;
                const std::size_t xi = (i * h + rr) * w + cc;
                if (gk) (*gk)[ki] += go * x[xi];
                if (gx) (*gx)[xi] += go * k[ki];
              }
            }
        }
  });
}

/// 2x2 max pooling, stride 2, over [C x H x W] with even H and W.
/// Ties resolve to the first element in row-major window order.
inline Var maxpool2x2(Tape& t, Var input) {
  const Tensor& x = t.value(input);
  require(x.rank() == 3 && x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0,
          "maxpool2x2: needs [C x H x W] with even H, W; got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), ho = h / 2, wo = w / 2;
  Tensor y({c, ho, wo});
  std::vector<std::size_t> arg(y.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < ho; ++r)
      for (std::size_t col = 0; col < wo; ++col) {
        std::size_t best = (ch * h + 2 * r) * w + 2 * col;
        for (std::size_t dr = 0; dr < 2; ++dr)
          for (std::size_t dc = 0; dc < 2; ++dc) {
            const std::size_t idx = (ch * h + 2 * r + dr) * w + 2 * col + dc;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (ch * ho + r) * wo + col;
        y[o] = x[best];
        arg[o] = best;
      }
  return t.record("maxpool2x2", std::move(y), t.requires_grad(input),
                  [input, arg = std::move(arg)](Tape& tp, const Tensor& g) {
                    if (Tensor* gx = tp.grad_sink(input))
                      for (std::size_t o = 0; o < arg.size(); ++o) (*gx)[arg[o]] += g[o];
                  });
}

}  // namespace capforge::ops
