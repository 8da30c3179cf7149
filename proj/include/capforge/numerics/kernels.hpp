#pragma once

// Plain (tape-free) dense kernels shared by the autodiff ops and the
// inference fast path.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "capforge/numerics/errors.hpp"

namespace capforge::kernels {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// out[m] = W[m x n] * x[n] (+ bias[m] when non-empty).
inline void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
                   std::span<const double> x, std::span<const double> bias, std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w.data() + r * cols;
    double acc = bias.empty() ? 0.0 : bias[r];
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

/// Same as matvec but the input is split in two contiguous halves [a, b].
inline void matvec2(std::span<const double> w, std::size_t rows, std::span<const double> a,
                    std::span<const double> b, std::span<const double> bias, std::span<double> out) {
  const std::size_t cols = a.size() + b.size();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w.data() + r * cols;
    double acc = bias.empty() ? 0.0 : bias[r];
    for (std::size_t c = 0; c < a.size(); ++c) acc += row[c] * a[c];
    row += a.size();
    for (std::size_t c = 0; c < b.size(); ++c) acc += row[c] * b[c];
    out[r] = acc;
  }
}

/// log-softmax with max-subtraction.
inline std::vector<double> log_softmax(std::span<const double> logits) {
  require(!logits.empty(), "log_softmax of empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  const double lz = std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = (logits[i] - m) - lz;
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  require(!logits.empty(), "softmax of empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

}  // namespace capforge::kernels
