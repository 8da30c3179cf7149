#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "capforge/numerics/tensor.hpp"

namespace capforge {

/// A scalar objective over a fixed set of parameters. When called with
/// `with_grad == true` it must also leave d(value)/d(param) in each
/// parameter's `grad` (overwriting whatever was there).
using ScalarObjective = std::function<double(bool with_grad)>;

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t elements_checked = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double tolerance = 0.0;
  bool passed() const {
    return std::all_of(params.begin(), params.end(), [](const ParamCheck& p) { return p.passed; });
  }
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_rel_error);
    return m;
  }
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t max_elements = 10000;  // per parameter; larger tensors are subsampled
  std::uint64_t seed = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares analytic gradients against central differences
/// (f(p+h) - f(p-h)) / 2h, element by element.
inline GradCheckReport grad_check(const ScalarObjective& f, const std::vector<Parameter*>& params,
                                  GradCheckOptions opts = {}) {
  require(opts.step > 0, "grad_check: step must be positive");
  for (Parameter* p : params) p->zero_grad();
  const double base = f(true);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  if (f(false) != base || f(false) != base)
    throw std::runtime_error("grad_check: objective is not deterministic");

  GradCheckReport report;
  report.tolerance = opts.tolerance;
  std::mt19937_64 rng(opts.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > opts.max_elements) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_elements);
      std::sort(idx.begin(), idx.end());
    }
    ParamCheck pc;
    pc.name = p.name;
    for (std::size_t i : idx) {
      const double orig = p.value[i];
      p.value[i] = orig + opts.step;
      const double fp = f(false);
      p.value[i] = orig - opts.step;
      const double fm = f(false);
      p.value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double err = relative_error(analytic[k][i], numeric);
      if (err > pc.max_rel_error || pc.elements_checked == 0) {
        pc.max_rel_error = std::max(pc.max_rel_error, err);
        pc.worst_index = i;
        pc.analytic_at_worst = analytic[k][i];
        pc.numeric_at_worst = numeric;
      }
      ++pc.elements_checked;
    }
    pc.passed = pc.max_rel_error < opts.tolerance;
    report.params.push_back(std::move(pc));
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->grad = analytic[k];
  return report;
}

}  // namespace capforge
