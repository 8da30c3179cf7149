#pragma once

#include <cmath>
#include <cstdint>
#include <unordered_map>

#include "capforge/numerics/tensor.hpp"

namespace capforge {

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moments are keyed by parameter and zero-initialized
/// on first touch; the step counter is per parameter.
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  const AdamOptions& options() const noexcept { return opts_; }

  void step(Parameter& p) {
    require(p.grad.shape() == p.value.shape(), "adam step on '" + p.name + "' without a gradient");
    State& s = state_[&p];
    if (s.m.empty()) {
      s.m = Tensor(p.value.shape());
      s.v = Tensor(p.value.shape());
    }
    ++s.t;
    const double b1t = 1.0 - std::pow(opts_.beta1, static_cast<double>(s.t));
    const double b2t = 1.0 - std::pow(opts_.beta2, static_cast<double>(s.t));
    auto& w = p.value.storage();
    const auto& g = p.grad.storage();
    auto& m = s.m.storage();
    auto& v = s.v.storage();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double mhat = m[i] / b1t;
      const double vhat = v[i] / b2t;
      w[i] -= opts_.learning_rate * mhat / (std::sqrt(vhat) + opts_.epsilon);
    }
  }

  std::uint64_t steps(const Parameter& p) const {
    auto it = state_.find(&p);
    return it == state_.end() ? 0 : it->second.t;
  }

 private:
  struct State {
    Tensor m, v;
    std::uint64_t t = 0;
  };
  AdamOptions opts_;
  std::unordered_map<const Parameter*, State> state_;
};

}  // namespace capforge
