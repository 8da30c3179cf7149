#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "capforge/numerics/errors.hpp"
#include "capforge/numerics/tensor.hpp"

namespace capforge {

/// Handle to a value recorded on a Tape. Only meaningful for the tape that
/// issued it.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

namespace debug_hooks {
/// Name of an op whose backward rule gets deliberately scaled by 1.5.
/// Negative control for the gradient checker; empty means disabled.
inline std::string& corrupted_op() {
  static std::string name;
  return name;
}
}  // namespace debug_hooks

/// Define-by-run reverse-mode tape. Build a fresh one per forward pass;
/// calling backward() a second time on the same tape throws.
class Tape {
 public:
  /// Receives the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor t) {
    check_finite("constant", t);
    nodes_.push_back(Node{std::move(t), nullptr, {}, false, "constant", {}, nullptr});
    return Var{nodes_.size() - 1};
  }

  /// Borrow a tensor that outlives the tape, without copying it.
  Var constant_ref(const Tensor& t) {
    nodes_.push_back(Node{{}, &t, {}, false, "constant", {}, nullptr});
    return Var{nodes_.size() - 1};
  }

  /// Leaf for a parameter, borrowed without copying. With `track` the tape
  /// collects its gradient; repeated calls return the same Var.
  Var param(const Parameter& p, bool track = true) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var{it->second};
    nodes_.push_back(Node{{}, &p.value, {}, track, "param", {}, track ? &p : nullptr});
    param_ids_.emplace(&p, nodes_.size() - 1);
    return Var{nodes_.size() - 1};
  }

  /// Records an op output. `fn` may be empty when no input needs a gradient.
  Var record(std::string_view op, Tensor value, bool needs_grad, BackwardFn fn) {
    check_finite(op, value);
    nodes_.push_back(Node{std::move(value), nullptr, {}, needs_grad, std::string(op),
                          needs_grad ? std::move(fn) : BackwardFn{}, nullptr});
    return Var{nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return node(v).val(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  const std::string& op_name(Var v) const { return node(v).op; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }

  /// Gradient of the last backward() target w.r.t. `v`; zeros when unreached.
  const Tensor& grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) n.grad = Tensor(n.val().shape());
    return n.grad;
  }

  /// Accumulation target for backward rules. No-op sink when `v` has no grad.
  Tensor* grad_sink(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(n.val().shape());
    return &n.grad;
  }

  void backward(Var loss) {
    if (backward_done_)
      throw ContractViolation("backward() called twice on the same tape; re-run the forward pass");
    const Node& l = node(loss);
    require(l.val().is_scalar(), "backward() needs a scalar loss, got shape " + shape_str(l.val().shape()));
    backward_done_ = true;
    if (!l.requires_grad) return;
    const std::string& corrupted = debug_hooks::corrupted_op();
    node(loss).grad = Tensor(l.val().shape(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      if (!n.grad.all_finite())
        throw NumericFault(n.op, "non-finite gradient reaching op '" + n.op + "'");
      if (!corrupted.empty() && n.op == corrupted) {
        Tensor g = n.grad;
        for (double& x : g.storage()) x *= 1.5;
        n.backward(*this, g);
      } else {
        n.backward(*this, n.grad);
      }
    }
  }

  /// Parameter leaves touched by this tape, in first-use order.
  std::vector<std::pair<const Parameter*, const Tensor*>> param_grads() const {
    std::vector<std::pair<const Parameter*, const Tensor*>> out;
    for (const Node& n : nodes_)
      if (n.param) out.emplace_back(n.param, &grad(Var{static_cast<std::size_t>(&n - nodes_.data())}));
    return out;
  }

  /// p->grad += scale * dloss/dp for each listed parameter the tape tracked.
  void accumulate_param_grads(const std::vector<Parameter*>& params, double scale = 1.0) const {
    for (Parameter* p : params) {
      auto it = param_ids_.find(p);
      if (it == param_ids_.end() || !nodes_[it->second].param) continue;
      if (p->grad.shape() != p->value.shape()) p->grad = Tensor(p->value.shape());
      auto& dst = p->grad.storage();
      const auto& src = grad(Var{it->second}).storage();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    }
  }

 private:
  struct Node {
    Tensor own;
    const Tensor* borrowed;
    mutable Tensor grad;
    bool requires_grad;
    std::string op;
    BackwardFn backward;
    const Parameter* param;

    const Tensor& val() const { return borrowed ? *borrowed : own; }
  };

  static void check_finite(std::string_view op, const Tensor& t) {
    if (!t.all_finite())
      throw NumericFault(std::string(op), "non-finite value produced by op '" + std::string(op) + "'");
  }

  const Node& node(Var v) const {
    require(v.id < nodes_.size(), "Var does not belong to this tape");
    return nodes_[v.id];
  }
  Node& node(Var v) {
    require(v.id < nodes_.size(), "Var does not belong to this tape");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
  bool backward_done_ = false;
};

}  // namespace capforge
