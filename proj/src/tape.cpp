#include "ssub/tape.hpp"

#include <cmath>

namespace ssub {

Tape& Value::tape() const {
  if (!tape_) throw ShapeError("Value is not bound to a tape");
  return *tape_;
}

const Tensor& Value::tensor() const { return tape().value(id_); }

Value Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::param(Parameter& p) {
  auto it = param_ids_.find(&p);
  if (it != param_ids_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.bound = &p;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  int id = static_cast<int>(nodes_.size()) - 1;
  param_ids_.emplace(&p, id);
  return {this, id};
}

Value Tape::record(Tensor value, const std::vector<Value>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Value& in : inputs) {
    if (&in.tape() != this) throw ShapeError("mixing values from different tapes");
    if (nodes_[static_cast<size_t>(in.id())].needs_grad) n.needs_grad = true;
  }
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_acc(Value v) {
  Node& n = nodes_[static_cast<size_t>(v.id())];
  if (!n.grad_set) {
    n.grad = Tensor(n.value.shape());
    n.grad_set = true;
  }
  return n.grad;
}

void Tape::add_grad(Value v, const Tensor& g) {
  Node& n = nodes_[static_cast<size_t>(v.id())];
  if (!n.needs_grad) return;
  if (!g.same_shape(n.value))
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                     shape_str(n.value.shape()));
  if (!n.grad_set) {
    n.grad = g;
    n.grad_set = true;
  } else {
    n.grad.flat() += g.flat();
  }
}

void Tape::backward(Value loss) {
  if (&loss.tape() != this) throw ShapeError("loss recorded on a different tape");
  if (swept_) throw ShapeError("tape supports exactly one backward pass per recording");
  swept_ = true;
  Node& top = nodes_[static_cast<size_t>(loss.id())];
  if (top.value.size() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(top.value.shape()));
  if (!top.needs_grad) return;  // loss does not depend on any parameter
  top.grad = Tensor::full(top.value.shape(), 1.0f);
  top.grad_set = true;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_set || !n.needs_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.bound) n.bound->grad.flat() += n.grad.flat();
  }
}

const Tensor& Tape::grad(Value v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id())];
  return n.grad_set ? n.grad : empty_;
}

void Tape::clear() {
  nodes_.clear();
  param_ids_.clear();
  swept_ = false;
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(static_cast<double>(config_.beta1), t_);
  const double c2 = 1.0 - std::pow(static_cast<double>(config_.beta2), t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    auto g = p.grad.flat();
    auto m = m_[i].flat();
    auto v = v_[i].flat();
    m = config_.beta1 * m + (1.0f - config_.beta1) * g;
    v = config_.beta2 * v + (1.0f - config_.beta2) * g.cwiseProduct(g);
    const float lr1 = static_cast<float>(config_.lr / c1);
    const float sc2 = static_cast<float>(1.0 / c2);
    p.value.flat() -= lr1 * m.cwiseQuotient(((sc2 * v).cwiseSqrt().array() + config_.eps).matrix());
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace ssub
