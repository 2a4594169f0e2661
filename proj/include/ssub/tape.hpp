#pragma once

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ssub/tensor.hpp"

namespace ssub {

class Tape;

// Trainable tensor with an accumulated gradient of the same shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string name_, Tensor value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  void zero_grad() { grad.flat().setZero(); }
};

// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, int id) : tape_(tape), id_(id) {}

  int id() const { return id_; }
  Tape& tape() const;
  const Tensor& tensor() const;
  const Shape& shape() const { return tensor().shape(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode autodiff tape. Each primitive records its output tensor, the
// ids of its inputs and a backward closure; backward() replays the closures
// in reverse recording order, which is a valid topological order. A tape is
// rebuilt for every forward pass and supports exactly one backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value constant(Tensor value);
  // Leaf bound to a parameter; repeated calls with the same parameter return
  // the same node so gradient contributions accumulate in one place.
  Value param(Parameter& p);
  // Record a primitive. `fn` may be empty when no input requires gradients.
  Value record(Tensor value, const std::vector<Value>& inputs, BackwardFn fn);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor& value(Value v) const { return value(v.id()); }
  bool needs_grad(Value v) const { return nodes_[static_cast<size_t>(v.id())].needs_grad; }

  // Gradient accumulator of a node, allocated zero on first use. Backward
  // closures add into it directly to avoid temporaries.
  Tensor& grad_acc(Value v);
  void add_grad(Value v, const Tensor& g);

  // Seeds d(loss)/d(loss) = 1 for a scalar loss, sweeps the tape once, and
  // adds leaf gradients into their bound Parameters.
  void backward(Value loss);

  // Gradient captured for a node during backward. Empty if none reached it.
  const Tensor& grad(Value v) const;

  int node_count() const { return static_cast<int>(nodes_.size()); }
  void clear();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* bound = nullptr;
    bool needs_grad = false;
    bool grad_set = false;
  };

  // Deque so that Tensor references handed out via value()/tensor() stay
  // valid while later nodes are recorded.
  std::deque<Node> nodes_;
  std::unordered_map<Parameter*, int> param_ids_;
  bool swept_ = false;
  Tensor empty_;
};

// Adam optimizer over a fixed parameter list; first/second moment state is
// kept per parameter across steps.
struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config = {});

  // Applies one update from the gradients currently stored in the
  // parameters, then advances the step count. Gradients are left untouched.
  void step();
  void zero_grad();
  void set_lr(float lr) { config_.lr = lr; }
  int steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig config_;
  int t_ = 0;
};

}  // namespace ssub
