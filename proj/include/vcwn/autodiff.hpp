#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vcwn/tensor.hpp"

namespace vcwn {

// Trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Ordered, named collection of parameters owned by a model.
//
// Parameters are registered once at model construction; the set must not
// grow while a Tape holds pointers into it.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  std::vector<Parameter> items_;
};

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Computation record for reverse-mode differentiation.
//
// Nodes are appended in execution order, so the node list is already a
// topological order and backward() is a single reverse sweep. Each op stores
// a closure that reads the forward values it recorded and pushes gradients
// into its inputs.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf whose gradient is tracked but not written anywhere (probes, grad
  // checks on inputs).
  Var input(Tensor value);
  // Leaf with no gradient.
  Var constant(Tensor value);
  // Leaf bound to a model parameter; backward() accumulates into p.grad.
  Var parameter(Parameter& p);

  // Records an op result. Validates finiteness and names `op` on failure.
  Var record(const char* op, Tensor value, std::vector<int> inputs,
             BackwardFn backward);

  // Reverse sweep from a scalar loss. Parameter gradients are accumulated
  // into their Parameter::grad (sized and zeroed if empty); parameters that
  // are recorded but unreachable from `loss` end up with zero gradient.
  void backward(Var loss);

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient of the last backward() w.r.t. node `id`; zeros if unreached.
  Tensor gradient(Var v) const;

  // Mutable gradient slot for use inside backward closures; lazily sized.
  Tensor& grad_slot(int id);

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t op_count() const;
  const char* op_name(int id) const { return nodes_[id].op; }

 private:
  struct Node {
    const char* op = "leaf";
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

// Primitive ops. Shapes are [rows x cols]; for sequences rows = channels.
namespace ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// x [C x T] + bias [C x 1], broadcast over columns.
Var add_bias(Var x, Var bias);
// w [O x I] * x [I x T].
Var matmul(Var w, Var x);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var sum(Var a);
Var mean(Var a);
Var concat_rows(Var a, Var b);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);

// Kernel-width-2 dilated causal convolution.
// x: [C x T]; weights: [O x 2C] where columns [0, C) act on x[t - dilation]
// (past tap, zero for t < dilation) and columns [C, 2C) act on x[t].
// Output is [O x T]; output t depends on inputs at t and t - dilation only.
Var conv1d_causal(Var x, Var weights, std::size_t dilation);

// table: [C x V]; result column t is table column codes[t].
Var embedding(Var table, std::span<const int> codes);

// Mean over columns of -log softmax(logits[:, t])[targets[t]].
Var softmax_cross_entropy(Var logits, std::span<const int> targets);

// Unit-variance Gaussian negative log-likelihood with constants dropped:
// 0.5 * sum((target - prediction)^2).
Var gaussian_nll(Var prediction, Var target);

// KL(N(mu, exp(logvar)) || N(0, I)) summed over all entries:
// sum 0.5 * (mu^2 + exp(logvar) - 1 - logvar).
Var gaussian_kl(Var mu, Var logvar);

// z = mu + exp(0.5 * logvar) * noise with noise held constant.
Var reparameterize(Var mu, Var logvar, const Tensor& noise);

}  // namespace ops

}  // namespace vcwn
