#include "rlf/graph.hpp"

#include <algorithm>
#include <cmath>

#include "rlf/errors.hpp"

namespace rlf::ad {

const Tensor& Var::value() const {
  if (!graph) throw ContractError("use of an unbound Var");
  return graph->value(*this);
}

Graph::Node& Graph::node(Var v) {
  if (v.graph != this || v.id >= nodes_.size()) throw ContractError("Var does not belong to this graph");
  return nodes_[v.id];
}

const Graph::Node& Graph::node(Var v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw ContractError("Var does not belong to this graph");
  return nodes_[v.id];
}

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::variable(Tensor value) {
  Node n;
  n.op = "variable";
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Graph::parameter(Parameter& param) {
  Node n;
  n.op = "parameter:" + param.name;
  n.value = param.value;
  n.requires_grad = grad_enabled_;
  n.param = &param;
  return push(std::move(n));
}

Var Graph::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Graph::record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError("non-finite output from op '" + std::string(op) + "'");
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && std::any_of(inputs.begin(), inputs.end(), [this](Var v) {
    return node(v).requires_grad;
  });
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  if (!n.requires_grad) throw ContractError("node '" + n.op + "' does not require grad");
  if (!n.has_grad) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

std::string_view Graph::op_name(Var v) const { return node(v).op; }

void Graph::accumulate(Var v, std::span<const double> g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (g.size() != n.value.size()) {
    throw DimensionError("gradient size mismatch for op '" + n.op + "'");
  }
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), std::vector<double>(g.begin(), g.end()));
    n.has_grad = true;
    return;
  }
  auto dst = n.grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Graph::backward(Var root) {
  if (backward_done_) throw ContractError("backward called twice without reset");
  Node& r = node(root);
  if (r.value.size() != 1) throw ContractError("backward requires a scalar root, got " + shape_str(r.value.shape()));
  backward_done_ = true;
  if (!r.requires_grad) return;
  r.grad = Tensor(r.value.shape(), 1.0);
  r.has_grad = true;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
    }
  }
}

void Graph::reset() {
  for (Node& n : nodes_) {
    n.grad = Tensor();
    n.has_grad = false;
  }
  backward_done_ = false;
}

}  // namespace rlf::ad
