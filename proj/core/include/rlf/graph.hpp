#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rlf/parameters.hpp"
#include "rlf/tensor.hpp"

namespace rlf::ad {

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid for the lifetime of the graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  bool valid() const { return graph != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Tape of operations recorded in creation order, which is a topological order.
// backward() walks the tape in reverse exactly once.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf whose gradient is added into param.grad by backward().
  Var parameter(Parameter& param);

  // Used by op implementations. Fails with NumericError on non-finite output.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  // Zeros when backward never reached the node.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;
  void accumulate(Var v, std::span<const double> g);
  void accumulate(Var v, const Tensor& g) { accumulate(v, g.data()); }

  void backward(Var root);
  void reset();

  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(Var v) const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  Var push(Node n);

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

}  // namespace rlf::ad
