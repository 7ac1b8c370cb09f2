#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rlf/graph.hpp"

// Differentiable operations over Graph nodes. Shapes are explicit: the only
// broadcast is add_bias over the trailing axis.
namespace rlf::ad {

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// x[..., C] + b[C]
Var add_bias(Var x, Var b);

Var sigmoid(Var x);
Var relu(Var x);

Var reshape(Var x, Shape shape);
Var concat(const std::vector<Var>& xs, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);

// Removes `axis`; backward routes to the first maximal element.
Var reduce_max(Var x, std::size_t axis);
Var softmax(Var x, std::size_t axis);
// Each row of x[n, d] divided by sqrt(|row|^2 + eps).
Var normalize_rows(Var x, double eps = 1e-12);
Var sum(Var x);
Var mean(Var x);

// Row selection / accumulation along axis 0. Adjoint pair.
Var gather(Var x, const std::vector<std::size_t>& indices);
Var scatter_add(Var x, const std::vector<std::size_t>& indices, std::size_t rows);

// x[n, P, d] -> [n, d], max over the first counts[i] rows of pillar i; zeros for empty pillars.
Var pool_max(Var x, const std::vector<int>& counts);

// Cross-correlation of x[Cin, H, W] with w[Cout, Cin, k, k] plus b[Cout].
// k in {1, 3}, stride in {1, 2}, pad in {0, 1}.
Var conv2d(Var x, Var w, Var b, int stride, int pad);
// x[C, H, W] -> [C, H+1, W+1], zero row and column appended at the end.
// Lets a 3x3 stride-2 unpadded conv halve an even-sized map.
Var zero_pad_end(Var x);
// x[C, H, W] -> [C, H*f, W*f]
Var upsample_nearest(Var x, std::size_t factor);

// x[n, in] W[in, out] + b[out]
Var linear(Var x, Var w, Var b);

// Binds a stored parameter as a graph leaf.
inline Var bind(Graph& g, ParameterStore& store, const std::string& name) { return g.parameter(store.get(name)); }

}  // namespace rlf::ad
