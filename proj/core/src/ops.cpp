#include "rlf/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rlf/errors.hpp"

namespace rlf::ad {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

Graph& graph_of(Var a) {
  if (!a.graph) throw ContractError("use of an unbound Var");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw ContractError("operands belong to different graphs");
  return graph_of(a);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::size_t row_size(const Shape& shape) {
  std::size_t r = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) r *= shape[i];
  return r;
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const auto m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  if (m && n && k) {
    MapR(out.data().data(), m, n).noalias() = CMapR(av.data().data(), m, k) * CMapR(bv.data().data(), k, n);
  }
  return g.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Graph& g, const Tensor& go) {
    if (!m || !n || !k) return;
    CMapR G(go.data().data(), m, n);
    if (g.requires_grad(a)) {
      Tensor ga({m, k});
      MapR(ga.data().data(), m, k).noalias() = G * CMapR(g.value(b).data().data(), k, n).transpose();
      g.accumulate(a, ga);
    }
    if (g.requires_grad(b)) {
      Tensor gb({k, n});
      MapR(gb.data().data(), k, n).noalias() = CMapR(g.value(a).data().data(), m, k).transpose() * G;
      g.accumulate(b, gb);
    }
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  if (av.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(av.shape()));
  const auto m = av.dim(0), n = av.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return g.record("transpose", std::move(out), {a}, [a, m, n](Graph& g, const Tensor& go) {
    Tensor ga({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = go[j * m + i];
    g.accumulate(a, ga);
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record("add", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return g.record("sub", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    if (g.requires_grad(b)) {
      Tensor gb = go;
      for (double& v : gb.data()) v = -v;
      g.accumulate(b, gb);
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.record("mul", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.requires_grad(a)) {
      Tensor ga = go;
      const auto bv = g.value(b).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= bv[i];
      g.accumulate(a, ga);
    }
    if (g.requires_grad(b)) {
      Tensor gb = go;
      const auto av = g.value(a).data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= av[i];
      g.accumulate(b, gb);
    }
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return g.record("scale", std::move(out), {a}, [a, s](Graph& g, const Tensor& go) {
    Tensor ga = go;
    for (double& v : ga.data()) v *= s;
    g.accumulate(a, ga);
  });
}

Var add_bias(Var x, Var b) {
  Graph& g = graph_of(x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 1 || xv.rank() == 0 || xv.shape().back() != bv.dim(0)) {
    throw DimensionError("add_bias: " + shape_str(xv.shape()) + " + " + shape_str(bv.shape()));
  }
  const std::size_t c = bv.dim(0);
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
  return g.record("add_bias", std::move(out), {x, b}, [x, b, c](Graph& g, const Tensor& go) {
    g.accumulate(x, go);
    if (g.requires_grad(b)) {
      Tensor gb({c}, 0.0);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i % c] += go[i];
      g.accumulate(b, gb);
    }
  });
}

Var sigmoid(Var x) {
  Graph& g = graph_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  const std::size_t self = g.size();
  return g.record("sigmoid", std::move(out), {x}, [x, self](Graph& g, const Tensor& go) {
    const Tensor& y = g.value(Var{&g, self});
    Tensor gx = go;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= y[i] * (1.0 - y[i]);
    g.accumulate(x, gx);
  });
}

Var normalize_rows(Var x, double eps) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (s.size() != 2) throw DimensionError("normalize_rows expects [n, d], got " + shape_str(s));
  const std::size_t n = s[0], d = s[1];
  Tensor out = x.value();
  std::vector<double> inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = eps;
    for (std::size_t k = 0; k < d; ++k) ss += out[i * d + k] * out[i * d + k];
    inv[i] = 1.0 / std::sqrt(ss);
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] *= inv[i];
  }
  const std::size_t self = g.size();
  return g.record("normalize_rows", std::move(out), {x}, [x, self, inv, n, d](Graph& g, const Tensor& go) {
    const Tensor& y = g.value(Var{&g, self});
    Tensor gx(go.shape(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += y[i * d + k] * go[i * d + k];
      for (std::size_t k = 0; k < d; ++k) gx[i * d + k] = (go[i * d + k] - y[i * d + k] * dot) * inv[i];
    }
    g.accumulate(x, gx);
  });
}

Var relu(Var x) {
  Graph& g = graph_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return g.record("relu", std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    const Tensor& xv = g.value(x);
    Tensor gx = go;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(xv[i] > 0.0)) gx[i] = 0.0;
    g.accumulate(x, gx);
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = graph_of(x);
  Tensor out = x.value().reshaped(std::move(shape));
  return g.record("reshape", std::move(out), {x}, [x](Graph& g, const Tensor& go) { g.accumulate(x, go.data()); });
}

Var concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw ContractError("concat of zero tensors");
  Graph& g = graph_of(xs.front());
  const Shape& ref = xs.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range for " + shape_str(ref));
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (Var v : xs) {
    graph_of(xs.front(), v);
    const Shape& s = v.shape();
    if (s.size() != ref.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != ref[i]) {
        throw DimensionError("concat: shape mismatch " + shape_str(ref) + " vs " + shape_str(s));
      }
    }
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  const AxisSplit sp = split_axis(out_shape, axis, "concat");
  Tensor out(out_shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto src = xs[k].value().data();
    const std::size_t block = lens[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src.begin() + o * block, block, out.data().begin() + o * sp.len * sp.inner + off * sp.inner);
    }
    off += lens[k];
  }
  return g.record("concat", std::move(out), xs, [xs, lens, sp](Graph& g, const Tensor& go) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const std::size_t block = lens[k] * sp.inner;
      if (g.requires_grad(xs[k])) {
        Tensor gk(xs[k].shape());
        for (std::size_t o = 0; o < sp.outer; ++o) {
          std::copy_n(go.data().begin() + o * sp.len * sp.inner + off * sp.inner, block, gk.data().begin() + o * block);
        }
        g.accumulate(xs[k], gk);
      }
      off += lens[k];
    }
  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  const AxisSplit sp = split_axis(s, axis, "slice");
  if (begin > end || end > sp.len) throw IndexError("slice: range out of bounds for " + shape_str(s));
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t block = (end - begin) * sp.inner;
  const auto src = x.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src.begin() + o * sp.len * sp.inner + begin * sp.inner, block, out.data().begin() + o * block);
  }
  return g.record("slice", std::move(out), {x}, [x, sp, begin, block](Graph& g, const Tensor& go) {
    Tensor gx(x.shape(), 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(go.data().begin() + o * block, block, gx.data().begin() + o * sp.len * sp.inner + begin * sp.inner);
    }
    g.accumulate(x, gx);
  });
}

Var reduce_max(Var x, std::size_t axis) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  const AxisSplit sp = split_axis(s, axis, "reduce_max");
  if (sp.len == 0) throw DimensionError("reduce_max over empty axis");
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  std::vector<std::size_t> arg(sp.outer * sp.inner);
  const auto xv = x.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.len * sp.inner + i;
      for (std::size_t l = 1; l < sp.len; ++l) {
        const std::size_t idx = (o * sp.len + l) * sp.inner + i;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[o * sp.inner + i] = xv[best];
      arg[o * sp.inner + i] = best;
    }
  }
  return g.record("reduce_max", std::move(out), {x}, [x, arg = std::move(arg)](Graph& g, const Tensor& go) {
    Tensor gx(x.shape(), 0.0);
    for (std::size_t k = 0; k < arg.size(); ++k) gx[arg[k]] += go[k];
    g.accumulate(x, gx);
  });
}

Var softmax(Var x, std::size_t axis) {
  Graph& g = graph_of(x);
  const AxisSplit sp = split_axis(x.shape(), axis, "softmax");
  if (sp.len == 0) throw DimensionError("softmax over empty axis");
  Tensor out = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, out[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        double& v = out[base + l * sp.inner];
        v = std::exp(v - mx);
        z += v;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
    }
  }
  const std::size_t self = g.size();
  return g.record("softmax", std::move(out), {x}, [x, sp, self](Graph& g, const Tensor& go) {
    const Tensor& y = g.value(Var{&g, self});
    Tensor gx(x.shape());
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) dot += go[base + l * sp.inner] * y[base + l * sp.inner];
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t k = base + l * sp.inner;
          gx[k] = y[k] * (go[k] - dot);
        }
      }
    }
    g.accumulate(x, gx);
  });
}

Var sum(Var x) {
  Graph& g = graph_of(x);
  const auto xv = x.value().data();
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return g.record("sum", Tensor::scalar(s), {x}, [x](Graph& g, const Tensor& go) {
    g.accumulate(x, Tensor(x.shape(), go[0]));
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var gather(Var x, const std::vector<std::size_t>& indices) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("gather on rank-0 tensor");
  const std::size_t rows = s[0];
  const std::size_t rs = row_size(s);
  Shape out_shape = s;
  out_shape[0] = indices.size();
  Tensor out(out_shape);
  const auto xv = x.value().data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= rows) {
      throw IndexError("gather: index " + std::to_string(indices[k]) + " out of range " + std::to_string(rows));
    }
    std::copy_n(xv.begin() + indices[k] * rs, rs, out.data().begin() + k * rs);
  }
  return g.record("gather", std::move(out), {x}, [x, indices, rs](Graph& g, const Tensor& go) {
    Tensor gx(x.shape(), 0.0);
    for (std::size_t k = 0; k < indices.size(); ++k)
      for (std::size_t j = 0; j < rs; ++j) gx[indices[k] * rs + j] += go[k * rs + j];
    g.accumulate(x, gx);
  });
}

Var scatter_add(Var x, const std::vector<std::size_t>& indices, std::size_t rows) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (s.empty() || s[0] != indices.size()) {
    throw DimensionError("scatter_add: " + std::to_string(indices.size()) + " indices for " + shape_str(s));
  }
  const std::size_t rs = row_size(s);
  Shape out_shape = s;
  out_shape[0] = rows;
  Tensor out(out_shape, 0.0);
  const auto xv = x.value().data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= rows) {
      throw IndexError("scatter_add: index " + std::to_string(indices[k]) + " out of range " + std::to_string(rows));
    }
    for (std::size_t j = 0; j < rs; ++j) out[indices[k] * rs + j] += xv[k * rs + j];
  }
  return g.record("scatter_add", std::move(out), {x}, [x, indices, rs](Graph& g, const Tensor& go) {
    Tensor gx(x.shape());
    for (std::size_t k = 0; k < indices.size(); ++k)
      std::copy_n(go.data().begin() + indices[k] * rs, rs, gx.data().begin() + k * rs);
    g.accumulate(x, gx);
  });
}

Var pool_max(Var x, const std::vector<int>& counts) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (s.size() != 3 || s[0] != counts.size()) {
    throw DimensionError("pool_max: expected [n, P, d] with n = " + std::to_string(counts.size()) + ", got " + shape_str(s));
  }
  const std::size_t n = s[0], P = s[1], d = s[2];
  Tensor out({n, d}, 0.0);
  std::vector<std::ptrdiff_t> arg(n * d, -1);
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] < 0 || static_cast<std::size_t>(counts[i]) > P) {
      throw ContractError("pool_max: count " + std::to_string(counts[i]) + " outside [0, P]");
    }
    for (std::size_t c = 0; c < d; ++c) {
      std::ptrdiff_t best = -1;
      for (std::size_t p = 0; p < static_cast<std::size_t>(counts[i]); ++p) {
        const std::size_t idx = (i * P + p) * d + c;
        if (best < 0 || xv[idx] > xv[static_cast<std::size_t>(best)]) best = static_cast<std::ptrdiff_t>(idx);
      }
      if (best >= 0) out[i * d + c] = xv[static_cast<std::size_t>(best)];
      arg[i * d + c] = best;
    }
  }
  return g.record("pool_max", std::move(out), {x}, [x, arg = std::move(arg)](Graph& g, const Tensor& go) {
    Tensor gx(x.shape(), 0.0);
    for (std::size_t k = 0; k < arg.size(); ++k)
      if (arg[k] >= 0) gx[static_cast<std::size_t>(arg[k])] += go[k];
    g.accumulate(x, gx);
  });
}

namespace {

struct ConvGeom {
  std::size_t cin, h, w, k, stride, pad, ho, wo;
};

// cols[(c*k + ky)*k + kx, oy*wo + ox]
void im2col(const double* x, const ConvGeom& q, double* cols) {
  const std::size_t hw = q.ho * q.wo;
  for (std::size_t c = 0; c < q.cin; ++c) {
    for (std::size_t ky = 0; ky < q.k; ++ky) {
      for (std::size_t kx = 0; kx < q.k; ++kx) {
        double* row = cols + ((c * q.k + ky) * q.k + kx) * hw;
        for (std::size_t oy = 0; oy < q.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * q.stride + ky) - static_cast<std::ptrdiff_t>(q.pad);
          double* dst = row + oy * q.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(q.h)) {
            std::fill_n(dst, q.wo, 0.0);
            continue;
          }
          const double* src = x + (c * q.h + static_cast<std::size_t>(iy)) * q.w;
          for (std::size_t ox = 0; ox < q.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * q.stride + kx) - static_cast<std::ptrdiff_t>(q.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(q.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeom& q, double* x) {
  const std::size_t hw = q.ho * q.wo;
  for (std::size_t c = 0; c < q.cin; ++c) {
    for (std::size_t ky = 0; ky < q.k; ++ky) {
      for (std::size_t kx = 0; kx < q.k; ++kx) {
        const double* row = cols + ((c * q.k + ky) * q.k + kx) * hw;
        for (std::size_t oy = 0; oy < q.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * q.stride + ky) - static_cast<std::ptrdiff_t>(q.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(q.h)) continue;
          double* dst = x + (c * q.h + static_cast<std::size_t>(iy)) * q.w;
          const double* src = row + oy * q.wo;
          for (std::size_t ox = 0; ox < q.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * q.stride + kx) - static_cast<std::ptrdiff_t>(q.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(q.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  Graph& g = graph_of(x, w);
  graph_of(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 3 || wv.rank() != 4 || bv.rank() != 1) {
    throw DimensionError("conv2d: expected x[C,H,W], w[O,C,k,k], b[O]; got " + shape_str(xv.shape()) + ", " +
                         shape_str(wv.shape()) + ", " + shape_str(bv.shape()));
  }
  const std::size_t k = wv.dim(2);
  if (wv.dim(3) != k || (k != 1 && k != 3)) throw DimensionError("conv2d: kernel must be 1x1 or 3x3");
  if (wv.dim(1) != xv.dim(0) || bv.dim(0) != wv.dim(0)) {
    throw DimensionError("conv2d: channel mismatch " + shape_str(xv.shape()) + " / " + shape_str(wv.shape()));
  }
  if ((stride != 1 && stride != 2) || (pad != 0 && pad != 1)) {
    throw ContractError("conv2d: stride must be 1 or 2 and pad 0 or 1");
  }
  ConvGeom q{xv.dim(0), xv.dim(1), xv.dim(2), k, static_cast<std::size_t>(stride), static_cast<std::size_t>(pad), 0, 0};
  const std::size_t span_h = q.h + 2 * q.pad, span_w = q.w + 2 * q.pad;
  if (span_h < k || span_w < k || (span_h - k) % q.stride || (span_w - k) % q.stride) {
    throw DimensionError("conv2d: non-integral output size for input " + shape_str(xv.shape()));
  }
  q.ho = (span_h - k) / q.stride + 1;
  q.wo = (span_w - k) / q.stride + 1;
  const std::size_t cout = wv.dim(0);
  const std::size_t kk = q.cin * k * k;
  const std::size_t hw = q.ho * q.wo;
  const bool direct = (k == 1 && q.stride == 1 && q.pad == 0);

  Buffer cols;
  const double* colp = xv.data().data();
  if (!direct) {
    cols.resize(kk * hw);
    im2col(xv.data().data(), q, cols.data());
    colp = cols.data();
  }
  Tensor out({cout, q.ho, q.wo});
  MapR O(out.data().data(), cout, hw);
  O.noalias() = CMapR(wv.data().data(), cout, kk) * CMapR(colp, kk, hw);
  for (std::size_t o = 0; o < cout; ++o) O.row(o).array() += bv[o];

  return g.record("conv2d", std::move(out), {x, w, b}, [x, w, b, q, cout, kk, hw, direct](Graph& g, const Tensor& go) {
    CMapR G(go.data().data(), cout, hw);
    const Tensor& xv = g.value(x);
    Buffer cols;
    const double* colp = xv.data().data();
    if (!direct && g.requires_grad(w)) {
      cols.resize(kk * hw);
      im2col(xv.data().data(), q, cols.data());
      colp = cols.data();
    }
    if (g.requires_grad(w)) {
      Tensor gw(g.value(w).shape());
      MapR(gw.data().data(), cout, kk).noalias() = G * CMapR(colp, kk, hw).transpose();
      g.accumulate(w, gw);
    }
    if (g.requires_grad(b)) {
      Tensor gb({cout});
      for (std::size_t o = 0; o < cout; ++o) gb[o] = G.row(o).sum();
      g.accumulate(b, gb);
    }
    if (g.requires_grad(x)) {
      const CMapR W(g.value(w).data().data(), cout, kk);
      if (direct) {
        Tensor gx(xv.shape());
        MapR(gx.data().data(), kk, hw).noalias() = W.transpose() * G;
        g.accumulate(x, gx);
      } else {
        Buffer dcols(kk * hw);
        MapR(dcols.data(), kk, hw).noalias() = W.transpose() * G;
        Tensor gx(xv.shape(), 0.0);
        col2im(dcols.data(), q, gx.data().data());
        g.accumulate(x, gx);
      }
    }
  });
}

Var zero_pad_end(Var x) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("zero_pad_end: expected [C,H,W], got " + shape_str(s));
  const std::size_t c = s[0], h = s[1], w = s[2];
  Tensor out({c, h + 1, w + 1}, 0.0);
  const auto xv = x.value().data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(xv.begin() + (ch * h + y) * w, w, out.data().begin() + (ch * (h + 1) + y) * (w + 1));
  return g.record("zero_pad_end", std::move(out), {x}, [x, c, h, w](Graph& g, const Tensor& go) {
    Tensor gx(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(go.data().begin() + (ch * (h + 1) + y) * (w + 1), w, gx.data().begin() + (ch * h + y) * w);
    g.accumulate(x, gx);
  });
}

Var upsample_nearest(Var x, std::size_t factor) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("upsample_nearest: expected [C,H,W], got " + shape_str(s));
  if (factor == 0) throw ContractError("upsample_nearest: factor must be positive");
  const std::size_t c = s[0], h = s[1], w = s[2];
  const std::size_t H = h * factor, W = w * factor;
  Tensor out({c, H, W});
  const auto xv = x.value().data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) out[(ch * H + y) * W + xx] = xv[(ch * h + y / factor) * w + xx / factor];
  return g.record("upsample_nearest", std::move(out), {x}, [x, c, h, w, factor](Graph& g, const Tensor& go) {
    const std::size_t H = h * factor, W = w * factor;
    Tensor gx(x.shape(), 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) gx[(ch * h + y / factor) * w + xx / factor] += go[(ch * H + y) * W + xx];
    g.accumulate(x, gx);
  });
}

Var linear(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

}  // namespace rlf::ad
