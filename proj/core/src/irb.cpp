#include "rlf/irb.hpp"

#include <cmath>

#include "rlf/errors.hpp"
#include "rlf/ops.hpp"

namespace rlf::irb {

using ad::Var;

void init_params(ParameterStore& store, const IrbConfig& cfg, Initializer& init) {
  if (cfg.d == 0) throw ConfigError("irb.d must be positive");
  const std::size_t d = cfg.d, h = cfg.weight_hidden;
  store.add("irb.radar_mlp.w", init.he_uniform({cfg.radar_channels, d}, cfg.radar_channels));
  store.add("irb.radar_mlp.b", init.constant({d}, 0.0));
  store.add("irb.lidar_mlp.w", init.he_uniform({cfg.lidar_channels, d}, cfg.lidar_channels));
  store.add("irb.lidar_mlp.b", init.constant({d}, 0.0));
  store.add("irb.weight_mlp.w1", init.he_uniform({kIndicativeChannels + d, h}, kIndicativeChannels + d));
  store.add("irb.weight_mlp.b1", init.constant({h}, 0.0));
  store.add("irb.weight_mlp.w2", init.he_uniform({h, d}, h));
  store.add("irb.weight_mlp.b2", init.constant({d}, 0.0));
  store.add("irb.query.w", init.he_uniform({d, d}, d));
  store.add("irb.query.b", init.constant({d}, 0.0));
}

IrbWeights IrbWeights::bind(ad::Graph& g, ParameterStore& s) {
  return {ad::bind(g, s, "irb.radar_mlp.w"),  ad::bind(g, s, "irb.radar_mlp.b"),  ad::bind(g, s, "irb.lidar_mlp.w"),
          ad::bind(g, s, "irb.lidar_mlp.b"),  ad::bind(g, s, "irb.weight_mlp.w1"), ad::bind(g, s, "irb.weight_mlp.b1"),
          ad::bind(g, s, "irb.weight_mlp.w2"), ad::bind(g, s, "irb.weight_mlp.b2"), ad::bind(g, s, "irb.query.w"),
          ad::bind(g, s, "irb.query.b")};
}

Var point_mlp(Var x, Var w, Var b) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("point_mlp expects [N, P, C], got " + shape_str(s));
  const std::size_t out = w.shape().at(1);
  Var flat = ad::reshape(x, {s[0] * s[1], s[2]});
  Var y = ad::relu(ad::linear(flat, w, b));
  return ad::reshape(y, {s[0], s[1], out});
}

RrOutput rr_branch(Var p_r_s, Var p_r_c, const IrbWeights& w) {
  const Shape& ss = p_r_s.shape();
  const Shape& cs = p_r_c.shape();
  if (ss.size() != 3 || cs.size() != 3 || ss[0] != cs[0] || ss[1] != cs[1] || cs[2] != kIndicativeChannels) {
    throw DimensionError("rr_branch: misaligned inputs " + shape_str(ss) + " and " + shape_str(cs));
  }
  const std::size_t N = ss[0], P = ss[1];
  RrOutput out;
  out.f_r_s = point_mlp(p_r_s, w.radar_w, w.radar_b);
  const std::size_t d = out.f_r_s.shape()[2];
  Var joint = ad::reshape(ad::concat({p_r_c, out.f_r_s}, 2), {N * P, kIndicativeChannels + d});
  Var hidden = ad::relu(ad::linear(joint, w.weight_w1, w.weight_b1));
  out.w_r_c = ad::reshape(ad::linear(hidden, w.weight_w2, w.weight_b2), {N, P, d});
  out.p_r = ad::mul(ad::sigmoid(out.w_r_c), out.f_r_s);
  return out;
}

Var rl_branch(Var p_l_s, Var w_r_c, const IrbWeights& w, bool attention_softmax) {
  const Shape& ls = p_l_s.shape();
  const Shape& rs = w_r_c.shape();
  if (ls.size() != 2 || rs.size() != 2 || ls[1] != rs[1]) {
    throw DimensionError("rl_branch: " + shape_str(ls) + " vs " + shape_str(rs));
  }
  if (rs[0] == 0 || ls[0] == 0) return p_l_s;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(ls[1]));
  Var q = ad::linear(p_l_s, w.query_w, w.query_b);
  Var scores = ad::scale(ad::matmul(q, ad::transpose(w_r_c)), inv_sqrt_dk);
  if (attention_softmax) scores = ad::softmax(scores, 1);
  return ad::add(p_l_s, ad::matmul(scores, w_r_c));
}

Var pool_pillars(Var point_features, const std::vector<int>& num_points) {
  return ad::pool_max(point_features, num_points);
}

}  // namespace rlf::irb
