#pragma once

#include <cstddef>
#include <vector>

#include "rlf/graph.hpp"
#include "rlf/parameters.hpp"
#include "rlf/pillarize.hpp"

// Radar-driven bidirectional fusion at the pillar stage.
//
// R-R: radar geometric features f = MLP(p_r^s) are gated by indicative
//      weights w = MLP(p_r^c ++ f):  p_r = sigmoid(w) * f.
// R-L: pooled LiDAR pillar features attend to pooled indicative weights,
//      p_l = p_l^s + A V with A = Q K^T / sqrt(d) (row-softmaxed by default),
//      Q a projection of p_l^s and K = V = w.
namespace rlf::irb {

struct IrbConfig {
  std::size_t radar_channels = kRadarSpatialChannels;  // C1
  std::size_t lidar_channels = kLidarChannels;         // C2
  std::size_t d = 32;
  std::size_t weight_hidden = 32;
  bool attention_softmax = true;
};

void init_params(ParameterStore& store, const IrbConfig& cfg, Initializer& init);

struct IrbWeights {
  ad::Var radar_w, radar_b;        // C1 -> d
  ad::Var lidar_w, lidar_b;        // C2 -> d
  ad::Var weight_w1, weight_b1;    // 3 + d -> hidden
  ad::Var weight_w2, weight_b2;    // hidden -> d
  ad::Var query_w, query_b;        // d -> d

  static IrbWeights bind(ad::Graph& g, ParameterStore& store);
};

// Pointwise Linear + ReLU over x[N, P, Cin].
ad::Var point_mlp(ad::Var x, ad::Var w, ad::Var b);

struct RrOutput {
  ad::Var f_r_s;  // [N, P, d]
  ad::Var w_r_c;  // [N, P, d]
  ad::Var p_r;    // [N, P, d]
};

RrOutput rr_branch(ad::Var p_r_s, ad::Var p_r_c, const IrbWeights& w);

// p_l_s: [M, d] pooled LiDAR pillars, w_r_c: [N, d] pooled radar weights.
// With N == 0 the attention term vanishes and p_l_s is returned.
ad::Var rl_branch(ad::Var p_l_s, ad::Var w_r_c, const IrbWeights& w, bool attention_softmax);

// Max over the valid points of each pillar; zeros for empty pillars.
ad::Var pool_pillars(ad::Var point_features, const std::vector<int>& num_points);

}  // namespace rlf::irb
