#include "rlf/bev.hpp"

#include "rlf/errors.hpp"
#include "rlf/ops.hpp"

namespace rlf::bev {

using ad::Var;

namespace {

std::vector<std::size_t> cell_indices(const std::vector<PillarCoord>& coords, std::size_t H, std::size_t W) {
  std::vector<std::size_t> idx;
  idx.reserve(coords.size());
  std::vector<bool> seen(H * W, false);
  for (const auto& c : coords) {
    if (c.row < 0 || c.col < 0 || static_cast<std::size_t>(c.row) >= H || static_cast<std::size_t>(c.col) >= W) {
      throw IndexError("pillar coordinate (" + std::to_string(c.row) + ", " + std::to_string(c.col) + ") outside grid");
    }
    const std::size_t k = static_cast<std::size_t>(c.row) * W + static_cast<std::size_t>(c.col);
    if (seen[k]) {
      throw ContractError("duplicate pillar coordinate (" + std::to_string(c.row) + ", " + std::to_string(c.col) + ")");
    }
    seen[k] = true;
    idx.push_back(k);
  }
  return idx;
}

void add_conv(ParameterStore& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
              Initializer& init) {
  store.add(name + ".w", init.he_uniform({cout, cin, k, k}, cin * k * k));
  store.add(name + ".b", init.constant({cout}, 0.0));
}

Var conv(ad::Graph& g, ParameterStore& store, const std::string& name, Var x, int stride, int pad) {
  return ad::conv2d(x, ad::bind(g, store, name + ".w"), ad::bind(g, store, name + ".b"), stride, pad);
}

}  // namespace

BevFeatureMap scatter_to_bev(Var embeddings, const std::vector<PillarCoord>& coords, const GridConfig& grid,
                             Modality modality) {
  const Shape& s = embeddings.shape();
  if (s.size() != 2 || s[0] != coords.size()) {
    throw DimensionError("scatter_to_bev: embeddings " + shape_str(s) + " for " + std::to_string(coords.size()) +
                         " coordinates");
  }
  const std::size_t H = static_cast<std::size_t>(grid.rows()), W = static_cast<std::size_t>(grid.cols());
  const auto idx = cell_indices(coords, H, W);
  Var cells = ad::scatter_add(embeddings, idx, H * W);  // [HW, d]
  return {ad::reshape(ad::transpose(cells), {s[1], H, W}), modality};
}

Var gather_from_bev(const BevFeatureMap& map, const std::vector<PillarCoord>& coords) {
  const std::size_t C = map.channels(), H = map.height(), W = map.width();
  Var cells = ad::transpose(ad::reshape(map.features, {C, H * W}));
  return ad::gather(cells, cell_indices(coords, H, W));
}

void init_backbone(ParameterStore& store, const std::string& prefix, const BackboneConfig& cfg, Initializer& init) {
  const std::size_t c = cfg.block_channels;
  add_conv(store, prefix + ".block1.down", cfg.in_channels, c, 3, init);
  add_conv(store, prefix + ".block1.conv", c, c, 3, init);
  add_conv(store, prefix + ".block2.down", c, c, 3, init);
  add_conv(store, prefix + ".block2.conv", c, c, 3, init);
  add_conv(store, prefix + ".merge", cfg.in_channels + 2 * c, cfg.out_channels, 1, init);
}

BevFeatureMap backbone_forward(const BevFeatureMap& bev, ad::Graph& g, ParameterStore& store,
                               const std::string& prefix) {
  if (bev.height() % 4 || bev.width() % 4) {
    throw DimensionError("backbone input " + shape_str(bev.features.shape()) + " is not divisible by 4");
  }
  Var x = bev.features;
  Var b1 = ad::relu(conv(g, store, prefix + ".block1.down", ad::zero_pad_end(x), 2, 0));
  b1 = ad::relu(conv(g, store, prefix + ".block1.conv", b1, 1, 1));
  Var b2 = ad::relu(conv(g, store, prefix + ".block2.down", ad::zero_pad_end(b1), 2, 0));
  b2 = ad::relu(conv(g, store, prefix + ".block2.conv", b2, 1, 1));
  Var merged = ad::concat({x, ad::upsample_nearest(b1, 2), ad::upsample_nearest(b2, 4)}, 0);
  return {ad::relu(conv(g, store, prefix + ".merge", merged, 1, 0)), bev.modality};
}

}  // namespace rlf::bev
