#include "rlf/model.hpp"

#include "rlf/bev.hpp"
#include "rlf/irb.hpp"
#include "rlf/ops.hpp"
#include "rlf/random.hpp"

namespace rlf::model {

using ad::Var;

// x, y, z, center offsets, mean offsets.
const std::array<double, kRadarSpatialChannels> kRadarSpatialScale{
    1.0 / 12.8, 1.0 / 12.8, 0.5, 2.5, 2.5, 0.5, 2.5, 2.5, 0.5};
// v_r, v_a, rcs.
const std::array<double, kIndicativeChannels> kIndicativeScale{0.1, 0.2, 0.1};
const std::array<double, kLidarChannels> kLidarScale{
    1.0 / 12.8, 1.0 / 12.8, 0.5, 1.0, 2.5, 2.5, 0.5, 2.5, 2.5, 0.5};

namespace {

constexpr std::uint64_t kPillarStream = 0x70696c6c6172ULL;
constexpr std::uint64_t kShapeStream = 0x7368617065ULL;

template <std::size_t C>
Tensor scaled(const Tensor& t, const std::array<double, C>& s, std::array<bool, C> keep = [] {
  std::array<bool, C> a{};
  a.fill(true);
  return a;
}()) {
  Tensor out = t;
  auto& v = out.storage();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t c = i % C;
    v[i] = keep[c] ? v[i] * s[c] : 0.0;
  }
  return out;
}

}  // namespace

FusionModel::FusionModel(Config cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  anchors_ = head::make_anchors(cfg_.grid, cfg_.model.anchors);
}

void FusionModel::init_params(ParameterStore& store, std::uint64_t seed) const {
  Initializer init(seed);
  irb::init_params(store, cfg_.irb_config(), init);
  bev::init_backbone(store, "lidar_backbone", cfg_.lidar_backbone(), init);
  bev::init_backbone(store, "radar_backbone", cfg_.radar_backbone(), init);
  salc::init_params(store, cfg_.salc_config(), init);
  head::init_params(store, cfg_.model.lidar_out_channels + cfg_.model.radar_out_channels, init);
}

FrameInputs FusionModel::prepare_inputs(const synth::Frame& frame) const {
  FrameInputs in;
  in.frame_id = frame.frame_id;
  const std::uint64_t base = derive_seed(derive_seed(cfg_.train.seed, kPillarStream), static_cast<std::uint64_t>(frame.frame_id));
  in.radar = build_pillars(std::span<const RadarPoint>(frame.radar), cfg_.grid, derive_seed(base, 0));
  in.lidar = build_pillars(std::span<const LidarPoint>(frame.lidar), cfg_.grid, derive_seed(base, 1));
  in.radar_spatial = scaled(in.radar.spatial, kRadarSpatialScale);
  in.radar_indicative =
      scaled(in.radar.indicative, kIndicativeScale, {cfg_.indicative.v_r, cfg_.indicative.v_a, cfg_.indicative.rcs});
  in.lidar_spatial = scaled(in.lidar.spatial, kLidarScale);
  in.labels = frame.labels;
  return in;
}

FrameTargets FusionModel::prepare_targets(const FrameInputs& in, std::vector<std::string>* warnings) const {
  FrameTargets t;
  t.anchors = head::assign_targets(anchors_.anchors, in.labels, cfg_.model.anchors);
  t.shape = salc::make_shape_targets(in.labels, cfg_.grid, kNumClasses, warnings);
  return t;
}

Forward FusionModel::forward(ad::Graph& g, ParameterStore& store, const FrameInputs& in) const {
  const Toggles& tg = cfg_.toggles;
  const irb::IrbWeights w = irb::IrbWeights::bind(g, store);
  Forward out;

  Var radar_s = g.constant(in.radar_spatial);
  Var radar_c = g.constant(in.radar_indicative);
  Var p_r_points;
  Var w_r_c_points;
  if (tg.irb_rr || tg.irb_rl) {
    const irb::RrOutput rr = irb::rr_branch(radar_s, radar_c, w);
    p_r_points = tg.irb_rr ? rr.p_r : rr.f_r_s;
    w_r_c_points = rr.w_r_c;
  } else {
    p_r_points = irb::point_mlp(radar_s, w.radar_w, w.radar_b);
  }
  out.radar_pillars = irb::pool_pillars(p_r_points, in.radar.num_points);

  Var lidar_s = g.constant(in.lidar_spatial);
  Var p_l_s = irb::pool_pillars(irb::point_mlp(lidar_s, w.lidar_w, w.lidar_b), in.lidar.num_points);
  if (tg.irb_rl) {
    Var w_pooled = irb::pool_pillars(w_r_c_points, in.radar.num_points);
    out.lidar_pillars = irb::rl_branch(p_l_s, w_pooled, w, cfg_.model.attention_softmax);
  } else {
    out.lidar_pillars = p_l_s;
  }

  bev::BevFeatureMap lidar_bev = bev::scatter_to_bev(out.lidar_pillars, in.lidar.coords, cfg_.grid, Modality::lidar);
  bev::BevFeatureMap radar_bev = bev::scatter_to_bev(out.radar_pillars, in.radar.coords, cfg_.grid, Modality::radar);
  lidar_bev = bev::backbone_forward(lidar_bev, g, store, "lidar_backbone");
  radar_bev = bev::backbone_forward(radar_bev, g, store, "radar_backbone");

  if (tg.salc) {
    out.shape = salc::shape_network(lidar_bev, g, store, cfg_.salc_config());
    radar_bev = salc::fuse_radar_bev(radar_bev, *out.shape, g, store);
  }
  const bev::BevFeatureMap fused{ad::concat({lidar_bev.features, radar_bev.features}, 0), Modality::lidar};
  out.head = head::head_forward(fused, g, store);
  return out;
}

Losses FusionModel::loss(const Forward& fwd, const FrameTargets& targets, std::int64_t frame_id) const {
  Losses l;
  l.rpn = head::rpn_loss(fwd.head, targets.anchors, cfg_.loss);
  if (cfg_.toggles.salc && fwd.shape) {
    const std::uint64_t seed =
        derive_seed(derive_seed(cfg_.train.seed, kShapeStream), static_cast<std::uint64_t>(frame_id));
    l.shape = salc::shape_loss(*fwd.shape, targets.shape, seed, cfg_.salc_config());
    l.total = head::final_loss(l.rpn.total, l.shape->total, cfg_.model.alpha);
  } else {
    l.total = l.rpn.total;
  }
  return l;
}

Prediction FusionModel::predict(ParameterStore& store, const FrameInputs& in) const {
  ad::Graph g;
  g.set_grad_enabled(false);
  const Forward fwd = forward(g, store, in);
  Prediction p;
  p.detections =
      head::decode_and_nms(fwd.head.cls.value(), fwd.head.box.value(), fwd.head.dir.value(), anchors_, cfg_.model.decode);
  if (fwd.shape) p.heat = fwd.shape->heat.value();
  return p;
}

}  // namespace rlf::model
