#include "rlf/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json_detail.hpp"
#include "rlf/errors.hpp"

namespace rlf {
namespace {

using detail::json;

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

// Every key of `patch` must exist in `base`; objects merge recursively.
void merge_known(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config field '" + path + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    auto it = base.find(key);
    if (it == base.end()) throw ConfigError("unknown config field '" + where + "'");
    if (it->is_object()) {
      merge_known(*it, value, where);
    } else {
      *it = value;
    }
  }
}

template <typename T>
T field(const json& j, const std::string& path) {
  const json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    cur = &(*cur)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return cur->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + path + "' has the wrong type");
  }
}

json to_json_tree(const Config& c) {
  json anchors = json::object();
  for (int k = 0; k < kNumClasses; ++k) {
    const auto& a = c.model.anchors.classes[static_cast<std::size_t>(k)];
    anchors[std::string(class_name(k))] = {
        {"size", {a.l, a.w, a.h}}, {"z_center", a.z_center}, {"match_iou", a.match_iou}, {"unmatch_iou", a.unmatch_iou}};
  }
  json iou = json::object();
  for (int k = 0; k < kNumClasses; ++k) iou[std::string(class_name(k))] = c.eval.iou_threshold[static_cast<std::size_t>(k)];
  const auto& g = c.grid;
  const auto& m = c.model;
  const auto& t = c.train;
  const auto& corr = c.eval.corridor;
  return {
      {"name", c.name},
      {"grid",
       {{"x_range", {g.x_min, g.x_max}},
        {"y_range", {g.y_min, g.y_max}},
        {"z_range", {g.z_min, g.z_max}},
        {"pillar_size", g.pillar_size},
        {"max_pillars", g.max_pillars},
        {"max_points_per_pillar", g.max_points_per_pillar}}},
      {"model",
       {{"d", m.d},
        {"weight_hidden", m.weight_hidden},
        {"attention_softmax", m.attention_softmax},
        {"lidar_block_channels", m.lidar_block_channels},
        {"lidar_out_channels", m.lidar_out_channels},
        {"radar_block_channels", m.radar_block_channels},
        {"radar_out_channels", m.radar_out_channels},
        {"shape_hidden", m.shape_hidden},
        {"tau", m.tau},
        {"alpha", m.alpha},
        {"mccont_normalize", m.mccont_normalize},
        {"anchors", anchors},
        {"anchor_yaws", m.anchors.yaws},
        {"decode",
         {{"score_threshold", m.decode.score_threshold},
          {"nms_iou", m.decode.nms_iou},
          {"max_detections", m.decode.max_detections},
          {"pre_nms_top_k", m.decode.pre_nms_top_k}}}}},
      {"train",
       {{"steps", t.steps},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"warmup_steps", t.warmup_steps},
        {"schedule", t.schedule},
        {"final_lr_fraction", t.final_lr_fraction},
        {"grad_clip", t.grad_clip},
        {"seed", t.seed},
        {"log_every", t.log_every},
        {"checkpoint_every", t.checkpoint_every}}},
      {"loss",
       {{"cls", c.loss.cls},
        {"box", c.loss.box},
        {"dir", c.loss.dir},
        {"focal_alpha", c.loss.focal_alpha},
        {"focal_gamma", c.loss.focal_gamma},
        {"smooth_l1_beta", c.loss.smooth_l1_beta}}},
      {"eval",
       {{"iou_threshold", iou},
        {"recall_points", c.eval.recall_points},
        {"corridor", {{"x_range", {corr.x_min, corr.x_max}}, {"y_range", {corr.y_min, corr.y_max}}}}}},
      {"toggles", {{"irb_rr", c.toggles.irb_rr}, {"irb_rl", c.toggles.irb_rl}, {"salc", c.toggles.salc}}},
      {"indicative", {{"v_r", c.indicative.v_r}, {"v_a", c.indicative.v_a}, {"rcs", c.indicative.rcs}}},
  };
}

Config from_json_tree(const json& j) {
  Config c;
  c.name = field<std::string>(j, "name");
  auto& g = c.grid;
  auto xr = field<std::array<double, 2>>(j, "grid.x_range");
  auto yr = field<std::array<double, 2>>(j, "grid.y_range");
  auto zr = field<std::array<double, 2>>(j, "grid.z_range");
  g.x_min = xr[0], g.x_max = xr[1], g.y_min = yr[0], g.y_max = yr[1], g.z_min = zr[0], g.z_max = zr[1];
  g.pillar_size = field<double>(j, "grid.pillar_size");
  g.max_pillars = field<int>(j, "grid.max_pillars");
  g.max_points_per_pillar = field<int>(j, "grid.max_points_per_pillar");

  auto& m = c.model;
  m.d = field<std::size_t>(j, "model.d");
  m.weight_hidden = field<std::size_t>(j, "model.weight_hidden");
  m.attention_softmax = field<bool>(j, "model.attention_softmax");
  m.lidar_block_channels = field<std::size_t>(j, "model.lidar_block_channels");
  m.lidar_out_channels = field<std::size_t>(j, "model.lidar_out_channels");
  m.radar_block_channels = field<std::size_t>(j, "model.radar_block_channels");
  m.radar_out_channels = field<std::size_t>(j, "model.radar_out_channels");
  m.shape_hidden = field<std::size_t>(j, "model.shape_hidden");
  m.tau = field<double>(j, "model.tau");
  m.alpha = field<double>(j, "model.alpha");
  m.mccont_normalize = field<bool>(j, "model.mccont_normalize");
  for (int k = 0; k < kNumClasses; ++k) {
    const std::string base = "model.anchors." + std::string(class_name(k));
    auto& a = m.anchors.classes[static_cast<std::size_t>(k)];
    const auto size = field<std::array<double, 3>>(j, base + ".size");
    a.l = size[0], a.w = size[1], a.h = size[2];
    a.z_center = field<double>(j, base + ".z_center");
    a.match_iou = field<double>(j, base + ".match_iou");
    a.unmatch_iou = field<double>(j, base + ".unmatch_iou");
  }
  m.anchors.yaws = field<std::array<double, 2>>(j, "model.anchor_yaws");
  m.decode.score_threshold = field<double>(j, "model.decode.score_threshold");
  m.decode.nms_iou = field<double>(j, "model.decode.nms_iou");
  m.decode.max_detections = field<std::size_t>(j, "model.decode.max_detections");
  m.decode.pre_nms_top_k = field<std::size_t>(j, "model.decode.pre_nms_top_k");

  auto& t = c.train;
  t.steps = field<std::size_t>(j, "train.steps");
  t.batch_size = field<std::size_t>(j, "train.batch_size");
  t.learning_rate = field<double>(j, "train.learning_rate");
  t.momentum = field<double>(j, "train.momentum");
  t.weight_decay = field<double>(j, "train.weight_decay");
  t.warmup_steps = field<std::size_t>(j, "train.warmup_steps");
  t.schedule = field<std::string>(j, "train.schedule");
  t.final_lr_fraction = field<double>(j, "train.final_lr_fraction");
  t.grad_clip = field<double>(j, "train.grad_clip");
  t.seed = field<std::uint64_t>(j, "train.seed");
  t.log_every = field<std::size_t>(j, "train.log_every");
  t.checkpoint_every = field<std::size_t>(j, "train.checkpoint_every");

  c.loss.cls = field<double>(j, "loss.cls");
  c.loss.box = field<double>(j, "loss.box");
  c.loss.dir = field<double>(j, "loss.dir");
  c.loss.focal_alpha = field<double>(j, "loss.focal_alpha");
  c.loss.focal_gamma = field<double>(j, "loss.focal_gamma");
  c.loss.smooth_l1_beta = field<double>(j, "loss.smooth_l1_beta");

  for (int k = 0; k < kNumClasses; ++k) {
    c.eval.iou_threshold[static_cast<std::size_t>(k)] =
        field<double>(j, "eval.iou_threshold." + std::string(class_name(k)));
  }
  c.eval.recall_points = field<std::size_t>(j, "eval.recall_points");
  const auto cx = field<std::array<double, 2>>(j, "eval.corridor.x_range");
  const auto cy = field<std::array<double, 2>>(j, "eval.corridor.y_range");
  c.eval.corridor = eval::Region::corridor(cx[0], cx[1], cy[0], cy[1]);

  c.toggles.irb_rr = field<bool>(j, "toggles.irb_rr");
  c.toggles.irb_rl = field<bool>(j, "toggles.irb_rl");
  c.toggles.salc = field<bool>(j, "toggles.salc");
  c.indicative.v_r = field<bool>(j, "indicative.v_r");
  c.indicative.v_a = field<bool>(j, "indicative.v_a");
  c.indicative.rcs = field<bool>(j, "indicative.rcs");
  return c;
}

}  // namespace

void Config::validate() const {
  try {
    grid.validate();
    model.anchors.validate();
    eval.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  check(model.tau > 0.0 && model.tau < 1.0, "model.tau must lie in (0, 1)");
  check(model.alpha >= 0.0, "model.alpha must be >= 0");
  check(model.d > 0 && model.weight_hidden > 0 && model.shape_hidden > 0, "model widths must be positive");
  check(model.lidar_block_channels > 0 && model.lidar_out_channels > 0 && model.radar_block_channels > 0 &&
            model.radar_out_channels > 0,
        "backbone widths must be positive");
  check(model.decode.score_threshold > 0.0 && model.decode.score_threshold < 1.0,
        "model.decode.score_threshold must lie in (0, 1)");
  check(model.decode.nms_iou > 0.0 && model.decode.nms_iou < 1.0, "model.decode.nms_iou must lie in (0, 1)");
  check(train.batch_size >= 1, "train.batch_size must be >= 1");
  check(train.learning_rate > 0.0, "train.learning_rate must be positive");
  check(train.momentum >= 0.0 && train.momentum < 1.0, "train.momentum must lie in [0, 1)");
  check(train.weight_decay >= 0.0, "train.weight_decay must be >= 0");
  check(train.schedule == "cosine" || train.schedule == "constant", "train.schedule must be cosine or constant");
  check(train.final_lr_fraction >= 0.0 && train.final_lr_fraction <= 1.0, "train.final_lr_fraction must lie in [0, 1]");
  check(train.grad_clip >= 0.0, "train.grad_clip must be >= 0");
  check(loss.cls >= 0.0 && loss.box >= 0.0 && loss.dir >= 0.0, "loss weights must be >= 0");
  check(loss.smooth_l1_beta > 0.0, "loss.smooth_l1_beta must be positive");
}

irb::IrbConfig Config::irb_config() const {
  irb::IrbConfig c;
  c.d = model.d;
  c.weight_hidden = model.weight_hidden;
  c.attention_softmax = model.attention_softmax;
  return c;
}

bev::BackboneConfig Config::lidar_backbone() const {
  return {model.d, model.lidar_block_channels, model.lidar_out_channels};
}

bev::BackboneConfig Config::radar_backbone() const {
  return {model.d, model.radar_block_channels, model.radar_out_channels};
}

salc::SalcConfig Config::salc_config() const {
  salc::SalcConfig c;
  c.in_channels = model.lidar_out_channels;
  c.hidden = model.shape_hidden;
  c.radar_channels = model.radar_out_channels;
  c.tau = model.tau;
  c.normalize_embeddings = model.mccont_normalize;
  return c;
}

std::string config_to_json(const Config& cfg) { return to_json_tree(cfg).dump(2) + "\n"; }

Config config_from_json(const std::string& text) {
  json parsed;
  try {
    parsed = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  json tree = to_json_tree(Config{});
  merge_known(tree, parsed, "");
  Config c = from_json_tree(tree);
  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void apply_env_overrides(Config& cfg) {
  const char* s = std::getenv("MF_SEED");
  if (!s || !*s) return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || *end != '\0' || s[0] == '-') throw ConfigError(std::string("MF_SEED is not an unsigned integer: ") + s);
  cfg.train.seed = v;
}

}  // namespace rlf
