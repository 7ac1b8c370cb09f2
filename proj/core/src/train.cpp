#include "rlf/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "json_detail.hpp"
#include "rlf/checkpoint.hpp"
#include "rlf/errors.hpp"
#include "rlf/ops.hpp"
#include "rlf/random.hpp"

namespace rlf::train {
namespace {

constexpr std::uint64_t kOrderStream = 0x6f72646572ULL;

struct Prepared {
  model::FrameInputs inputs;
  model::FrameTargets targets;
};

double global_norm(const ParameterStore& store) {
  double s = 0.0;
  for (const auto& [name, p] : store.items()) {
    for (double g : p.grad.data()) s += g * g;
  }
  return std::sqrt(s);
}

std::string checkpoint_extra_json(const Config& cfg, std::size_t step) {
  detail::json j = {{"step", step}, {"config", detail::json::parse(config_to_json(cfg))}};
  return j.dump();
}

}  // namespace

std::string step_log_json(const StepLog& s) {
  detail::json j = {{"step", s.step},       {"lr", s.lr},           {"loss", s.total},
                    {"L_RPN", s.rpn},       {"rpn_cls", s.rpn_cls}, {"rpn_box", s.rpn_box},
                    {"rpn_dir", s.rpn_dir}, {"L_cls_shape", s.shape_cls}, {"L_MCcont", s.mccont},
                    {"grad_norm", s.grad_norm}};
  return j.dump();
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step) {
  if (step < cfg.warmup_steps) {
    return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.schedule == "constant" || cfg.steps <= cfg.warmup_steps) return cfg.learning_rate;
  const double t = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.steps - cfg.warmup_steps);
  const double lo = cfg.final_lr_fraction;
  return cfg.learning_rate * (lo + (1.0 - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(t, 1.0))));
}

TrainResult train_model(const model::FusionModel& model, ParameterStore& store, const std::vector<synth::Frame>& frames,
                        const TrainOptions& opts) {
  const Config& cfg = model.config();
  const TrainConfig& tc = cfg.train;
  if (frames.empty()) throw ConfigError("training needs at least one frame");

  std::vector<Prepared> data;
  data.reserve(frames.size());
  for (const auto& f : frames) {
    Prepared p{model.prepare_inputs(f), {}};
    p.targets = model.prepare_targets(p.inputs);
    data.push_back(std::move(p));
  }

  std::map<std::string, Tensor> velocity;
  for (const auto& [name, p] : store.items()) velocity.emplace(name, Tensor(p.value.shape(), 0.0));

  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  std::size_t epoch = 0;
  auto next_frame = [&]() {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(derive_seed(tc.seed, kOrderStream), epoch++));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  auto fail = [&](const std::string& why) {
    result.numeric_failure = true;
    result.failure = why;
    if (!opts.checkpoint.empty()) save_checkpoint(opts.checkpoint, store, checkpoint_extra_json(cfg, result.steps_completed));
    return result;
  };

  for (std::size_t step = 0; step < tc.steps; ++step) {
    store.zero_grad();
    StepLog log;
    log.step = step;
    log.lr = learning_rate_at(tc, step);
    const double inv_b = 1.0 / static_cast<double>(tc.batch_size);
    try {
      for (std::size_t b = 0; b < tc.batch_size; ++b) {
        const Prepared& p = data[next_frame()];
        ad::Graph g;
        const model::Forward fwd = model.forward(g, store, p.inputs);
        const model::Losses l = model.loss(fwd, p.targets, p.inputs.frame_id);
        g.backward(ad::scale(l.total, inv_b));
        log.total += l.total.value().item() * inv_b;
        log.rpn += l.rpn.total.value().item() * inv_b;
        log.rpn_cls += l.rpn.cls.value().item() * inv_b;
        log.rpn_box += l.rpn.box.value().item() * inv_b;
        log.rpn_dir += l.rpn.dir.value().item() * inv_b;
        if (l.shape) {
          log.shape_cls += l.shape->focal.value().item() * inv_b;
          log.mccont += l.shape->mccont.value().item() * inv_b;
        }
      }
    } catch (const NumericError& e) {
      return fail(std::string("step ") + std::to_string(step) + ": " + e.what());
    }
    log.grad_norm = global_norm(store);
    if (!std::isfinite(log.grad_norm)) return fail("step " + std::to_string(step) + ": non-finite gradient");
    const double clip = (tc.grad_clip > 0.0 && log.grad_norm > tc.grad_clip) ? tc.grad_clip / log.grad_norm : 1.0;

    const std::map<std::string, Tensor> saved_velocity = velocity;
    std::map<std::string, Tensor> saved_values;
    bool finite = true;
    for (auto& [name, p] : store.items()) {
      saved_values.emplace(name, p.value);
      auto& v = velocity.at(name).storage();
      auto& x = p.value.storage();
      const auto& gr = p.grad.data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        v[i] = tc.momentum * v[i] + gr[i] * clip + tc.weight_decay * x[i];
        x[i] -= log.lr * v[i];
        finite = finite && std::isfinite(x[i]);
      }
    }
    if (!finite) {
      for (auto& [name, p] : store.items()) p.value = saved_values.at(name);
      velocity = saved_velocity;
      return fail("step " + std::to_string(step) + ": update produced non-finite parameters");
    }
    result.steps_completed = step + 1;
    result.history.push_back(log);
    if (opts.log && (step % std::max<std::size_t>(tc.log_every, 1) == 0 || step + 1 == tc.steps)) {
      *opts.log << step_log_json(log) << '\n';
    }
    if (opts.on_step) opts.on_step(log);
    if (!opts.checkpoint.empty() && tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0) {
      save_checkpoint(opts.checkpoint, store, checkpoint_extra_json(cfg, step + 1));
    }
  }
  if (!opts.checkpoint.empty()) save_checkpoint(opts.checkpoint, store, checkpoint_extra_json(cfg, result.steps_completed));
  return result;
}

std::vector<FrameOutput> run_inference(const model::FusionModel& model, ParameterStore& store,
                                       const std::vector<synth::Frame>& frames) {
  std::vector<FrameOutput> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back({f.frame_id, model.predict(store, model.prepare_inputs(f))});
  return out;
}

eval::MapReport evaluate_outputs(const std::vector<FrameOutput>& outputs, const std::vector<synth::Frame>& frames,
                                 const eval::EvalConfig& cfg) {
  std::map<std::int64_t, const FrameOutput*> by_id;
  for (const auto& o : outputs) by_id[o.frame_id] = &o;
  std::vector<eval::EvalFrame> ev;
  ev.reserve(frames.size());
  for (const auto& f : frames) {
    eval::EvalFrame e;
    e.frame_id = f.frame_id;
    e.ground_truth = f.labels;
    if (auto it = by_id.find(f.frame_id); it != by_id.end()) e.detections = it->second->prediction.detections;
    ev.push_back(std::move(e));
  }
  return eval::evaluate(ev, cfg);
}

double overall_map(const eval::MapReport& report) {
  for (const auto& r : report.regions) {
    if (r.region == "all") return r.map.value_or(0.0);
  }
  return 0.0;
}

}  // namespace rlf::train
