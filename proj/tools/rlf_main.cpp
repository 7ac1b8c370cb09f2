// rlf: data generation, training, evaluation, inference, gradient checks and
// ablations for the radar/LiDAR fusion detector.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlf/checkpoint.hpp"
#include "rlf/config.hpp"
#include "rlf/errors.hpp"
#include "rlf/experiment.hpp"
#include "rlf/frame_io.hpp"
#include "rlf/gradient_suite.hpp"
#include "rlf/infer.hpp"
#include "rlf/model.hpp"
#include "rlf/train.hpp"

namespace fs = std::filesystem;
using namespace rlf;

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ParseError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot write " + p.string());
  out << text;
}

Config resolve_config(const std::string& path) {
  Config cfg = path.empty() ? Config{} : load_config(path);
  apply_env_overrides(cfg);
  cfg.validate();
  return cfg;
}

Config config_from_checkpoint(const fs::path& ckpt) {
  const auto extra = nlohmann::json::parse(checkpoint_extra(ckpt));
  if (!extra.contains("config")) throw LoadError(ckpt.string() + ": checkpoint carries no config; pass --config");
  return config_from_json(extra["config"].dump());
}

std::vector<std::int64_t> split_ids(const synth::DatasetManifest& m, const std::string& split) {
  if (split == "train") return m.train;
  if (split == "val") return m.val;
  if (split == "all") {
    std::vector<std::int64_t> ids = m.train;
    ids.insert(ids.end(), m.val.begin(), m.val.end());
    return ids;
  }
  throw ConfigError("unknown split '" + split + "' (train, val, all)");
}

std::vector<synth::Frame> load_frames(const fs::path& data, const std::string& split, std::size_t limit) {
  const auto manifest = synth::read_manifest(data);
  auto ids = split_ids(manifest, split);
  if (limit && ids.size() > limit) ids.resize(limit);
  return synth::read_split(data, ids);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- gen-data

struct GenArgs {
  std::string out, spec;
  std::size_t frames = 250;
  long long val = -1;
  std::uint64_t seed = 0;
  bool force = false;
};

int cmd_gen_data(const GenArgs& a) {
  const fs::path out(a.out);
  if (fs::exists(out) && !fs::is_empty(out) && !a.force) {
    std::cerr << "error: " << out << " exists and is not empty (use --force)\n";
    return kConfigError;
  }
  synth::SceneSpec spec = a.spec.empty() ? synth::SceneSpec{} : synth::scene_spec_from_json(slurp(a.spec));
  spec.seed = a.seed;
  const std::size_t val = a.val < 0 ? a.frames / 5 : static_cast<std::size_t>(a.val);
  if (val > a.frames) throw ConfigError("--val exceeds --frames");
  if (a.force && fs::exists(out)) fs::remove_all(out);
  const auto m = synth::write_dataset(out, spec, a.frames, val);
  std::cout << "wrote " << a.frames << " frames (" << m.train.size() << " train, " << m.val.size() << " val) to "
            << out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config, data, out, split = "train";
  std::size_t limit = 0;
};

int cmd_train(const TrainArgs& a) {
  const Config cfg = resolve_config(a.config);
  const auto frames = load_frames(a.data, a.split, a.limit);
  if (frames.empty()) throw ParseError("split '" + a.split + "' of " + a.data + " is empty");
  const fs::path out(a.out);
  fs::create_directories(out);
  write_file(out / "config.json", config_to_json(cfg));

  const model::FusionModel m(cfg);
  ParameterStore store;
  m.init_params(store, cfg.train.seed);
  std::ofstream log(out / "train.jsonl", std::ios::trunc);
  train::TrainOptions opts;
  opts.log = &log;
  opts.checkpoint = out / "model.json";
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t every = std::max<std::size_t>(cfg.train.steps / 20, 1);
  opts.on_step = [&](const train::StepLog& s) {
    if (s.step % every == 0 || s.step + 1 == cfg.train.steps) {
      std::fprintf(stderr, "step %6zu  lr %.5f  loss %.5f  rpn %.5f  shape %.5f  mccont %.5f  (%.0fs)\n", s.step, s.lr,
                   s.total, s.rpn, s.shape_cls, s.mccont, seconds_since(t0));
    }
  };
  const auto r = train::train_model(m, store, frames, opts);
  if (r.numeric_failure) {
    std::cerr << "error: numeric failure: " << r.failure << "; last good checkpoint at " << opts.checkpoint << "\n";
    return kNumericError;
  }
  std::cerr << "trained " << r.steps_completed << " steps on " << frames.size() << " frames in " << seconds_since(t0)
            << "s; checkpoint " << opts.checkpoint.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt, dets, config, data, split = "val", region = "both", out;
  std::size_t limit = 0;
};

int cmd_eval(const EvalArgs& a) {
  if (a.ckpt.empty() == a.dets.empty()) throw ConfigError("eval needs exactly one of --ckpt or --dets");
  const auto frames = load_frames(a.data, a.split, a.limit);
  Config cfg;
  if (!a.config.empty()) {
    cfg = resolve_config(a.config);
  } else if (!a.ckpt.empty()) {
    cfg = config_from_checkpoint(a.ckpt);
  }
  std::vector<train::FrameOutput> outputs;
  if (!a.ckpt.empty()) {
    const model::FusionModel m(cfg);
    ParameterStore store;
    m.init_params(store, 0);
    load_checkpoint(a.ckpt, store);
    outputs = train::run_inference(m, store, frames);
  } else {
    for (auto& [id, dets] : infer::read_detections(a.dets)) {
      train::FrameOutput o;
      o.frame_id = id;
      o.prediction.detections = std::move(dets);
      outputs.push_back(std::move(o));
    }
  }
  eval::MapReport report = train::evaluate_outputs(outputs, frames, cfg.eval);
  if (a.region != "both") {
    if (a.region != "all" && a.region != "corridor") throw ConfigError("--region must be all, corridor or both");
    std::erase_if(report.regions, [&](const eval::RegionReport& r) { return r.region != a.region; });
  }
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << report.to_table();
  if (!a.out.empty()) write_file(a.out, report.to_json());
  return kOk;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string ckpt, config, frame, out, heatmaps;
};

int cmd_infer(const InferArgs& a) {
  const Config cfg = a.config.empty() ? config_from_checkpoint(a.ckpt) : resolve_config(a.config);
  const model::FusionModel m(cfg);
  ParameterStore store;
  m.init_params(store, 0);
  load_checkpoint(a.ckpt, store);
  const synth::Frame frame = synth::read_frame(a.frame);
  std::vector<train::FrameOutput> outputs{{frame.frame_id, m.predict(store, m.prepare_inputs(frame))}};
  if (a.out.empty()) {
    infer::write_detections(std::cout, outputs);
  } else {
    std::ofstream out(a.out, std::ios::trunc);
    infer::write_detections(out, outputs);
  }
  if (!a.heatmaps.empty()) {
    if (!outputs[0].prediction.heat) {
      std::cerr << "warning: SALC is disabled in this config; no heatmaps to write\n";
    } else {
      infer::write_heatmaps(a.heatmaps, synth::frame_filename(frame.frame_id).substr(0, 6), *outputs[0].prediction.heat,
                            cfg.model.tau);
    }
  }
  return kOk;
}

// ---------------------------------------------------------------- grad-check

int cmd_grad_check(std::uint64_t seed, double tol) {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  for (const auto& c : gradients::run_full_suite(seed, tol)) {
    std::printf("%-28s %s  max_rel_err %.3e  (%zu elements, worst %s[%zu])\n", c.name.c_str(),
                c.passed ? "ok  " : "FAIL", c.check.max_rel_error, c.check.elements_checked,
                c.check.worst_parameter.c_str(), c.check.worst_index);
    ok = ok && c.passed;
  }
  std::printf("%s in %.1fs\n", ok ? "all gradient checks passed" : "gradient check FAILED", seconds_since(t0));
  return ok ? kOk : kNumericError;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::vector<std::string> configs;
  std::string preset, base, data, out;
  std::vector<std::uint64_t> seeds;
  std::size_t limit_train = 0, limit_val = 0;
};

std::vector<Config> preset_configs(const std::string& preset, const Config& base) {
  std::vector<Config> out;
  auto make = [&](const std::string& name, auto&& edit) {
    Config c = base;
    c.name = name;
    edit(c);
    out.push_back(c);
  };
  if (preset == "modules") {
    make("baseline", [](Config& c) { c.toggles = {false, false, false}; });
    make("rr", [](Config& c) { c.toggles = {true, false, false}; });
    make("rr+rl", [](Config& c) { c.toggles = {true, true, false}; });
    make("salc", [](Config& c) { c.toggles = {false, false, true}; });
    make("full", [](Config& c) { c.toggles = {true, true, true}; });
  } else if (preset == "indicative") {
    make("v_r", [](Config& c) { c.indicative = {true, false, false}; });
    make("v_a", [](Config& c) { c.indicative = {false, true, false}; });
    make("rcs", [](Config& c) { c.indicative = {false, false, true}; });
    make("v_r+v_a", [](Config& c) { c.indicative = {true, true, false}; });
    make("v_a+rcs", [](Config& c) { c.indicative = {false, true, true}; });
    make("v_r+v_a+rcs", [](Config& c) { c.indicative = {true, true, true}; });
  } else if (preset == "tau") {
    for (double tau : {0.05, 0.1, 0.2}) {
      char name[32];
      std::snprintf(name, sizeof(name), "tau=%.2f", tau);
      make(name, [tau](Config& c) { c.model.tau = tau; });
    }
  } else {
    throw ConfigError("unknown preset '" + preset + "' (modules, indicative, tau)");
  }
  return out;
}

int cmd_ablate(const AblateArgs& a) {
  std::vector<Config> configs;
  if (!a.preset.empty()) {
    configs = preset_configs(a.preset, resolve_config(a.base));
  }
  for (const auto& p : a.configs) {
    Config c = resolve_config(p);
    if (c.name == "default") c.name = fs::path(p).stem().string();
    configs.push_back(c);
  }
  if (configs.empty()) throw ConfigError("ablate needs --configs or --preset");
  if (!a.seeds.empty()) {
    std::vector<Config> seeded;
    for (const auto& c : configs) {
      for (auto s : a.seeds) {
        Config x = c;
        x.train.seed = s;
        x.name = c.name + "/seed" + std::to_string(s);
        seeded.push_back(x);
      }
    }
    configs = std::move(seeded);
  }
  const auto train_frames = load_frames(a.data, "train", a.limit_train);
  const auto val_frames = load_frames(a.data, "val", a.limit_val);
  experiment::AblationOptions opts;
  if (!a.out.empty()) {
    opts.out_dir = a.out;
    fs::create_directories(opts.out_dir);
  }
  const auto t0 = std::chrono::steady_clock::now();
  opts.progress = [&](const std::string& msg) { std::fprintf(stderr, "[%.0fs] %s\n", seconds_since(t0), msg.c_str()); };
  const auto rows = experiment::run_ablation(configs, train_frames, val_frames, opts);
  const std::string table = experiment::ablation_table(rows);
  std::cout << table;
  if (!a.out.empty()) {
    write_file(opts.out_dir / "ablation.txt", table);
    write_file(opts.out_dir / "ablation.json", experiment::ablation_json(rows));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rlf: radar/LiDAR fusion detector toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic paired radar/LiDAR dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--frames", gen.frames, "Number of frames")->capture_default_str();
  g->add_option("--val", gen.val, "Validation frames (default: frames / 5)");
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--spec", gen.spec, "Scene spec JSON");
  g->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Config JSON (defaults when omitted)");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--split", tr.split, "train | val | all")->capture_default_str();
  t->add_option("--limit", tr.limit, "Use only the first N frames of the split");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or a detections file");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint manifest (model.json)");
  e->add_option("--dets", ev.dets, "Detections JSON-lines file");
  e->add_option("--config", ev.config, "Config JSON (defaults to the checkpoint's)");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--split", ev.split, "train | val | all")->capture_default_str();
  e->add_option("--limit", ev.limit, "Use only the first N frames of the split");
  e->add_option("--region", ev.region, "all | corridor | both")->capture_default_str();
  e->add_option("--out", ev.out, "Write the JSON report here");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Run detection on one frame file");
  i->add_option("--ckpt", inf.ckpt, "Checkpoint manifest")->required();
  i->add_option("--config", inf.config, "Config JSON (defaults to the checkpoint's)");
  i->add_option("--frame", inf.frame, "Frame JSON")->required();
  i->add_option("--out", inf.out, "Detections output (default stdout)");
  i->add_option("--heatmaps", inf.heatmaps, "Directory for shape heatmap and tau-mask PGMs");

  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every op, module and the full loss");
  gc->add_option("--seed", gc_seed)->capture_default_str();
  gc->add_option("--tolerance", gc_tol)->capture_default_str();

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train and evaluate a set of configs");
  a->add_option("--configs", ab.configs, "Config JSON files");
  a->add_option("--preset", ab.preset, "modules | indicative | tau");
  a->add_option("--base", ab.base, "Base config for --preset");
  a->add_option("--seeds", ab.seeds, "Repeat every config over these training seeds")->delimiter(',');
  a->add_option("--data", ab.data, "Dataset directory")->required();
  a->add_option("--out", ab.out, "Output directory for logs, checkpoints and reports");
  a->add_option("--limit-train", ab.limit_train, "Use only the first N training frames");
  a->add_option("--limit-val", ab.limit_val, "Use only the first N validation frames");

  CLI11_PARSE(app, argc, argv);

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (i->parsed()) return cmd_infer(inf);
    if (gc->parsed()) return cmd_grad_check(gc_seed, gc_tol);
    if (a->parsed()) return cmd_ablate(ab);
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kConfigError;
  } catch (const ParseError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kDataError;
  } catch (const LoadError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kDataError;
  } catch (const NumericError& ex) {
    std::cerr << "numeric error: " << ex.what() << "\n";
    return kNumericError;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
