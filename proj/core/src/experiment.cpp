#include "rlf/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json_detail.hpp"
#include "rlf/checkpoint.hpp"
#include "rlf/errors.hpp"
#include "rlf/salc.hpp"
#include "rlf/train.hpp"

namespace rlf::experiment {

using detail::json;

std::string training_key(const Config& cfg) {
  Config c = cfg;
  c.name.clear();
  c.model.tau = 0.5;
  c.model.decode = {};
  c.eval = {};
  return config_to_json(c);
}

std::vector<AblationRow> run_ablation(const std::vector<Config>& configs, const std::vector<synth::Frame>& train_frames,
                                      const std::vector<synth::Frame>& val_frames, const AblationOptions& opts) {
  std::map<std::string, std::pair<ParameterStore, double>> trained;
  std::vector<AblationRow> rows;
  for (const Config& cfg : configs) {
    AblationRow row;
    row.name = cfg.name;
    row.config = cfg;
    const model::FusionModel model(cfg);
    const std::string key = training_key(cfg);
    auto it = trained.find(key);
    if (it == trained.end()) {
      if (opts.progress) opts.progress("training " + cfg.name);
      ParameterStore store;
      model.init_params(store, cfg.train.seed);
      train::TrainOptions to;
      std::ofstream log;
      if (!opts.out_dir.empty()) {
        const auto dir = opts.out_dir / cfg.name;
        std::filesystem::create_directories(dir);
        log.open(dir / "train.jsonl", std::ios::trunc);
        to.log = &log;
        to.checkpoint = dir / "model.json";
      }
      const train::TrainResult tr = train::train_model(model, store, train_frames, to);
      if (tr.numeric_failure) throw NumericError(cfg.name + ": " + tr.failure);
      const double last = tr.history.empty() ? 0.0 : tr.history.back().total;
      it = trained.emplace(key, std::make_pair(std::move(store), last)).first;
    } else {
      row.reused_training = true;
      if (opts.progress) opts.progress("reusing trained model for " + cfg.name);
    }
    ParameterStore& store = it->second.first;
    row.final_loss = it->second.second;

    const auto outputs = train::run_inference(model, store, val_frames);
    row.report = train::evaluate_outputs(outputs, val_frames, cfg.eval);
    for (const auto& r : row.report.regions) {
      if (r.region == "all") row.map_all = r.map.value_or(0.0);
      if (r.region == cfg.eval.corridor.name) row.map_corridor = r.map.value_or(0.0);
    }
    if (cfg.toggles.salc) {
      for (const auto& o : outputs) {
        row.mask_cells.push_back(
            o.prediction.heat ? salc::mask_count(salc::threshold_filter(*o.prediction.heat, cfg.model.tau)) : 0);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double mean_cells(const AblationRow& r) {
  if (r.mask_cells.empty()) return 0.0;
  double s = 0.0;
  for (auto c : r.mask_cells) s += static_cast<double>(c);
  return s / static_cast<double>(r.mask_cells.size());
}

std::string class_ap(const AblationRow& r, int cls) {
  for (const auto& reg : r.report.regions) {
    if (reg.region != "all") continue;
    auto it = reg.ap.find(std::string(class_name(cls)));
    if (it != reg.ap.end()) return fmt("%.2f", 100.0 * it->second);
  }
  return "-";
}

}  // namespace

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-20s %3s %3s %4s %3s %3s %3s %5s %7s %7s %7s %9s %9s %10s\n", "config", "RR", "RL",
                "SALC", "vr", "va", "rcs", "tau", "car", "ped", "cyc", "mAP", "mAP-corr", "mask-cells");
  os << line;
  auto mark = [](bool b) { return b ? "x" : "-"; };
  for (const auto& r : rows) {
    const Config& c = r.config;
    const std::string cells = c.toggles.salc ? fmt("%.1f", mean_cells(r)) : "-";
    std::snprintf(line, sizeof(line), "%-20s %3s %3s %4s %3s %3s %3s %5.2f %7s %7s %7s %9.2f %9.2f %10s\n",
                  r.name.c_str(), mark(c.toggles.irb_rr), mark(c.toggles.irb_rl), mark(c.toggles.salc),
                  mark(c.indicative.v_r), mark(c.indicative.v_a), mark(c.indicative.rcs), c.model.tau,
                  class_ap(r, kCar).c_str(), class_ap(r, kPedestrian).c_str(), class_ap(r, kCyclist).c_str(),
                  100.0 * r.map_all, 100.0 * r.map_corridor, cells.c_str());
    os << line;
  }
  return os.str();
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    const Config& c = r.config;
    arr.push_back({{"name", r.name},
                   {"toggles", {{"irb_rr", c.toggles.irb_rr}, {"irb_rl", c.toggles.irb_rl}, {"salc", c.toggles.salc}}},
                   {"indicative", {{"v_r", c.indicative.v_r}, {"v_a", c.indicative.v_a}, {"rcs", c.indicative.rcs}}},
                   {"tau", c.model.tau},
                   {"seed", c.train.seed},
                   {"report", json::parse(r.report.to_json())},
                   {"mAP", r.map_all},
                   {"mAP_corridor", r.map_corridor},
                   {"mask_cells", r.mask_cells},
                   {"final_loss", r.final_loss},
                   {"reused_training", r.reused_training}});
  }
  return arr.dump(2) + "\n";
}

}  // namespace rlf::experiment
