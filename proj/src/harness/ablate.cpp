// SPDX-License-Identifier: Apache-2.0
#include "protoocc/ablate.hpp"

#include <cmath>
#include <cstdio>

#include "protoocc/errors.hpp"

namespace protoocc::harness {

using nlohmann::json;

namespace {

json branch(const char* kind) {
  if (std::string(kind) == "dropout") return json::array({{{"kind", "random_dropout"}}});
  if (std::string(kind) == "noise") return json::array({{{"kind", "gaussian_noise"}}});
  if (std::string(kind) == "transpose") return json::array({{{"kind", "transpose"}}});
  return json::array({{{"kind", "flip"}}});
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string augmentation_label(const ExperimentConfig& cfg) {
  if (!cfg.ablation.mod || cfg.augmentation.empty()) return "none";
  std::string out;
  for (const auto& b : cfg.augmentation) {
    if (!out.empty()) out += "+";
    for (std::size_t i = 0; i < b.size(); ++i) out += (i ? "&" : "") + decoder::to_string(b[i].kind);
  }
  return out;
}

// Everything prepare_scene reads; runs that agree on it share prepared scenes.
std::string preparation_key(const ExperimentConfig& cfg) {
  const json j = to_json(cfg);
  json m = j.at("model");
  for (const char* k : {"d", "encoder_layers", "n_points", "eps"}) m.erase(k);
  return json{{"scene", j.at("scene")}, {"cameras", j.at("cameras")}, {"render", j.at("render")}, {"model", m}}.dump();
}

}  // namespace

std::size_t prototype_count(const ExperimentConfig& cfg) {
  const auto r = cfg.model.proto_ratio;
  return ((cfg.cameras.image_height + r - 1) / r) * ((cfg.cameras.image_width + r - 1) / r);
}

AblationGrid model_design_grid() {
  auto row = [](const char* name, bool mapping, bool optimization, bool mod) {
    return AblationRow{name, json{{"ablation.proto_mapping", mapping},
                                  {"ablation.proto_optimization", optimization},
                                  {"ablation.mod", mod}}};
  };
  return {"table4",
          {row("baseline", false, false, false), row("mapping", true, false, false),
           row("mapping+optimization", true, true, false), row("mod", false, false, true),
           row("full", true, true, true)}};
}

AblationGrid augmentation_grid() {
  const std::vector<std::vector<const char*>> combos = {
      {},           {"dropout"},          {"noise"},          {"transpose"},          {"flip"},
      {"dropout", "transpose"}, {"dropout", "flip"}, {"noise", "transpose"}, {"noise", "flip"},
      {"dropout", "noise"},     {"transpose", "flip"}};
  AblationGrid g{"table5", {}};
  for (const auto& combo : combos) {
    json plan = json::array();
    std::string name;
    for (const char* k : combo) {
      plan.push_back(branch(k));
      name += (name.empty() ? "" : "+") + std::string(k);
    }
    if (name.empty()) name = "none";
    for (bool cr : {false, true}) {
      g.rows.push_back({name + (cr ? "/cr" : "/no-cr"),
                        json{{"ablation.proto_mapping", true},
                             {"ablation.proto_optimization", true},
                             {"ablation.mod", true},
                             {"augmentation", plan},
                             {"loss.lambda_cons", cr ? 1.0 : 0.0}}});
    }
  }
  return g;
}

AblationGrid prototype_count_grid() {
  AblationGrid g{"table6", {}};
  for (std::size_t r : {2, 4, 6, 8}) g.rows.push_back({"r=" + std::to_string(r), json{{"model.proto_ratio", r}}});
  return g;
}

AblationGrid grid_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("ablation grid must be a JSON object");
  if (j.contains("preset")) {
    if (j.size() != 1) throw ConfigError("a preset grid takes no other keys");
    const auto p = j.at("preset").get<std::string>();
    if (p == "table4") return model_design_grid();
    if (p == "table5") return augmentation_grid();
    if (p == "table6") return prototype_count_grid();
    throw ConfigError("unknown grid preset '" + p + "'");
  }
  AblationGrid g;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "table" && it.key() != "rows") throw ConfigError("unknown key '" + it.key() + "' in ablation grid");
  g.table = j.value("table", std::string("custom"));
  if (!j.contains("rows") || !j.at("rows").is_array() || j.at("rows").empty())
    throw ConfigError("ablation grid needs a non-empty 'rows' array");
  for (const auto& r : j.at("rows")) {
    if (!r.is_object() || !r.contains("name")) throw ConfigError("every grid row needs a 'name'");
    for (auto it = r.begin(); it != r.end(); ++it)
      if (it.key() != "name" && it.key() != "set") throw ConfigError("unknown key '" + it.key() + "' in grid row");
    json set = r.value("set", json::object());
    if (!set.is_object()) throw ConfigError("grid row 'set' must be an object of dotted keys");
    g.rows.push_back({r.at("name").get<std::string>(), set});
  }
  return g;
}

std::string AblationResult::to_csv() const {
  std::string out =
      "table,row,seed,mapping,optimization,mod,augmentation,cr,proto_ratio,num_prototypes,miou,iou";
  for (std::size_t c = 1; c < num_classes; ++c) out += ",iou_c" + std::to_string(c);
  out += ",final_loss,final_disagreement\n";
  for (const auto& r : runs) {
    const auto& c = r.config;
    out += r.table + "," + r.row + "," + std::to_string(r.seed) + "," + std::to_string(c.ablation.proto_mapping) + "," +
           std::to_string(c.ablation.proto_optimization) + "," + std::to_string(c.ablation.mod) + "," +
           augmentation_label(c) + "," + std::to_string(c.loss.weights.consistency > 0) + "," +
           std::to_string(c.model.proto_ratio) + "," + std::to_string(prototype_count(c)) + "," +
           fmt(r.metrics.miou) + "," + fmt(r.metrics.iou);
    for (std::size_t k = 1; k < num_classes; ++k) {
      out += ",";
      if (k < r.metrics.per_class.size() && r.metrics.per_class[k]) out += fmt(*r.metrics.per_class[k]);
    }
    out += "," + (r.final_epoch ? fmt(r.final_epoch->train.total) : std::string()) + "," +
           (r.final_epoch ? fmt(r.final_epoch->train.disagreement) : std::string()) + "\n";
  }
  return out;
}

std::string AblationResult::summary() const {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunRecord*>> by_row;
  for (const auto& r : runs) {
    const auto key = r.table + "/" + r.row;
    if (!by_row.count(key)) order.push_back(key);
    by_row[key].push_back(&r);
  }
  auto stats = [](const std::vector<double>& v) {
    double mean = 0, var = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    return std::pair{mean, sd};
  };
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-36s %5s  %-17s  %-17s\n", "row", "seeds", "mIoU", "IoU");
  out += line;
  for (const auto& key : order) {
    std::vector<double> m, o;
    for (const auto* r : by_row[key]) {
      m.push_back(r->metrics.miou);
      o.push_back(r->metrics.iou);
    }
    const auto [mm, ms] = stats(m);
    const auto [om, os] = stats(o);
    std::snprintf(line, sizeof line, "%-36s %5zu  %.4f +- %.4f  %.4f +- %.4f\n", key.c_str(), m.size(), mm, ms, om, os);
    out += line;
  }
  return out;
}

AblationResult ablate(const ExperimentConfig& base, const AblationGrid& grid,
                      std::span<const scene::SceneFile> train_scenes, std::span<const scene::SceneFile> val_scenes,
                      const RunCallback& on_run) {
  if (grid.rows.empty()) throw ConfigError("ablation grid has no rows");
  std::vector<ExperimentConfig> configs;
  for (const auto& row : grid.rows) {
    ExperimentConfig cfg = base;
    for (auto it = row.overrides.begin(); it != row.overrides.end(); ++it) apply_override(cfg, it.key(), it.value());
    cfg.validate();
    configs.push_back(cfg);
  }

  AblationResult result;
  result.num_classes = base.scene.num_classes;
  std::string cached_key;
  std::vector<PreparedScene> train_prepared, val_prepared;
  for (std::size_t i = 0; i < grid.rows.size(); ++i) {
    const auto& cfg = configs[i];
    const auto key = preparation_key(cfg);
    if (key != cached_key) {
      train_prepared = prepare_scenes(train_scenes, cfg);
      val_prepared = prepare_scenes(val_scenes, cfg);
      cached_key = key;
    }
    for (const auto seed : base.train.seeds) {
      ExperimentConfig run_cfg = cfg;
      run_cfg.train.seed = seed;
      const auto trained = train(run_cfg, train_prepared, {}, seed);
      RunRecord rec{grid.table, grid.rows[i].name, seed, run_cfg, evaluate(trained.checkpoint, val_prepared), {}};
      if (!trained.log.epochs.empty()) rec.final_epoch = trained.log.epochs.back();
      if (on_run) on_run(rec);
      result.runs.push_back(std::move(rec));
    }
  }
  return result;
}

AblationResult ablate(const ExperimentConfig& base, const AblationGrid& grid, const RunCallback& on_run) {
  const auto train_scenes = generate_scenes(base, base.train.train_scenes, base.train.data_seed);
  const auto val_scenes = generate_scenes(base, base.train.val_scenes, base.train.data_seed + kValidationSeedOffset);
  return ablate(base, grid, train_scenes, val_scenes, on_run);
}

}  // namespace protoocc::harness
