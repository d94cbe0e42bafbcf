// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "protoocc/train.hpp"

namespace protoocc::harness {

/// One configuration of an ablation grid: dotted-path overrides on the base config.
struct AblationRow {
  std::string name;
  nlohmann::json overrides = nlohmann::json::object();
};

struct AblationGrid {
  std::string table;  // label copied into every output row
  std::vector<AblationRow> rows;
};

/// Mapping / optimization / MOD toggles: baseline, mapping, mapping + optimization, MOD, all.
AblationGrid model_design_grid();
/// Eleven augmentation combinations, each with consistency regularisation off and on.
AblationGrid augmentation_grid();
/// Prototype ratio r in {2, 4, 6, 8}, which sets M.
AblationGrid prototype_count_grid();
/// {"preset": "table4" | "table5" | "table6"} or {"table": name, "rows": [{"name", "set": {...}}]}.
AblationGrid grid_from_json(const nlohmann::json& j);

struct RunRecord {
  std::string table, row;
  std::uint64_t seed = 0;
  ExperimentConfig config;
  EvalMetrics metrics;
  std::optional<EpochRecord> final_epoch;
};

struct AblationResult {
  std::size_t num_classes = 0;
  std::vector<RunRecord> runs;

  /// One line per run: table,row,seed,mapping,optimization,mod,augmentation,cr,
  /// proto_ratio,num_prototypes,miou,iou,iou_c1..,final_loss,final_disagreement.
  std::string to_csv() const;
  /// Mean and sample std over seeds per row, in grid order.
  std::string summary() const;
};

using RunCallback = std::function<void(const RunRecord&)>;

/// Trains and evaluates every row for every seed in base.train.seeds, on
/// scenes generated from base.train.data_seed.
AblationResult ablate(const ExperimentConfig& base, const AblationGrid& grid, const RunCallback& on_run = {});

/// Same, on caller-provided scene files (prepared per distinct preprocessing config).
AblationResult ablate(const ExperimentConfig& base, const AblationGrid& grid,
                      std::span<const scene::SceneFile> train_scenes, std::span<const scene::SceneFile> val_scenes,
                      const RunCallback& on_run = {});

/// Number of 2D prototypes a config produces per view.
std::size_t prototype_count(const ExperimentConfig& cfg);

}  // namespace protoocc::harness
