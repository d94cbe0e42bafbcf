// SPDX-License-Identifier: Apache-2.0
// Command-line front end: scene generation, training, evaluation, ablations
// and the numerical check suites.
//
// Exit codes: 0 success, 1 validation failure, 2 I/O or format error.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "checks.hpp"
#include "protoocc/ablate.hpp"
#include "protoocc/errors.hpp"
#include "protoocc/train.hpp"

using namespace protoocc;
using nlohmann::json;

namespace {

constexpr int kOk = 0, kValidation = 1, kIo = 2;

ExperimentConfig load_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq), text = s.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;  // bare words are strings
    }
    apply_override(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw FormatError("failed writing '" + path + "'");
}

json metrics_json(const harness::EvalMetrics& m) {
  json per = json::array();
  for (const auto& v : m.per_class) per.push_back(v ? json(*v) : json(nullptr));
  return {{"miou", m.miou}, {"iou", m.iou}, {"per_class", per}};
}

int report(const std::vector<checks::CheckResult>& results) {
  bool ok = true;
  for (const auto& r : results) {
    std::cout << checks::format_result(r) << "\n";
    ok = ok && r.passed();
  }
  return ok ? kOk : kValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"protoocc: prototype-aware occupancy toy pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_path, scenes_dir, val_dir, log_path, ckpt_path, grid_path, summary_path, op;
  std::vector<std::string> sets;
  std::size_t count = 0, grad_instances = 20, oracle_instances = 100;
  std::uint64_t seed = 0;
  bool seed_given = false;

  auto* gen = app.add_subcommand("gen-scenes", "Generate synthetic scenes into a directory");
  gen->add_option("--config", config_path, "Experiment config JSON");
  gen->add_option("--out", out_path, "Output directory")->required();
  gen->add_option("--count", count, "Number of scenes")->required();
  gen->add_option("--seed", seed, "Seed of the first scene")->required();
  gen->add_option("--set", sets, "Override key=value (dotted keys)");

  auto* tr = app.add_subcommand("train", "Train a model on a scene directory");
  tr->add_option("--config", config_path, "Experiment config JSON");
  tr->add_option("--scenes", scenes_dir, "Training scene directory")->required();
  tr->add_option("--val", val_dir, "Validation scene directory");
  tr->add_option("--out", out_path, "Checkpoint path")->required();
  tr->add_option("--log", log_path, "Metrics CSV path");
  tr->add_option("--seed", seed, "Training seed (default: train.seed)")->each([&](const std::string&) { seed_given = true; });
  tr->add_option("--set", sets, "Override key=value (dotted keys)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a scene directory");
  ev->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
  ev->add_option("--scenes", scenes_dir, "Scene directory")->required();

  auto* ab = app.add_subcommand("ablate", "Run an ablation grid");
  ab->add_option("--config", config_path, "Base experiment config JSON");
  ab->add_option("--grid", grid_path, "Grid JSON (rows or {\"preset\": \"table4|table5|table6\"})")->required();
  ab->add_option("--out", out_path, "Results CSV path")->required();
  ab->add_option("--summary", summary_path, "Mean/std table path (default: stdout)");
  ab->add_option("--scenes", scenes_dir, "Training scenes (default: generated from the config)");
  ab->add_option("--val", val_dir, "Validation scenes (required with --scenes)");
  ab->add_option("--set", sets, "Override key=value (dotted keys)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--op", op, "Single operation to check");
  gc->add_option("--instances", grad_instances, "Random instances per operation")->capture_default_str();

  auto* oc = app.add_subcommand("oracle-check", "Naive-reference oracle suite");
  oc->add_option("--op", op, "Single operation to check");
  oc->add_option("--instances", oracle_instances, "Random instances per operation")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*gen) {
      const auto cfg = load_with_overrides(config_path, sets);
      const auto scenes = harness::generate_scenes(cfg, count, seed);
      harness::write_scene_dir(out_path, scenes);
      std::cout << "wrote " << scenes.size() << " scenes to " << out_path << "\n";
    } else if (*tr) {
      const auto cfg = load_with_overrides(config_path, sets);
      const auto files = harness::read_scene_dir(scenes_dir);
      const auto prepared = harness::prepare_scenes(files, cfg);
      std::vector<harness::PreparedScene> val;
      if (!val_dir.empty()) val = harness::prepare_scenes(harness::read_scene_dir(val_dir), cfg);
      const auto result = harness::train(cfg, prepared, val, seed_given ? seed : cfg.train.seed,
                                         [](const harness::EpochRecord& r) {
                                           std::fprintf(stderr, "epoch %zu loss %.6g (%.1f s)\n", r.epoch,
                                                        r.train.total, r.wall_seconds);
                                         });
      harness::save_checkpoint(result.checkpoint, out_path);
      if (!log_path.empty()) write_text(log_path, result.log.to_csv());
      std::cout << "saved checkpoint to " << out_path << " after " << result.checkpoint.step << " steps\n";
    } else if (*ev) {
      const auto ckpt = harness::load_checkpoint(ckpt_path);
      const auto files = harness::read_scene_dir(scenes_dir);
      std::cout << metrics_json(harness::evaluate(ckpt, std::span<const scene::SceneFile>(files))).dump(2) << "\n";
    } else if (*ab) {
      const auto cfg = load_with_overrides(config_path, sets);
      std::ifstream in(grid_path);
      if (!in) throw FormatError("cannot open grid '" + grid_path + "'");
      json grid_json;
      try {
        grid_json = json::parse(in);
      } catch (const json::parse_error& e) {
        throw FormatError("grid '" + grid_path + "' is not valid JSON: " + e.what());
      }
      const auto grid = harness::grid_from_json(grid_json);
      auto progress = [](const harness::RunRecord& r) {
        std::fprintf(stderr, "%s/%s seed %llu: mIoU %.4f\n", r.table.c_str(), r.row.c_str(),
                     static_cast<unsigned long long>(r.seed), r.metrics.miou);
      };
      harness::AblationResult result;
      if (!scenes_dir.empty()) {
        if (val_dir.empty()) throw ConfigError("--scenes needs --val");
        const auto train_files = harness::read_scene_dir(scenes_dir);
        const auto val_files = harness::read_scene_dir(val_dir);
        result = harness::ablate(cfg, grid, train_files, val_files, progress);
      } else {
        result = harness::ablate(cfg, grid, progress);
      }
      write_text(out_path, result.to_csv());
      if (summary_path.empty())
        std::cout << result.summary();
      else
        write_text(summary_path, result.summary());
    } else if (*gc) {
      return report(checks::run_gradient_suite(grad_instances, 1, op));
    } else if (*oc) {
      return report(checks::run_oracle_suite(oracle_instances, 2, op));
    }
    return kOk;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
}
