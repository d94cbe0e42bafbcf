#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "protoocc/ablate.hpp"
#include "protoocc/config.hpp"
#include "protoocc/errors.hpp"
#include "protoocc/model.hpp"
#include "protoocc/ops.hpp"
#include "protoocc/train.hpp"

using namespace protoocc;
using namespace protoocc::harness;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.scene.H = 16;
  cfg.scene.W = 16;
  cfg.scene.Z = 8;
  cfg.scene.num_classes = 3;
  cfg.scene.min_objects = 2;
  cfg.scene.max_objects = 2;
  cfg.scene.box_min = 4.0;
  cfg.scene.box_max = 8.0;
  cfg.cameras.image_height = 12;
  cfg.cameras.image_width = 16;
  cfg.render.channels = 8;
  cfg.model.query = {4, 4, 2};
  cfg.model.d = 8;
  cfg.model.encoder_layers = 1;
  cfg.model.n_points = 2;
  cfg.model.mask_target = 4;
  cfg.train.epochs = 2;
  cfg.train.seeds = {0};
  cfg.validate();
  return cfg;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("protoocc_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Fixture {
  ExperimentConfig cfg = tiny_config();
  std::vector<scene::SceneFile> train_files = generate_scenes(cfg, 3, 10);
  std::vector<scene::SceneFile> val_files = generate_scenes(cfg, 2, 10 + kValidationSeedOffset);
  std::vector<PreparedScene> train_set = prepare_scenes(train_files, cfg);
  std::vector<PreparedScene> val_set = prepare_scenes(val_files, cfg);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

bool same_tensors(const std::vector<NamedTensor>& a, const std::vector<NamedTensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape()) return false;
    if (!std::ranges::equal(a[i].second.data(), b[i].second.data())) return false;
  }
  return true;
}

bool same_metrics(const EvalMetrics& a, const EvalMetrics& b) {
  return a.miou == b.miou && a.iou == b.iou && a.per_class == b.per_class;
}

}  // namespace

TEST_CASE("config survives a JSON round trip") {
  auto cfg = tiny_config();
  cfg.ablation.mod = false;
  cfg.loss.weights.consistency = 0.25;
  cfg.optim.schedule = "constant";
  const auto back = config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
}

TEST_CASE("config rejects unknown keys and invalid values") {
  auto j = to_json(tiny_config());
  j["model"]["bogus"] = 1;
  CHECK_THROWS_WITH_AS(config_from_json(j), doctest::Contains("model.bogus"), ConfigError);

  auto cfg = tiny_config();
  CHECK_THROWS_AS(apply_override(cfg, "model.nothing", 3), ConfigError);
  apply_override(cfg, "model.proto_ratio", 2);
  CHECK(cfg.model.proto_ratio == 2);
  apply_override(cfg, "ablation.mod", false);
  CHECK_FALSE(cfg.ablation.mod);

  cfg = tiny_config();
  cfg.render.channels = 2;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("render.channels"), ConfigError);
  cfg = tiny_config();
  cfg.model.query = {3, 4, 2};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("model.query"), ConfigError);
  cfg = tiny_config();
  cfg.optim.lr = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("optim.lr"), ConfigError);
}

TEST_CASE("load_config reports unreadable files as format errors") {
  const auto dir = scratch_dir("config");
  CHECK_THROWS_AS(load_config((dir / "missing.json").string()), FormatError);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS(load_config((dir / "broken.json").string()), FormatError);
  std::ofstream(dir / "ok.json") << to_json(tiny_config()).dump();
  CHECK(to_json(load_config((dir / "ok.json").string())) == to_json(tiny_config()));
}

TEST_CASE("scene directories round trip in name order") {
  const auto& f = fixture();
  const auto dir = scratch_dir("scenes");
  write_scene_dir(dir, f.train_files);
  const auto back = read_scene_dir(dir);
  REQUIRE(back.size() == f.train_files.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].scene.seed == f.train_files[i].scene.seed);
    CHECK(back[i].scene.occupancy.labels == f.train_files[i].scene.occupancy.labels);
  }
}

TEST_CASE("prepare_scene rejects scenes that do not match the config") {
  const auto& f = fixture();
  auto other = f.cfg;
  other.scene.Z = 16;
  CHECK_THROWS_WITH_AS(prepare_scene(f.train_files[0], other), doctest::Contains("scene.Z"), ConfigError);
  other = f.cfg;
  other.cameras.image_width = 20;
  CHECK_THROWS_WITH_AS(prepare_scene(f.train_files[0], other), doctest::Contains("cameras.image_width"), ConfigError);
}

TEST_CASE("zero epochs returns the rounded initial weights") {
  const auto& f = fixture();
  auto cfg = f.cfg;
  cfg.train.epochs = 0;
  const auto result = train(cfg, f.train_set, f.val_set, 4);
  CHECK(result.log.epochs.empty());
  CHECK(result.checkpoint.step == 0);
  Rng rng(4);
  auto init_rng = rng.split("init");
  const auto model = Model::init(cfg, init_rng);
  const auto expected = make_checkpoint(model, cfg, 0, {});
  CHECK(same_tensors(result.checkpoint.tensors, expected.tensors));
  for (const auto& [name, t] : result.checkpoint.tensors)
    for (double v : t.data()) CHECK(v == static_cast<double>(static_cast<float>(v)));
}

TEST_CASE("AdamW follows the cosine schedule and exempts biases from decay") {
  OptimConfig oc;
  oc.lr = 0.1;
  oc.weight_decay = 0.5;
  Tensor w({2, 2}, {1, 1, 1, 1}, true), b({2}, {1, 1}, true);
  AdamW opt({w, b}, oc, 4);
  CHECK(opt.learning_rate() == doctest::Approx(0.1));
  ops::add(ops::sum(w), ops::sum(b)).backward();
  opt.step();  // unit gradients: the bias-corrected Adam step is exactly lr
  CHECK(w.data()[0] == doctest::Approx(1.0 - 0.1 * 0.5 - 0.1));
  CHECK(b.data()[0] == doctest::Approx(1.0 - 0.1));
  opt.step();
  CHECK(opt.learning_rate() == doctest::Approx(0.05 * (1 + std::cos(std::numbers::pi * 2 / 4))));
}

TEST_CASE("repeat training runs produce identical logs and checkpoints") {
  const auto& f = fixture();
  const auto a = train(f.cfg, f.train_set, f.val_set, 7);
  const auto b = train(f.cfg, f.train_set, f.val_set, 7);
  REQUIRE(a.log.epochs.size() == f.cfg.train.epochs);
  CHECK(a.log.epochs[0].val_miou.has_value());
  CHECK(a.log.to_csv() == b.log.to_csv());
  CHECK(same_tensors(a.checkpoint.tensors, b.checkpoint.tensors));
  CHECK(a.checkpoint.step == f.cfg.train.epochs * f.train_set.size());
  const auto c = train(f.cfg, f.train_set, f.val_set, 8);
  CHECK_FALSE(same_tensors(a.checkpoint.tensors, c.checkpoint.tensors));
}

TEST_CASE("metrics CSV has a header and one row per epoch") {
  const auto& f = fixture();
  const auto result = train(f.cfg, f.train_set, {}, 1);
  std::istringstream in(result.log.to_csv());
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,total,occupancy,lovasz,contrastive,consistency,disagreement,val_miou,val_iou");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == f.cfg.train.epochs);
}

TEST_CASE("checkpoints round trip bit-for-bit and evaluate identically") {
  const auto& f = fixture();
  const auto result = train(f.cfg, f.train_set, {}, 3);
  const auto dir = scratch_dir("ckpt");
  save_checkpoint(result.checkpoint, dir / "model.pocc");
  const auto back = load_checkpoint(dir / "model.pocc");
  CHECK(same_tensors(back.tensors, result.checkpoint.tensors));
  CHECK(back.step == result.checkpoint.step);
  CHECK(back.rng_state.key == result.checkpoint.rng_state.key);
  CHECK(back.rng_state.counter == result.checkpoint.rng_state.counter);
  CHECK(to_json(back.config) == to_json(result.checkpoint.config));
  CHECK(encode_checkpoint(back) == encode_checkpoint(result.checkpoint));
  CHECK(same_metrics(evaluate(back, f.val_set), evaluate(result.checkpoint, f.val_set)));
  CHECK(same_metrics(evaluate(back, f.val_files), evaluate(back, f.val_set)));
}

TEST_CASE("damaged checkpoints raise format errors") {
  const auto& f = fixture();
  auto cfg = f.cfg;
  cfg.train.epochs = 0;
  const auto bytes = encode_checkpoint(train(cfg, f.train_set, {}, 0).checkpoint);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 6)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
}

TEST_CASE("checkpoint whose config disagrees with its tensors names the field") {
  const auto& f = fixture();
  auto cfg = f.cfg;
  cfg.train.epochs = 0;
  auto ckpt = train(cfg, f.train_set, {}, 0).checkpoint;
  ckpt.config.model.query = {8, 8, 4};
  const auto dir = scratch_dir("mismatch");
  save_checkpoint(ckpt, dir / "model.pocc");
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "model.pocc"), doctest::Contains("model.query"), ConfigError);
  CHECK_THROWS_AS(model_from_checkpoint(ckpt), ConfigError);
}

TEST_CASE("evaluate rejects scenes of the wrong size and is repeatable") {
  const auto& f = fixture();
  auto cfg = f.cfg;
  cfg.train.epochs = 0;
  const auto ckpt = train(cfg, f.train_set, {}, 0).checkpoint;
  auto other = f.cfg;
  other.scene.H = 32;
  const auto big = generate_scenes(other, 1, 50);
  CHECK_THROWS_WITH_AS(evaluate(ckpt, big), doctest::Contains("scene.H"), ConfigError);
  const auto first = evaluate(ckpt, f.val_set);
  CHECK(same_metrics(first, evaluate(ckpt, f.val_set)));
  CHECK(first.miou < 0.35);
  CHECK(first.per_class.size() == cfg.scene.num_classes);
}

TEST_CASE("training overfits a single scene") {
  const auto& f = fixture();
  auto cfg = f.cfg;
  cfg.ablation = {false, false, false};
  cfg.train.epochs = 800;
  cfg.optim.lr = 1e-2;
  cfg.optim.schedule = "constant";
  const std::vector<PreparedScene> one{f.train_set[0]};
  const auto result = train(cfg, one, {}, 0);
  const auto& log = result.log.epochs;
  for (std::size_t e = 1; e < 10; ++e) CHECK(log[e].train.total < log[e - 1].train.total);
  CHECK(log.back().train.total < 0.2 * log.front().train.total);
  CHECK(evaluate(result.checkpoint, one).miou > 0.9);
}

TEST_CASE("a single ablation row matches plain training and evaluation") {
  const auto& f = fixture();
  AblationGrid grid{"custom", {{"plain", {{"ablation.mod", false}, {"ablation.proto_mapping", false},
                                         {"ablation.proto_optimization", false}}}}};
  const auto result = ablate(f.cfg, grid, f.train_files, f.val_files);
  REQUIRE(result.runs.size() == 1);
  auto cfg = f.cfg;
  cfg.ablation = {false, false, false};
  cfg.train.eval_each_epoch = false;
  const auto direct = train(cfg, f.train_set, {}, 0);
  CHECK(same_metrics(result.runs[0].metrics, evaluate(direct.checkpoint, f.val_set)));
}

TEST_CASE("preset grids have the expected rows") {
  CHECK(model_design_grid().rows.size() == 5);
  CHECK(augmentation_grid().rows.size() == 22);
  CHECK(prototype_count_grid().rows.size() == 4);
  CHECK(grid_from_json({{"preset", "table5"}}).rows.size() == 22);
  const auto custom = grid_from_json(nlohmann::json::parse(R"({"table":"t","rows":[{"name":"a","set":{"model.proto_ratio":2}}]})"));
  CHECK(custom.rows.at(0).overrides.at("model.proto_ratio") == 2);
  CHECK_THROWS_AS(grid_from_json({{"preset", "table9"}}), ConfigError);
  CHECK_THROWS_AS(grid_from_json({{"table", "t"}, {"rows", nlohmann::json::array()}, {"extra", 1}}), ConfigError);
  auto cfg = tiny_config();
  cfg.model.proto_ratio = 6;
  CHECK(prototype_count(cfg) == 2 * 3);
}

TEST_CASE("ablation CSV has one parseable line per run") {
  const auto& f = fixture();
  auto cfg = f.cfg;
  cfg.train.epochs = 1;
  cfg.train.seeds = {0, 1};
  const auto grid = prototype_count_grid();
  const auto result = ablate(cfg, grid, f.train_files, f.val_files);
  CHECK(result.runs.size() == grid.rows.size() * 2);
  std::istringstream in(result.to_csv());
  std::string line;
  std::getline(in, line);
  const auto columns = std::count(line.begin(), line.end(), ',') + 1;
  CHECK(columns == 12 + static_cast<long>(cfg.scene.num_classes) - 1 + 2);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') + 1 == columns);
    CHECK(line.rfind("table6,", 0) == 0);
  }
  CHECK(rows == result.runs.size());
  CHECK_FALSE(result.summary().empty());
}

TEST_CASE("default loss weights, temperatures and weight decay") {
  const ExperimentConfig cfg;
  CHECK(cfg.loss.weights.occupancy == 10.0);
  CHECK(cfg.loss.weights.lovasz == 1.0);
  CHECK(cfg.loss.weights.contrastive == 1.0);
  CHECK(cfg.loss.weights.consistency == 1.0);
  CHECK(cfg.loss.tau_cls == 0.3);
  CHECK(cfg.loss.tau_cons == 0.3);
  CHECK(cfg.optim.weight_decay == 0.01);
  CHECK(cfg.scene.num_classes == 5);
  CHECK(cfg.train.train_scenes == 200);
  CHECK(cfg.train.val_scenes == 40);
  CHECK_NOTHROW(cfg.validate());
}
