// SPDX-License-Identifier: Apache-2.0
#include "protoocc/config.hpp"

#include <fstream>
#include <set>

#include "protoocc/clustering.hpp"
#include "protoocc/errors.hpp"

namespace protoocc {

using nlohmann::json;

namespace {

// Reads fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + name() + "' must be a JSON object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + field(it.key()) + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + field(key) + "': " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string name() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json spec_to_json(const decoder::AugmentationSpec& s) {
  json j{{"kind", decoder::to_string(s.kind)}};
  switch (s.kind) {
    case decoder::AugmentationKind::random_dropout: j["p"] = s.p; break;
    case decoder::AugmentationKind::gaussian_noise: j["sigma"] = s.sigma; break;
    default: j["axes"] = s.axes;
  }
  return j;
}

decoder::AugmentationSpec spec_from_json(const json& j, const std::string& path) {
  Section s(j, path);
  std::string kind;
  s.get("kind", kind);
  decoder::AugmentationSpec spec;
  try {
    spec.kind = decoder::augmentation_kind_from_string(kind);
  } catch (const ConfigError&) {
    throw ConfigError("unknown augmentation kind '" + kind + "' at '" + path + "'");
  }
  switch (spec.kind) {
    case decoder::AugmentationKind::transpose: spec.axes = {0, 1}; break;
    case decoder::AugmentationKind::flip: spec.axes = {0, 1}; break;
    default: break;
  }
  s.get("p", spec.p);
  s.get("sigma", spec.sigma);
  s.get("axes", spec.axes);
  return spec;
}

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError("invalid '" + field + "': " + why);
}

}  // namespace

json branch_to_json(const decoder::BranchSpec& branch) {
  json arr = json::array();
  for (const auto& s : branch) arr.push_back(spec_to_json(s));
  return arr;
}

decoder::BranchSpec branch_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("an augmentation branch must be an array of specs");
  decoder::BranchSpec b;
  for (std::size_t i = 0; i < j.size(); ++i) b.push_back(spec_from_json(j[i], "augmentation[" + std::to_string(i) + "]"));
  return b;
}

void ExperimentConfig::validate() const {
  try {
    scene.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("invalid 'scene': ") + e.what());
  }
  require(cameras.count >= 1, "cameras.count", "need at least one camera");
  require(cameras.image_height >= 1 && cameras.image_width >= 1, "cameras.image_height", "image must be non-empty");
  require(cameras.hfov_deg > 0 && cameras.hfov_deg < 180, "cameras.hfov_deg", "must lie in (0, 180)");
  require(render.channels >= scene.num_classes + 1, "render.channels", "must be at least num_classes + 1");
  require(render.noise_sigma >= 0, "render.noise_sigma", "must be >= 0");
  for (int a = 0; a < 3; ++a) require(model.query[a] >= 1, "model.query", "extents must be positive");
  require(model.d >= 1, "model.d", "must be positive");
  require(model.n_points >= 1, "model.n_points", "must be >= 1");
  require(model.eps > 0, "model.eps", "must be > 0");
  require(model.proto_ratio >= 1, "model.proto_ratio", "must be >= 1");
  require(model.assign_tau > 0, "model.assign_tau", "must be > 0");
  try {
    clustering::mask_generator_from_string(model.mask_generator);
  } catch (const ConfigError&) {
    throw ConfigError("invalid 'model.mask_generator': expected grid-kmeans or ground-truth");
  }
  require(model.mask_target >= 1 && model.mask_target <= grid_h() * grid_w(), "model.mask_target",
          "must lie in [1, h'*w']");
  try {
    decoder::DecoderConfig::default_for(model.query, {scene.H, scene.W, scene.Z}, model.d, scene.num_classes);
    plan().validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("invalid 'model.query': ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("invalid 'augmentation': ") + e.what());
  }
  const auto& w = loss.weights;
  require(w.occupancy >= 0 && w.lovasz >= 0 && w.contrastive >= 0 && w.consistency >= 0, "loss.weights",
          "must be non-negative");
  require(loss.tau_cls > 0, "loss.tau_cls", "must be > 0");
  require(loss.tau_cons > 0, "loss.tau_cons", "must be > 0");
  require(loss.class_weights.empty() || loss.class_weights.size() == scene.num_classes, "loss.class_weights",
          "needs one weight per class");
  require(optim.lr > 0, "optim.lr", "must be > 0");
  require(optim.weight_decay >= 0, "optim.weight_decay", "must be >= 0");
  require(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1, "optim.beta1", "betas must lie in [0, 1)");
  require(optim.schedule == "cosine" || optim.schedule == "constant", "optim.schedule", "expected cosine or constant");
  require(!train.seeds.empty(), "train.seeds", "need at least one seed");
}

json to_json(const ExperimentConfig& c) {
  json aug = json::array();
  for (const auto& b : c.augmentation) aug.push_back(branch_to_json(b));
  const auto& s = c.scene;
  return json{
      {"scene",
       {{"H", s.H}, {"W", s.W}, {"Z", s.Z}, {"num_classes", s.num_classes}, {"voxel_size", s.voxel_size},
        {"min_objects", s.min_objects}, {"max_objects", s.max_objects}, {"allow_empty", s.allow_empty},
        {"sphere_probability", s.sphere_probability}, {"box_min", s.box_min}, {"box_max", s.box_max},
        {"box_height_min", s.box_height_min}, {"box_height_max", s.box_height_max},
        {"sphere_radius_min", s.sphere_radius_min}, {"sphere_radius_max", s.sphere_radius_max},
        {"distinct_classes", s.distinct_classes}, {"max_retries", s.max_retries}}},
      {"cameras",
       {{"count", c.cameras.count}, {"image_height", c.cameras.image_height},
        {"image_width", c.cameras.image_width}, {"hfov_deg", c.cameras.hfov_deg}}},
      {"render",
       {{"channels", c.render.channels}, {"noise_sigma", c.render.noise_sigma}, {"embed_scale", c.render.embed_scale}}},
      {"model",
       {{"query", c.model.query}, {"d", c.model.d}, {"encoder_layers", c.model.encoder_layers},
        {"n_points", c.model.n_points}, {"eps", c.model.eps}, {"proto_ratio", c.model.proto_ratio},
        {"proto_iters", c.model.proto_iters}, {"assign_tau", c.model.assign_tau},
        {"mask_generator", c.model.mask_generator}, {"mask_target", c.model.mask_target},
        {"grid_h", c.model.grid_h}, {"grid_w", c.model.grid_w}}},
      {"ablation",
       {{"proto_mapping", c.ablation.proto_mapping}, {"proto_optimization", c.ablation.proto_optimization},
        {"mod", c.ablation.mod}}},
      {"augmentation", aug},
      {"loss",
       {{"lambda_occ", c.loss.weights.occupancy}, {"lambda_lovasz", c.loss.weights.lovasz},
        {"lambda_cls", c.loss.weights.contrastive}, {"lambda_cons", c.loss.weights.consistency},
        {"tau_cls", c.loss.tau_cls}, {"tau_cons", c.loss.tau_cons}, {"class_weights", c.loss.class_weights}}},
      {"optim",
       {{"lr", c.optim.lr}, {"weight_decay", c.optim.weight_decay}, {"beta1", c.optim.beta1},
        {"beta2", c.optim.beta2}, {"adam_eps", c.optim.adam_eps}, {"schedule", c.optim.schedule}}},
      {"train",
       {{"epochs", c.train.epochs}, {"train_scenes", c.train.train_scenes}, {"val_scenes", c.train.val_scenes},
        {"seed", c.train.seed}, {"seeds", c.train.seeds}, {"data_seed", c.train.data_seed},
        {"eval_each_epoch", c.train.eval_each_epoch}}},
  };
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  if (auto* p = root.child("scene")) {
    Section s(*p, "scene");
    auto& v = c.scene;
    s.get("H", v.H);
    s.get("W", v.W);
    s.get("Z", v.Z);
    s.get("num_classes", v.num_classes);
    s.get("voxel_size", v.voxel_size);
    s.get("min_objects", v.min_objects);
    s.get("max_objects", v.max_objects);
    s.get("allow_empty", v.allow_empty);
    s.get("sphere_probability", v.sphere_probability);
    s.get("box_min", v.box_min);
    s.get("box_max", v.box_max);
    s.get("box_height_min", v.box_height_min);
    s.get("box_height_max", v.box_height_max);
    s.get("sphere_radius_min", v.sphere_radius_min);
    s.get("sphere_radius_max", v.sphere_radius_max);
    s.get("distinct_classes", v.distinct_classes);
    s.get("max_retries", v.max_retries);
  }
  if (auto* p = root.child("cameras")) {
    Section s(*p, "cameras");
    s.get("count", c.cameras.count);
    s.get("image_height", c.cameras.image_height);
    s.get("image_width", c.cameras.image_width);
    s.get("hfov_deg", c.cameras.hfov_deg);
  }
  if (auto* p = root.child("render")) {
    Section s(*p, "render");
    s.get("channels", c.render.channels);
    s.get("noise_sigma", c.render.noise_sigma);
    s.get("embed_scale", c.render.embed_scale);
  }
  if (auto* p = root.child("model")) {
    Section s(*p, "model");
    auto& m = c.model;
    s.get("query", m.query);
    s.get("d", m.d);
    s.get("encoder_layers", m.encoder_layers);
    s.get("n_points", m.n_points);
    s.get("eps", m.eps);
    s.get("proto_ratio", m.proto_ratio);
    s.get("proto_iters", m.proto_iters);
    s.get("assign_tau", m.assign_tau);
    s.get("mask_generator", m.mask_generator);
    s.get("mask_target", m.mask_target);
    s.get("grid_h", m.grid_h);
    s.get("grid_w", m.grid_w);
  }
  if (auto* p = root.child("ablation")) {
    Section s(*p, "ablation");
    s.get("proto_mapping", c.ablation.proto_mapping);
    s.get("proto_optimization", c.ablation.proto_optimization);
    s.get("mod", c.ablation.mod);
  }
  if (auto* p = root.child("augmentation")) {
    if (!p->is_array()) throw ConfigError("'augmentation' must be an array of branches");
    c.augmentation.clear();
    for (const auto& b : *p) c.augmentation.push_back(branch_from_json(b));
  }
  if (auto* p = root.child("loss")) {
    Section s(*p, "loss");
    s.get("lambda_occ", c.loss.weights.occupancy);
    s.get("lambda_lovasz", c.loss.weights.lovasz);
    s.get("lambda_cls", c.loss.weights.contrastive);
    s.get("lambda_cons", c.loss.weights.consistency);
    s.get("tau_cls", c.loss.tau_cls);
    s.get("tau_cons", c.loss.tau_cons);
    s.get("class_weights", c.loss.class_weights);
  }
  if (auto* p = root.child("optim")) {
    Section s(*p, "optim");
    s.get("lr", c.optim.lr);
    s.get("weight_decay", c.optim.weight_decay);
    s.get("beta1", c.optim.beta1);
    s.get("beta2", c.optim.beta2);
    s.get("adam_eps", c.optim.adam_eps);
    s.get("schedule", c.optim.schedule);
  }
  if (auto* p = root.child("train")) {
    Section s(*p, "train");
    s.get("epochs", c.train.epochs);
    s.get("train_scenes", c.train.train_scenes);
    s.get("val_scenes", c.train.val_scenes);
    s.get("seed", c.train.seed);
    s.get("seeds", c.train.seeds);
    s.get("data_seed", c.train.data_seed);
    s.get("eval_each_epoch", c.train.eval_each_epoch);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("config '" + path + "' is not valid JSON: " + e.what());
  }
  auto cfg = config_from_json(j);
  cfg.validate();
  return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& path, const json& value) {
  json j = to_json(cfg);
  const json::json_pointer ptr("/" + [&] {
    std::string p = path;
    for (auto& ch : p)
      if (ch == '.') ch = '/';
    return p;
  }());
  if (!j.contains(ptr)) throw ConfigError("unknown override key '" + path + "'");
  j[ptr] = value;
  cfg = config_from_json(j);
}

}  // namespace protoocc
