// SPDX-License-Identifier: Apache-2.0
#include "protoocc/model.hpp"

#include <cmath>

#include "protoocc/errors.hpp"
#include "protoocc/losses.hpp"
#include "protoocc/ops.hpp"
#include "protoocc/proto_opt.hpp"

namespace protoocc::harness {

view::EncoderConfig encoder_config(const ExperimentConfig& cfg) {
  view::EncoderConfig e;
  e.extents = cfg.model.query;
  e.d = cfg.model.d;
  e.channels = cfg.render.channels;
  e.layers = cfg.model.encoder_layers;
  e.points = cfg.model.n_points;
  e.eps = cfg.model.eps;
  e.grid_h = cfg.grid_h();
  e.grid_w = cfg.grid_w();
  e.prototype_mapping = cfg.ablation.proto_mapping;
  e.keep_prototypes = cfg.ablation.proto_optimization;
  return e;
}

decoder::DecoderConfig decoder_config(const ExperimentConfig& cfg) {
  return decoder::DecoderConfig::default_for(cfg.model.query, {cfg.scene.H, cfg.scene.W, cfg.scene.Z}, cfg.model.d,
                                             cfg.scene.num_classes);
}

namespace {

void name_mlp(std::vector<NamedTensor>& out, const std::string& prefix, const MlpParams& mlp) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const auto& l = mlp.layers[i];
    out.emplace_back(prefix + "." + std::to_string(i) + ".weight", l.weight);
    if (l.bias.defined()) out.emplace_back(prefix + "." + std::to_string(i) + ".bias", l.bias);
  }
}

void check_finite(double value, const char* component) {
  if (!std::isfinite(value)) throw EvaluationError(std::string("non-finite ") + component + " loss");
}

}  // namespace

std::vector<NamedTensor> Model::named_parameters() const {
  std::vector<NamedTensor> out;
  out.emplace_back("encoder.query", encoder.query);
  for (std::size_t l = 0; l < encoder.layers.size(); ++l) {
    const auto& layer = encoder.layers[l];
    const std::string p = "encoder.layer" + std::to_string(l);
    name_mlp(out, p + ".projection", layer.projection);
    name_mlp(out, p + ".dispatch", layer.dispatch);
    const auto& a = layer.attention;
    out.emplace_back(p + ".attention.offset_weight", a.offset_weight);
    out.emplace_back(p + ".attention.offset_bias", a.offset_bias);
    out.emplace_back(p + ".attention.score_weight", a.score_weight);
    out.emplace_back(p + ".attention.score_bias", a.score_bias);
    out.emplace_back(p + ".attention.value_weight", a.value_weight);
  }
  for (std::size_t i = 0; i < decoder.layers.size(); ++i) {
    out.emplace_back("decoder.up" + std::to_string(i) + ".kernel", decoder.layers[i].kernel);
    out.emplace_back("decoder.up" + std::to_string(i) + ".bias", decoder.layers[i].bias);
  }
  name_mlp(out, "decoder.classifier", decoder.classifier);
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

Model Model::init(const ExperimentConfig& cfg, Rng& rng) {
  Model m;
  Rng enc = rng.split("encoder"), dec = rng.split("decoder");
  m.encoder = view::EncoderParams::init(encoder_config(cfg), enc);
  m.decoder = decoder::DecoderParams::init(decoder_config(cfg), cfg.model.d, dec);
  return m;
}

ForwardResult forward_loss(const Model& model, const PreparedScene& scene, const ExperimentConfig& cfg, Rng& rng) {
  const auto ecfg = encoder_config(cfg);
  const auto enc = view::encode(scene.features, scene.prototypes, scene.hits, model.encoder, ecfg);
  const decoder::Extents occ{cfg.scene.H, cfg.scene.W, cfg.scene.Z};
  const auto& q = cfg.model.query;

  ForwardResult out;
  Tensor contrastive;
  if (cfg.ablation.proto_optimization) {
    const auto gh = cfg.grid_h(), gw = cfg.grid_w();
    const Tensor mapped = proto::map_affinity_to_grid(view::gated_affinity(enc.affinity), scene.hits, gh, gw);
    const Tensor x = proto::prototype_pixel_features(enc.salience, mapped, enc.voxel_protos, gh, gw);
    const auto centroids = proto::mask_centroids(x, scene.masks);
    contrastive = proto::contrastive_loss(x, centroids, scene.masks, cfg.loss.tau_cls);
  }

  const Tensor grid = ops::reshape(enc.queries, {q[0], q[1], q[2], cfg.model.d});
  out.branches.push_back(decoder::decode_branch(grid, {}, model.decoder, occ));
  if (cfg.ablation.mod) {
    for (const auto& spec : cfg.augmentation) {
      const auto aug = decoder::apply_augmentation(grid, spec, rng);
      out.branches.push_back(decoder::decode_branch(aug.grid, aug.transform, model.decoder, occ));
    }
  }

  std::vector<losses::BranchLoss> branch_losses;
  for (const auto& probs : out.branches) {
    branch_losses.push_back({losses::occupancy_ce_loss(probs, scene.labels, cfg.loss.class_weights),
                             losses::lovasz_softmax_loss(probs, scene.labels)});
    out.parts.occupancy += branch_losses.back().occupancy.item();
    out.parts.lovasz += branch_losses.back().lovasz.item();
  }
  Tensor consistency;
  // With MOD on and an empty plan, branch 0 is pulled toward its own sharpened copy.
  if (cfg.ablation.mod) {
    consistency = decoder::consistency_loss(out.branches, cfg.loss.tau_cons);
    out.parts.consistency = consistency.item();
    out.parts.disagreement = decoder::mean_pairwise_disagreement(out.branches);
  }
  if (contrastive.defined()) out.parts.contrastive = contrastive.item();

  // A zero weight still reports the component but keeps it out of the graph.
  out.loss = losses::total_loss(branch_losses, cfg.loss.weights.contrastive > 0 ? contrastive : Tensor{},
                                cfg.loss.weights.consistency > 0 ? consistency : Tensor{}, cfg.loss.weights);
  out.parts.total = out.loss.item();
  check_finite(out.parts.occupancy, "occupancy");
  check_finite(out.parts.lovasz, "lovasz");
  check_finite(out.parts.contrastive, "contrastive");
  check_finite(out.parts.consistency, "consistency");
  check_finite(out.parts.total, "total");
  return out;
}

Tensor predict(const Model& model, const PreparedScene& scene, const ExperimentConfig& cfg) {
  NoGradGuard no_grad;
  auto ecfg = encoder_config(cfg);
  ecfg.keep_prototypes = false;  // P_vox only feeds the training-time contrastive term
  const auto enc = view::encode(scene.features, scene.prototypes, scene.hits, model.encoder, ecfg);
  const auto& q = cfg.model.query;
  const Tensor grid = ops::reshape(enc.queries, {q[0], q[1], q[2], cfg.model.d});
  return decoder::decode_branch(grid, {}, model.decoder, {cfg.scene.H, cfg.scene.W, cfg.scene.Z});
}

}  // namespace protoocc::harness
