// SPDX-License-Identifier: Apache-2.0
#include "protoocc/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "protoocc/errors.hpp"

namespace protoocc::harness {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void accumulate(LossParts& sum, const LossParts& x) {
  sum.total += x.total;
  sum.occupancy += x.occupancy;
  sum.lovasz += x.lovasz;
  sum.contrastive += x.contrastive;
  sum.consistency += x.consistency;
  sum.disagreement += x.disagreement;
}

LossParts divided(LossParts s, double n) {
  s.total /= n;
  s.occupancy /= n;
  s.lovasz /= n;
  s.contrastive /= n;
  s.consistency /= n;
  s.disagreement /= n;
  return s;
}

}  // namespace

std::string MetricsLog::to_csv(bool include_wall_time) const {
  std::string out = "epoch,total,occupancy,lovasz,contrastive,consistency,disagreement,val_miou,val_iou";
  if (include_wall_time) out += ",wall_seconds";
  out += "\n";
  for (const auto& r : epochs) {
    const auto& p = r.train;
    out += std::to_string(r.epoch) + "," + fmt(p.total) + "," + fmt(p.occupancy) + "," + fmt(p.lovasz) + "," +
           fmt(p.contrastive) + "," + fmt(p.consistency) + "," + fmt(p.disagreement) + "," + fmt(r.val_miou) + "," +
           fmt(r.val_iou);
    if (include_wall_time) out += "," + fmt(r.wall_seconds);
    out += "\n";
  }
  return out;
}

Checkpoint make_checkpoint(const Model& model, const ExperimentConfig& cfg, std::uint64_t step, Rng::State rng) {
  Checkpoint c{cfg, {}, step, rng};
  for (const auto& [name, t] : model.named_parameters()) {
    std::vector<double> v(t.data().begin(), t.data().end());
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
    c.tensors.emplace_back(name, Tensor(t.shape(), std::move(v)));
  }
  return c;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  ckpt.config.validate();
  Rng scratch(0);
  Model model = Model::init(ckpt.config, scratch);
  const auto named = model.named_parameters();
  if (named.size() != ckpt.tensors.size())
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, config 'model' expects " +
                      std::to_string(named.size()));
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& [name, dst] = named[i];
    const auto& [src_name, src] = ckpt.tensors[i];
    if (name != src_name) throw ConfigError("checkpoint tensor '" + src_name + "' where '" + name + "' was expected");
    if (dst.shape() != src.shape())
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) + ", config implies " +
                        shape_str(dst.shape()));
    auto out = Tensor(dst).data_mut();
    std::copy(src.data().begin(), src.data().end(), out.begin());
  }
  return model;
}

AdamW::AdamW(std::vector<Tensor> params, const OptimConfig& cfg, std::size_t total_steps)
    : params_(std::move(params)), cfg_(cfg), total_steps_(std::max<std::size_t>(total_steps, 1)) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

double AdamW::learning_rate() const {
  if (cfg_.schedule == "constant") return cfg_.lr;
  const double progress = std::min(1.0, static_cast<double>(t_) / static_cast<double>(total_steps_));
  return 0.5 * cfg_.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step() {
  const double lr = learning_rate();
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.data_mut();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = p.rank() >= 2 ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1 - cfg_.beta2) * g[k] * g[k];
      w[k] -= decay * w[k] + lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.adam_eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

EvalMetrics evaluate_model(const Model& model, const ExperimentConfig& cfg, std::span<const PreparedScene> scenes) {
  losses::IouAccumulator acc(cfg.scene.num_classes, true);
  for (const auto& s : scenes) {
    if (s.labels.size() != cfg.scene.H * cfg.scene.W * cfg.scene.Z)
      throw ConfigError("scene label count does not match config fields 'scene.H/W/Z'");
    acc.add(losses::argmax_labels(predict(model, s, cfg)), s.labels);
  }
  const auto r = acc.result();
  return {r.mean, r.occupancy_iou, r.per_class};
}

EvalMetrics evaluate(const Checkpoint& ckpt, std::span<const PreparedScene> scenes) {
  return evaluate_model(model_from_checkpoint(ckpt), ckpt.config, scenes);
}

EvalMetrics evaluate(const Checkpoint& ckpt, std::span<const scene::SceneFile> scenes) {
  const auto prepared = prepare_scenes(scenes, ckpt.config);
  return evaluate(ckpt, prepared);
}

TrainResult train(const ExperimentConfig& cfg, std::span<const PreparedScene> scenes,
                  std::span<const PreparedScene> val, std::uint64_t seed, const EpochCallback& on_epoch) {
  cfg.validate();
  if (scenes.empty()) throw ParameterError("train needs at least one scene");
  const Rng base(seed);
  Rng init = base.split("init");
  Model model = Model::init(cfg, init);
  Rng stream = base.split("train");
  AdamW opt(model.parameters(), cfg.optim, cfg.train.epochs * scenes.size());

  TrainResult result;
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[stream.uniform_int(i)]);

    LossParts sum;
    for (const auto idx : order) {
      opt.zero_grad();
      ForwardResult f;
      try {
        f = forward_loss(model, scenes[idx], cfg, stream);
      } catch (const EvaluationError& e) {
        throw EvaluationError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(opt.steps_taken() + 1));
      }
      f.loss.backward();
      opt.step();
      accumulate(sum, f.parts);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = divided(sum, static_cast<double>(scenes.size()));
    if (!val.empty() && (cfg.train.eval_each_epoch || epoch == cfg.train.epochs)) {
      const auto m = evaluate_model(model, cfg, val);
      rec.val_miou = m.miou;
      rec.val_iou = m.iou;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.checkpoint = make_checkpoint(model, cfg, opt.steps_taken(), stream.state());
  return result;
}

}  // namespace protoocc::harness
