// SPDX-License-Identifier: Apache-2.0
#include "protoocc/losses.hpp"

#include <algorithm>
#include <numeric>

#include "protoocc/errors.hpp"
#include "protoocc/ops.hpp"

namespace protoocc::losses {

using detail::Node;

namespace {

void check_labels(const Tensor& probs, std::span<const std::uint8_t> labels, const char* what) {
  if (probs.rank() != 2 || probs.size(0) != labels.size())
    throw DimensionError(std::string(what) + ": predictions " + shape_str(probs.shape()) + " do not match " +
                         std::to_string(labels.size()) + " labels");
  for (auto l : labels)
    if (l >= probs.size(1))
      throw DataError(std::string(what) + ": label " + std::to_string(l) + " outside [0, " +
                      std::to_string(probs.size(1)) + ")");
}

}  // namespace

Tensor occupancy_ce_loss(const Tensor& probs, std::span<const std::uint8_t> labels,
                         std::span<const double> class_weights) {
  check_labels(probs, labels, "occupancy_ce_loss");
  const std::size_t l = probs.size(1);
  std::vector<std::size_t> cols(labels.begin(), labels.end());
  const Tensor nll = ops::neg(ops::log(ops::pick(probs, cols)));
  if (class_weights.empty()) return ops::mean(nll);
  if (class_weights.size() != l) throw DimensionError("occupancy_ce_loss: one weight per class expected");
  std::vector<double> w(labels.size());
  double total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) total += (w[i] = class_weights[labels[i]]);
  if (!(total > 0)) throw ParameterError("occupancy_ce_loss: class weights sum to zero on these labels");
  return ops::scale(ops::sum(ops::mask(nll, w)), 1.0 / total);
}

Tensor lovasz_softmax_loss(const Tensor& probs, std::span<const std::uint8_t> labels) {
  check_labels(probs, labels, "lovasz_softmax_loss");
  const std::size_t n = probs.size(0), l = probs.size(1);
  const auto p = probs.data();
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < l; ++c)
    if (std::find(labels.begin(), labels.end(), c) != labels.end()) present.push_back(c);
  if (present.empty()) return Tensor::scalar(0.0);

  // d loss / d p[i, c], filled class by class.
  std::vector<double> dloss(n * l, 0.0);
  double loss = 0;
  std::vector<std::size_t> order(n);
  std::vector<double> err(n);
  const double share = 1.0 / static_cast<double>(present.size());
  for (auto c : present) {
    double positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool fg = labels[i] == c;
      positives += fg;
      err[i] = fg ? 1.0 - p[i * l + c] : p[i * l + c];
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
    double cum_fg = 0, cum_bg = 0, previous = 0;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t i = order[r];
      const bool fg = labels[i] == c;
      cum_fg += fg;
      cum_bg += !fg;
      const double jaccard = 1.0 - (positives - cum_fg) / (positives + cum_bg);
      const double weight = jaccard - previous;
      previous = jaccard;
      loss += share * weight * err[i];
      dloss[i * l + c] = share * weight * (fg ? -1.0 : 1.0);
    }
  }
  return make_result({}, {loss}, {probs}, [dloss = std::move(dloss)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dloss[i];
  });
}

Tensor total_loss(std::span<const BranchLoss> branches, const Tensor& contrastive,
                  const Tensor& consistency, const LossWeights& weights) {
  Tensor total = Tensor::scalar(0.0);
  auto accumulate = [&](const Tensor& t, double w) {
    if (!t.defined()) return;
    if (t.numel() != 1) throw DimensionError("total_loss: components must be scalars");
    total = ops::add(total, ops::scale(t, w));
  };
  for (const auto& b : branches) {
    accumulate(b.occupancy, weights.occupancy);
    accumulate(b.lovasz, weights.lovasz);
  }
  accumulate(contrastive, weights.contrastive);
  accumulate(consistency, weights.consistency);
  return total;
}

IouAccumulator::IouAccumulator(std::size_t num_classes, bool ignore_free)
    : num_classes_(num_classes),
      ignore_free_(ignore_free),
      intersection_(num_classes, 0),
      predicted_(num_classes, 0),
      truth_(num_classes, 0) {
  if (num_classes < 1) throw ParameterError("IoU needs at least one class");
}

void IouAccumulator::add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) throw DimensionError("IoU: prediction and ground truth differ in size");
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto a = predicted[i], b = truth[i];
    if (a >= num_classes_ || b >= num_classes_) throw DataError("IoU: label " + std::to_string(std::max(a, b)) + " out of range");
    ++predicted_[a];
    ++truth_[b];
    if (a == b) ++intersection_[a];
    occ_inter_ += a != 0 && b != 0;
    occ_union_ += a != 0 || b != 0;
  }
}

IouResult IouAccumulator::result() const {
  IouResult r;
  r.per_class.resize(num_classes_);
  double sum = 0;
  std::size_t counted = 0;
  for (std::size_t c = ignore_free_ ? 1 : 0; c < num_classes_; ++c) {
    const auto uni = predicted_[c] + truth_[c] - intersection_[c];
    if (uni == 0) continue;
    r.per_class[c] = static_cast<double>(intersection_[c]) / static_cast<double>(uni);
    sum += *r.per_class[c];
    ++counted;
  }
  r.mean = counted ? sum / static_cast<double>(counted) : 0.0;
  r.occupancy_iou = occ_union_ ? static_cast<double>(occ_inter_) / static_cast<double>(occ_union_) : 0.0;
  return r;
}

IouResult miou(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth,
               std::size_t num_classes, bool ignore_free) {
  IouAccumulator acc(num_classes, ignore_free);
  acc.add(predicted, truth);
  return acc.result();
}

std::vector<std::uint8_t> argmax_labels(const Tensor& probs) {
  if (probs.rank() != 2) throw DimensionError("argmax_labels expects [cells, L]");
  const std::size_t n = probs.size(0), l = probs.size(1);
  const auto v = probs.data();
  std::vector<std::uint8_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < l; ++c)
      if (v[i * l + c] > v[i * l + best]) best = c;
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace protoocc::losses
