// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "protoocc/tensor.hpp"

namespace protoocc::losses {

/// Mean negative log-likelihood of the true labels. `probs` is [cells, L];
/// optional per-class weights turn it into a weighted mean.
Tensor occupancy_ce_loss(const Tensor& probs, std::span<const std::uint8_t> labels,
                         std::span<const double> class_weights = {});

/// Lovász extension of the Jaccard loss on probability errors, averaged over
/// the classes present in `labels`. Returns 0 if no class is present.
Tensor lovasz_softmax_loss(const Tensor& probs, std::span<const std::uint8_t> labels);

struct LossWeights {
  double occupancy = 10.0;    // lambda1
  double lovasz = 1.0;        // lambda2
  double contrastive = 1.0;   // lambda3
  double consistency = 1.0;   // lambda4
};

struct BranchLoss {
  Tensor occupancy;
  Tensor lovasz;
};

/// sum_p (l1 occ_p + l2 lov_p) + l3 cls + l4 cons. Undefined cls/cons count as 0.
Tensor total_loss(std::span<const BranchLoss> branches, const Tensor& contrastive,
                  const Tensor& consistency, const LossWeights& weights);

struct IouResult {
  std::vector<std::optional<double>> per_class;  // empty when excluded from the mean
  double mean = 0;
  double occupancy_iou = 0;  // occupied vs free
};

/// Confusion counts accumulated over any number of grids.
class IouAccumulator {
 public:
  IouAccumulator(std::size_t num_classes, bool ignore_free);

  void add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);
  IouResult result() const;

 private:
  std::size_t num_classes_;
  bool ignore_free_;
  std::vector<std::uint64_t> intersection_, predicted_, truth_;
  std::uint64_t occ_inter_ = 0, occ_union_ = 0;
};

IouResult miou(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth,
               std::size_t num_classes, bool ignore_free);

/// Row-wise argmax of [cells, L].
std::vector<std::uint8_t> argmax_labels(const Tensor& probs);

}  // namespace protoocc::losses
