#pragma once

#include <string>
#include <utility>
#include <vector>

#include "trajtok/config.hpp"
#include "trajtok/params.hpp"
#include "trajtok/rng.hpp"
#include "trajtok/tensor.hpp"

// Segmentation supervision (Dice + Focal over a Hungarian matching) and a
// small symmetric contrastive head. All losses return scalar tensors and are
// differentiable in the prediction inputs; matching runs on plain values.
namespace trajtok {

// 1 - (2*sum(pred*target) + eps) / (sum(pred) + sum(target) + eps)
Tensor dice_loss(const Tensor& pred, const Tensor& target, double eps);

// Mean over elements of -alpha_t * (1 - p_t)^gamma * log(p_t), where
// p_t = pred where target is 1 and 1 - pred elsewhere, clamped to
// [1e-7, 1 - 1e-7]; alpha_t follows the same selection.
Tensor focal_loss(const Tensor& pred, const Tensor& target, double alpha, double gamma);

struct Matching {
  std::vector<std::pair<long long, long long>> pairs;  // (row, col), ascending rows
  double cost = 0.0;
};

// Minimum-total-cost one-to-one assignment of min(rows, cols) pairs. Among
// equally cheap assignments the row-sorted pair list is lexicographically
// smallest: earlier rows are matched in preference to later ones, and each
// takes the smallest column an optimal completion allows.
Matching hungarian_match(const Tensor& cost);

struct SegLossResult {
  Tensor total;  // lambda-weighted combination
  Tensor dice;   // mean dice over matched pairs
  Tensor focal;  // mean focal over matched pairs
  Tensor ce;     // per-pixel cross-entropy vs the matched assignment (zero when off)
  std::vector<std::pair<long long, long long>> assignment;  // (query, gt region)
};

// soft: [N_q, P] mask probabilities; gt: [K, P] binary panoptic regions
// (background included). Matching minimizes the same weighted dice+focal
// combination the loss averages over the matched pairs. With lambda_ce > 0,
// pixels of matched regions add cross-entropy toward their matched query;
// pixels of unmatched regions are left out of that mean.
SegLossResult segmentation_loss(const Tensor& soft, const Tensor& gt, const LossConfig& cfg);

// Symmetric InfoNCE over one batch: rows of both sides are unit-normalized,
// logits are cosines over temperature, and the two softmax directions are
// averaged. Requires at least two items.
Tensor contrastive_loss(const Tensor& visual, const Tensor& labels, double temperature);

// Learned per-scene-class vectors standing in for a text tower.
struct ContrastiveParams {
  Tensor embeddings;  // [n_classes, d]

  template <class F>
  void visit(F&& f) {
    f("label_embeddings", embeddings);
  }
};

ContrastiveParams init_contrastive_params(long long n_classes, long long d, const CounterRng& rng);

}  // namespace trajtok
