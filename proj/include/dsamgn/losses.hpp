#pragma once

#include <span>
#include <string>

#include "dsamgn/config.hpp"
#include "dsamgn/model.hpp"
#include "dsamgn/tensor.hpp"

namespace dsamgn {

enum class Mining { BatchHard, AllPairs };

std::string to_string(Mining m);

/// Weights of the composite objective α·L_res + β·L_triplet + γ·L_ID.
struct LossConfig {
  double loss_weight_res = 1.0;
  double loss_weight_triplet = 1.0;
  double loss_weight_id = 1.0;
  double margin = 0.3;
  Mining mining = Mining::BatchHard;

  void validate() const;
  static LossConfig read(KeyValueConfig& kv);
};

/// Added under the square root of every pairwise distance.
inline constexpr double kDistanceEps = 1e-12;

/// Margin ranking loss over Euclidean distances.
///
/// batch_hard: per anchor, hinge(max positive distance − min negative distance + margin),
/// averaged over anchors that have both a positive and a negative.
/// all_pairs: hinge averaged over every valid (anchor, positive, negative) triple.
/// Throws std::invalid_argument when the batch admits no triplet.
Tensor triplet_loss(const Tensor& embeddings, std::span<const int> labels, double margin,
                    Mining mining = Mining::BatchHard);

/// Mean cross-entropy of logits against labels in [0, K).
Tensor id_loss(const Tensor& logits, std::span<const int> labels);

struct LossBreakdown {
  Tensor total;
  double res = 0.0;
  double triplet = 0.0;
  double id = 0.0;
};

LossBreakdown total_loss(const ForwardOutputs& outputs, std::span<const int> labels,
                         const LossConfig& cfg);

}  // namespace dsamgn
