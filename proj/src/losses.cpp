#include "dsamgn/losses.hpp"

#include <map>
#include <stdexcept>

#include "dsamgn/errors.hpp"
#include "dsamgn/ops.hpp"

namespace dsamgn {

namespace {

std::string composition(std::span<const int> labels) {
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  std::string s = std::to_string(labels.size()) + " samples over " +
                  std::to_string(counts.size()) + " identities {";
  bool first = true;
  for (const auto& [id, n] : counts) {
    if (!first) s += ", ";
    first = false;
    s += std::to_string(id) + ":" + std::to_string(n);
  }
  return s + "}";
}

}  // namespace

std::string to_string(Mining m) { return m == Mining::BatchHard ? "batch_hard" : "all_pairs"; }

void LossConfig::validate() const {
  if (loss_weight_res < 0 || loss_weight_triplet < 0 || loss_weight_id < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (margin < 0) throw ConfigError("triplet margin must be non-negative");
}

LossConfig LossConfig::read(KeyValueConfig& kv) {
  LossConfig c;
  c.loss_weight_res = kv.get_double("loss_weight_res", c.loss_weight_res);
  c.loss_weight_triplet = kv.get_double("loss_weight_triplet", c.loss_weight_triplet);
  c.loss_weight_id = kv.get_double("loss_weight_id", c.loss_weight_id);
  c.margin = kv.get_double("margin", c.margin);
  const std::string mining = kv.get_string("mining", to_string(c.mining));
  if (mining == "batch_hard") {
    c.mining = Mining::BatchHard;
  } else if (mining == "all_pairs") {
    c.mining = Mining::AllPairs;
  } else {
    throw ConfigError("mining must be batch_hard or all_pairs, got '" + mining + "'");
  }
  c.validate();
  return c;
}

Tensor triplet_loss(const Tensor& embeddings, std::span<const int> labels, double margin,
                    Mining mining) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
    throw DimensionError("triplet_loss: embeddings " + shape_string(embeddings.shape()) +
                         " for " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = labels.size();
  const Tensor dist = pairwise_distance(embeddings, kDistanceEps);
  auto d = dist.data();

  std::vector<std::size_t> pos_idx, neg_idx;
  for (std::size_t a = 0; a < b; ++a) {
    if (mining == Mining::BatchHard) {
      std::size_t hp = b, hn = b;
      for (std::size_t j = 0; j < b; ++j) {
        if (j == a) continue;
        if (labels[j] == labels[a]) {
          if (hp == b || d[a * b + j] > d[a * b + hp]) hp = j;
        } else if (hn == b || d[a * b + j] < d[a * b + hn]) {
          hn = j;
        }
      }
      if (hp == b || hn == b) continue;
      pos_idx.push_back(a * b + hp);
      neg_idx.push_back(a * b + hn);
    } else {
      for (std::size_t p = 0; p < b; ++p) {
        if (p == a || labels[p] != labels[a]) continue;
        for (std::size_t n = 0; n < b; ++n) {
          if (labels[n] == labels[a]) continue;
          pos_idx.push_back(a * b + p);
          neg_idx.push_back(a * b + n);
        }
      }
    }
  }
  if (pos_idx.empty()) {
    throw std::invalid_argument("triplet_loss: no valid triplet in batch of " +
                                composition(labels));
  }
  const Tensor hinge = relu(add_scalar(sub(gather(dist, pos_idx), gather(dist, neg_idx)), margin));
  return mean(hinge);
}

Tensor id_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("id_loss: logits " + shape_string(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw DimensionError("id_loss: empty batch");
  const std::size_t k = logits.dim(1);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::out_of_range("id_loss: label " + std::to_string(labels[i]) +
                              " outside [0, " + std::to_string(k) + ")");
    }
    idx.push_back(i * k + static_cast<std::size_t>(labels[i]));
  }
  return scale(mean(gather(log_softmax_rows(logits), idx)), -1.0);
}

LossBreakdown total_loss(const ForwardOutputs& outputs, std::span<const int> labels,
                         const LossConfig& cfg) {
  const Tensor res = triplet_loss(outputs.backbone_vec, labels, cfg.margin, cfg.mining);
  const Tensor trip = triplet_loss(outputs.gap_vec, labels, cfg.margin, cfg.mining);
  const Tensor id = id_loss(outputs.logits, labels);
  LossBreakdown out;
  out.res = res.item();
  out.triplet = trip.item();
  out.id = id.item();
  out.total = add(add(scale(res, cfg.loss_weight_res), scale(trip, cfg.loss_weight_triplet)),
                  scale(id, cfg.loss_weight_id));
  return out;
}

}  // namespace dsamgn
