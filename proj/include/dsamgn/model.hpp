#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsamgn/batch_norm.hpp"
#include "dsamgn/config.hpp"
#include "dsamgn/graph_block.hpp"
#include "dsamgn/serialize.hpp"

namespace dsamgn {

enum class Backbone { ToyConv, Passthrough };
enum class RetrievalPoint { Gap, Bn };

std::string to_string(Backbone b);
std::string to_string(RetrievalPoint r);

/// Network shape and hyperparameters. Field names double as config keys.
struct ModelConfig {
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  std::size_t channels = 16;
  std::size_t n_blocks = 2;
  double beta = 95.0;            // erasure percentile
  std::size_t ffd_hidden = 0;    // 0 -> 2·channels
  std::size_t n_identities = 20;
  Backbone backbone = Backbone::Passthrough;
  bool residual = false;
  RetrievalPoint retrieval_embedding = RetrievalPoint::Gap;
  std::size_t image_channels = 3;  // toy_conv input planes
  std::uint64_t model_seed = 1;

  std::size_t n_patches() const { return grid_h * grid_w; }
  std::size_t hidden_width() const { return ffd_hidden ? ffd_hidden : 2 * channels; }
  /// Per-sample input shape: C×H×W feature map, or image_channels×8H×8W for toy_conv.
  Shape sample_shape() const;

  /// Throws ConfigError on a violated invariant.
  void validate() const;

  static ModelConfig read(KeyValueConfig& kv);
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
};

/// The three supervision points plus classifier logits, all with batch extent B.
struct ForwardOutputs {
  Tensor backbone_vec;  // GAP of the backbone feature map
  Tensor gap_vec;       // GAP over patches after the DSAM-GN stack
  Tensor bn_vec;        // gap_vec after batch norm
  Tensor logits;        // B×n_identities

  const Tensor& embedding(RetrievalPoint point) const {
    return point == RetrievalPoint::Gap ? gap_vec : bn_vec;
  }
};

/// Three stride-2 3×3 convolutions with ReLU, shrinking 8H×8W to H×W.
struct ToyConvParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

class Model {
 public:
  /// Fresh parameters drawn from config.model_seed.
  explicit Model(ModelConfig config);

  // Non-copyable; clone() returns an independent model.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model clone() const { return from_checkpoint(to_checkpoint()); }

  const ModelConfig& config() const { return config_; }
  void set_beta(double beta);

  Tensor backbone_forward(const Tensor& batch) const;
  ForwardOutputs forward(const Tensor& batch, bool training,
                         std::vector<std::vector<BlockTrace>>* traces = nullptr);
  /// Eval-mode retrieval embeddings for a batch.
  Tensor embed(const Tensor& batch);

  NamedTensors parameters() const;
  /// BN running statistics as tensors (copies).
  NamedTensors buffers() const;

  std::vector<BlockParams>& blocks() { return blocks_; }
  const std::vector<BlockParams>& blocks() const { return blocks_; }
  BatchNormState& batch_norm() { return bn_; }
  const Tensor& classifier() const { return classifier_; }
  const ToyConvParams& toy_conv() const { return toy_conv_; }

  Container to_checkpoint() const;
  static Model from_checkpoint(const Container& c);
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  ToyConvParams toy_conv_;
  std::vector<BlockParams> blocks_;
  BatchNormState bn_;
  Tensor classifier_;  // n_identities×C, no bias
};

}  // namespace dsamgn
