#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsamgn/rng.hpp"
#include "dsamgn/sasamg.hpp"
#include "dsamgn/tensor.hpp"

namespace dsamgn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// N×C patch embeddings with positional encoding applied.
struct PatchSequence {
  Tensor x;

  std::size_t n_patches() const { return x.dim(0); }
  std::size_t channels() const { return x.dim(1); }
};

/// Two-layer perceptron C -> hidden -> C with ReLU between the layers.
/// Weights are stored out×in.
struct FeedForwardParams {
  Tensor w1, b1, w2, b2;

  static FeedForwardParams init(std::size_t channels, std::size_t hidden, Rng& rng);
};

struct BlockParams {
  Tensor p_pos;                  // N×C learnable positional encoding
  SasamgParams branch_a, branch_b;
  Tensor w_gn_a, w_gn_b;         // (C/2)×(C/2) graph weights
  FeedForwardParams ffd;

  /// hidden = 0 selects the default width 2·C.
  static BlockParams init(std::size_t n_patches, std::size_t channels, std::size_t hidden,
                          Rng& rng);
  std::size_t n_patches() const { return p_pos.dim(0); }
  std::size_t channels() const { return p_pos.dim(1); }
  NamedTensors named_parameters(const std::string& prefix) const;
};

struct BranchTrace {
  SasamgOutput sasamg;
  Tensor output;  // graph-propagated N×(C/2) features
};

/// Intermediate values of one block, for diagnostics.
struct BlockTrace {
  std::array<BranchTrace, 2> branches;
  Tensor output;
};

PatchSequence add_positional(const Tensor& x, const Tensor& p_pos);

/// ReLU(A · h · Wᵀ): row i aggregates W·h_j over the columns j kept in A's row i.
Tensor graph_propagate(const Tensor& h, const Tensor& adjacency, const Tensor& w);
Tensor graph_propagate(const Tensor& h, const SimilarityAdjacency& a, const Tensor& w);

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p);

/// Positional encoding, channel split, per-branch adjacency + propagation,
/// channel concat, feed-forward. `residual` adds the block input to the output.
Tensor dsamgn_block(const Tensor& x, const BlockParams& params, double beta,
                    bool residual = false, BlockTrace* trace = nullptr);

/// Applies the blocks in order. Throws on an empty list.
Tensor stack_blocks(const Tensor& x, std::span<const BlockParams> blocks, double beta,
                    bool residual = false, std::vector<BlockTrace>* traces = nullptr);

}  // namespace dsamgn
