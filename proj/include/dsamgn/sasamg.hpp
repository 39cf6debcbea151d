#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dsamgn/rng.hpp"
#include "dsamgn/tensor.hpp"

// Spatial-attention similarity adjacency generation: query/key projections,
// row-softmax similarity, and percentile-based dynamic erasure.
namespace dsamgn {

/// Trainable query/key projections for one branch. Both are Cin×Cin and the
/// attention scale uses d_k = Cin.
struct SasamgParams {
  Tensor w_q;
  Tensor w_k;

  static SasamgParams init(std::size_t channels, Rng& rng);
  std::size_t channels() const { return w_q.dim(0); }
  double key_dim() const { return static_cast<double>(channels()); }
};

/// N×N row-stochastic attention matrix.
struct SimilarityMatrix {
  Tensor s;
};

/// Similarity matrix after erasure: a[i][j] = s[i][j] where s[i][j] > threshold, else 0.
struct SimilarityAdjacency {
  Tensor a;
  double threshold = 0.0;
  double beta = 0.0;
  std::vector<std::uint8_t> keep;  // flat N·N retention mask

  std::size_t retained() const;
};

SimilarityMatrix similarity(const Tensor& x, const SasamgParams& params);

/// 1-based rank k = ceil(beta/100 · n) of the percentile entry; 0 only for beta = 0.
std::size_t percentile_rank(std::size_t n, double beta);

/// k-th smallest of `values` with k from percentile_rank, or -inf when k = 0
/// (beta = 0 erases nothing). Throws std::domain_error for beta outside [0, 100].
double percentile_threshold(std::span<const double> values, double beta);
double percentile_threshold(const SimilarityMatrix& s, double beta);

/// Dynamic erasure with strict inequality. The retention mask is constant
/// with respect to backward; gradients reach S only through retained entries.
SimilarityAdjacency erase(const SimilarityMatrix& s, double beta);

struct SasamgOutput {
  SimilarityMatrix similarity;
  SimilarityAdjacency adjacency;
};

SasamgOutput sasamg_forward(const Tensor& x, const SasamgParams& params, double beta);

}  // namespace dsamgn
