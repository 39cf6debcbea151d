#include "dsamgn/sasamg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dsamgn/errors.hpp"
#include "dsamgn/init.hpp"
#include "dsamgn/ops.hpp"

namespace dsamgn {

SasamgParams SasamgParams::init(std::size_t channels, Rng& rng) {
  SasamgParams p;
  p.w_q = glorot_uniform({channels, channels}, channels, channels, rng);
  p.w_k = glorot_uniform({channels, channels}, channels, channels, rng);
  return p;
}

std::size_t SimilarityAdjacency::retained() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
}

SimilarityMatrix similarity(const Tensor& x, const SasamgParams& params) {
  if (x.rank() != 2 || x.dim(1) != params.channels()) {
    throw DimensionError("similarity: patches " + shape_string(x.shape()) +
                         " do not match projections " + shape_string(params.w_q.shape()));
  }
  if (x.dim(0) == 0) throw DimensionError("similarity: need at least one patch");
  const Tensor q = matmul(x, params.w_q);
  const Tensor k = matmul(x, params.w_k);
  const Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(params.key_dim()));
  return {softmax_rows(logits)};
}

std::size_t percentile_rank(std::size_t n, double beta) {
  if (!(beta >= 0.0 && beta <= 100.0)) {
    throw std::domain_error("percentile beta must lie in [0, 100], got " + std::to_string(beta));
  }
  const double k = std::ceil(beta * static_cast<double>(n) / 100.0);
  return std::min(n, static_cast<std::size_t>(k));
}

double percentile_threshold(std::span<const double> values, double beta) {
  const std::size_t k = percentile_rank(values.size(), beta);
  if (values.empty()) throw DimensionError("percentile of an empty matrix");
  if (k == 0) return -std::numeric_limits<double>::infinity();
  std::vector<double> sorted(values.begin(), values.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   sorted.end());
  return sorted[k - 1];
}

double percentile_threshold(const SimilarityMatrix& s, double beta) {
  return percentile_threshold(s.s.data(), beta);
}

SimilarityAdjacency erase(const SimilarityMatrix& s, double beta) {
  SimilarityAdjacency adj;
  adj.beta = beta;
  adj.threshold = percentile_threshold(s, beta);
  auto values = s.s.data();
  adj.keep.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) adj.keep[i] = values[i] > adj.threshold ? 1 : 0;
  adj.a = masked(s.s, adj.keep);
  return adj;
}

SasamgOutput sasamg_forward(const Tensor& x, const SasamgParams& params, double beta) {
  SasamgOutput out;
  out.similarity = similarity(x, params);
  out.adjacency = erase(out.similarity, beta);
  return out;
}

}  // namespace dsamgn
