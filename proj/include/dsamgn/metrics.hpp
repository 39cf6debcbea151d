#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsamgn/tensor.hpp"

namespace dsamgn {

/// Gallery indices by ascending Euclidean distance to `query`; exact ties keep
/// gallery order.
std::vector<std::size_t> rank_gallery(std::span<const double> query, const Tensor& gallery);

/// Precision-at-hit average over the ranked list. nullopt when the query
/// identity never appears (the query is excluded, not scored).
std::optional<double> average_precision(std::span<const int> ranked_ids, int query_id);

/// 1-based rank of the first correct match, nullopt if none.
std::optional<std::size_t> first_hit_rank(std::span<const int> ranked_ids, int query_id);

/// Rank-k rates: fraction of scored queries whose first correct match is at rank ≤ k.
/// Queries with no correct match anywhere are skipped.
std::vector<double> cmc(const std::vector<std::vector<int>>& ranked_ids_per_query,
                        std::span<const int> query_ids, std::span<const std::size_t> ks);

struct RetrievalResult {
  std::vector<double> per_query_ap;  // scored queries, in query order
  double mean_ap = 0.0;
  std::vector<std::size_t> ks;
  std::vector<double> cmc;           // aligned with ks
  std::size_t excluded_queries = 0;

  /// Rate for rank k, which must be one of `ks`.
  double rank(std::size_t k) const;
};

/// Full retrieval protocol. `exclude`, when given, holds one G-length mask per
/// query; masked gallery entries are dropped from that query's ranking.
RetrievalResult evaluate_retrieval(const Tensor& query_emb, const Tensor& gallery_emb,
                                   std::span<const int> query_ids,
                                   std::span<const int> gallery_ids,
                                   std::vector<std::size_t> ks = {1, 5},
                                   const std::vector<std::vector<std::uint8_t>>* exclude = nullptr);

/// {"mAP", "rank1", "rank5", "per_query_ap", "excluded_queries"} as JSON text.
std::string metrics_json(const RetrievalResult& r);

}  // namespace dsamgn
