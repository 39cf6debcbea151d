#include "dsamgn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dsamgn/errors.hpp"

namespace dsamgn {

std::vector<std::size_t> rank_gallery(std::span<const double> query, const Tensor& gallery) {
  if (gallery.rank() != 2 || gallery.dim(1) != query.size()) {
    throw DimensionError("rank_gallery: query of dimension " + std::to_string(query.size()) +
                         " vs gallery " + shape_string(gallery.shape()));
  }
  const std::size_t g = gallery.dim(0), c = gallery.dim(1);
  auto gd = gallery.data();
  std::vector<double> dist(g);
  for (std::size_t i = 0; i < g; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double diff = gd[i * c + k] - query[k];
      s += diff * diff;
    }
    dist[i] = std::sqrt(s);
  }
  std::vector<std::size_t> order(g);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

std::optional<double> average_precision(std::span<const int> ranked_ids, int query_id) {
  std::size_t hits = 0;
  double acc = 0.0;
  for (std::size_t r = 0; r < ranked_ids.size(); ++r) {
    if (ranked_ids[r] != query_id) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  if (hits == 0) return std::nullopt;
  return acc / static_cast<double>(hits);
}

std::optional<std::size_t> first_hit_rank(std::span<const int> ranked_ids, int query_id) {
  for (std::size_t r = 0; r < ranked_ids.size(); ++r)
    if (ranked_ids[r] == query_id) return r + 1;
  return std::nullopt;
}

std::vector<double> cmc(const std::vector<std::vector<int>>& ranked_ids_per_query,
                        std::span<const int> query_ids, std::span<const std::size_t> ks) {
  if (ranked_ids_per_query.size() != query_ids.size()) {
    throw std::invalid_argument("cmc: one ranked list per query required");
  }
  std::vector<double> rates(ks.size(), 0.0);
  std::size_t scored = 0;
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    const auto first = first_hit_rank(ranked_ids_per_query[q], query_ids[q]);
    if (!first) continue;
    ++scored;
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (*first <= ks[i]) rates[i] += 1.0;
  }
  if (scored > 0)
    for (auto& r : rates) r /= static_cast<double>(scored);
  return rates;
}

double RetrievalResult::rank(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return cmc[i];
  throw std::out_of_range("rank-" + std::to_string(k) + " was not evaluated");
}

RetrievalResult evaluate_retrieval(const Tensor& query_emb, const Tensor& gallery_emb,
                                   std::span<const int> query_ids,
                                   std::span<const int> gallery_ids, std::vector<std::size_t> ks,
                                   const std::vector<std::vector<std::uint8_t>>* exclude) {
  if (query_emb.rank() != 2 || query_emb.dim(0) != query_ids.size() ||
      gallery_emb.rank() != 2 || gallery_emb.dim(0) != gallery_ids.size()) {
    throw DimensionError("evaluate_retrieval: query " + shape_string(query_emb.shape()) +
                         " / gallery " + shape_string(gallery_emb.shape()) +
                         " do not match label counts");
  }
  if (exclude && exclude->size() != query_ids.size()) {
    throw DimensionError("evaluate_retrieval: one exclusion mask per query required");
  }
  const std::size_t c = query_emb.dim(1);
  RetrievalResult result;
  result.ks = std::move(ks);
  std::vector<std::vector<int>> ranked;
  std::vector<int> scored_ids;
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    const auto order = rank_gallery(query_emb.data().subspan(q * c, c), gallery_emb);
    std::vector<int> ids;
    ids.reserve(order.size());
    for (auto g : order) {
      if (exclude && (*exclude)[q].at(g)) continue;
      ids.push_back(gallery_ids[g]);
    }
    const auto ap = average_precision(ids, query_ids[q]);
    if (!ap) {
      ++result.excluded_queries;
      continue;
    }
    result.per_query_ap.push_back(*ap);
    ranked.push_back(std::move(ids));
    scored_ids.push_back(query_ids[q]);
  }
  if (!result.per_query_ap.empty()) {
    result.mean_ap = std::accumulate(result.per_query_ap.begin(), result.per_query_ap.end(), 0.0) /
                     static_cast<double>(result.per_query_ap.size());
  }
  result.cmc = cmc(ranked, scored_ids, result.ks);
  return result;
}

std::string metrics_json(const RetrievalResult& r) {
  nlohmann::ordered_json j;
  j["mAP"] = r.mean_ap;
  for (std::size_t i = 0; i < r.ks.size(); ++i) j["rank" + std::to_string(r.ks[i])] = r.cmc[i];
  j["per_query_ap"] = r.per_query_ap;
  j["excluded_queries"] = r.excluded_queries;
  return j.dump(2) + "\n";
}

}  // namespace dsamgn
