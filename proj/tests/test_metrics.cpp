#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "dsamgn/errors.hpp"
#include "dsamgn/metrics.hpp"
#include "dsamgn/ops.hpp"
#include "support.hpp"

using namespace dsamgn;
using dsamgn::test::random_orthogonal;
using dsamgn::test::random_tensor;

namespace {

std::vector<int> random_ids(std::size_t n, int k, Rng& rng) {
  std::vector<int> ids(n);
  for (auto& id : ids) id = static_cast<int>(rng.index(static_cast<std::size_t>(k)));
  return ids;
}

void expect_same(const RetrievalResult& a, const RetrievalResult& b, double tol) {
  CHECK(std::abs(a.mean_ap - b.mean_ap) <= tol);
  REQUIRE(a.cmc.size() == b.cmc.size());
  for (std::size_t i = 0; i < a.cmc.size(); ++i) CHECK(std::abs(a.cmc[i] - b.cmc[i]) <= tol);
  CHECK(a.excluded_queries == b.excluded_queries);
}

}  // namespace

TEST_CASE("rank_gallery examples") {
  const std::vector<double> q{0.0, 0.0};
  const auto order = rank_gallery(q, Tensor::matrix({{2, 0}, {0, 1}}));
  CHECK(order == std::vector<std::size_t>{1, 0});
  const auto tied = rank_gallery(q, Tensor::matrix({{1, 0}, {0, 1}, {-1, 0}, {0, 3}}));
  CHECK(tied == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK_THROWS_AS(rank_gallery(q, Tensor({3, 3})), DimensionError);
}

TEST_CASE("rank_gallery matches a full sort oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor g = random_tensor({10, 3}, rng);
    const Tensor q = random_tensor({3}, rng);
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t i = 0; i < 10; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) s += std::pow(g.at(i, c) - q.data()[c], 2);
      keyed.emplace_back(s, i);
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::size_t> want;
    for (const auto& [d, i] : keyed) want.push_back(i);
    CHECK(rank_gallery(q.data(), g) == want);
  }
}

TEST_CASE("average precision examples") {
  const std::vector<int> ranks13{7, 1, 7, 2, 3};
  CHECK(std::abs(*average_precision(ranks13, 7) - (1.0 + 2.0 / 3.0) / 2.0) < 1e-15);
  CHECK(std::abs(*average_precision(ranks13, 7) - 0.8333333333) < 1e-9);
  const std::vector<int> perfect{4, 4, 4, 1, 2};
  CHECK(*average_precision(perfect, 4) == 1.0);
  for (std::size_t g = 1; g <= 12; ++g) {
    std::vector<int> last(g, 0);
    last.back() = 9;
    CHECK(std::abs(*average_precision(last, 9) - 1.0 / static_cast<double>(g)) < 1e-15);
  }
  CHECK_FALSE(average_precision(perfect, 5).has_value());
}

TEST_CASE("cmc examples") {
  const std::vector<std::vector<int>> ranked{{1, 2, 3, 4, 5, 6}, {2, 3, 1, 4, 5, 6}, {2, 3, 4, 5, 6, 1}};
  const std::vector<int> qids{1, 1, 1};
  const std::vector<std::size_t> ks{1, 5};
  const auto rates = cmc(ranked, qids, ks);
  CHECK(rates[0] == doctest::Approx(1.0 / 3.0));
  CHECK(rates[1] == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("cmc matches a brute-force first-hit scan") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<int>> ranked;
    std::vector<int> qids;
    for (int q = 0; q < 20; ++q) {
      ranked.push_back(random_ids(15, 6, rng));
      qids.push_back(static_cast<int>(rng.index(6)));
    }
    const std::vector<std::size_t> ks{1, 3, 5, 10};
    const auto rates = cmc(ranked, qids, ks);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      std::size_t scored = 0, within = 0;
      for (std::size_t q = 0; q < ranked.size(); ++q) {
        auto it = std::find(ranked[q].begin(), ranked[q].end(), qids[q]);
        if (it == ranked[q].end()) continue;
        ++scored;
        if (static_cast<std::size_t>(it - ranked[q].begin()) < ks[i]) ++within;
      }
      CHECK(rates[i] == doctest::Approx(static_cast<double>(within) / static_cast<double>(scored)));
    }
  }
}

TEST_CASE("property: bounds, orthogonal and translation invariance, gallery shuffle") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t qn = 1 + rng.index(10), gn = 2 + rng.index(30), c = 1 + rng.index(6);
    const Tensor q = random_tensor({qn, c}, rng);
    const Tensor g = random_tensor({gn, c}, rng);
    const auto qids = random_ids(qn, 4, rng);
    const auto gids = random_ids(gn, 4, rng);
    const RetrievalResult base = evaluate_retrieval(q, g, qids, gids);
    CHECK(base.rank(1) <= base.rank(5));
    CHECK(base.rank(5) <= 1.0);
    CHECK(base.mean_ap <= 1.0);
    CHECK(base.per_query_ap.size() + base.excluded_queries == qn);

    const Tensor rot = random_orthogonal(c, rng);
    const Tensor shift = random_tensor({c}, rng, -3, 3);
    const RetrievalResult moved = evaluate_retrieval(add_row_vector(matmul(q, rot), shift),
                                                     add_row_vector(matmul(g, rot), shift), qids, gids);
    expect_same(base, moved, 1e-9);

    std::vector<std::size_t> perm(gn);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor gs({gn, c});
    std::vector<int> gids_s(gn);
    for (std::size_t i = 0; i < gn; ++i) {
      for (std::size_t k = 0; k < c; ++k) gs.at(i, k) = g.at(perm[i], k);
      gids_s[i] = gids[perm[i]];
    }
    expect_same(base, evaluate_retrieval(q, gs, qids, gids_s), 0.0);
  }
}

TEST_CASE("queries without a gallery match are excluded and counted") {
  const Tensor q = Tensor::matrix({{0}, {1}});
  const Tensor g = Tensor::matrix({{0}, {2}});
  const std::vector<int> qids{1, 5};
  const std::vector<int> gids{1, 2};
  const RetrievalResult r = evaluate_retrieval(q, g, qids, gids);
  CHECK(r.excluded_queries == 1);
  CHECK(r.per_query_ap.size() == 1);
  CHECK(r.mean_ap == 1.0);

  const std::vector<std::vector<std::uint8_t>> mask{{1, 0}, {0, 0}};
  const RetrievalResult masked = evaluate_retrieval(q, g, qids, gids, {1, 5}, &mask);
  CHECK(masked.excluded_queries == 2);
}

TEST_CASE("metrics JSON layout") {
  RetrievalResult r;
  r.per_query_ap = {1.0, 0.5};
  r.mean_ap = 0.75;
  r.ks = {1, 5};
  r.cmc = {0.5, 1.0};
  r.excluded_queries = 3;
  const auto j = nlohmann::json::parse(metrics_json(r));
  CHECK(j["mAP"] == 0.75);
  CHECK(j["rank1"] == 0.5);
  CHECK(j["rank5"] == 1.0);
  CHECK(j["per_query_ap"].size() == 2);
  CHECK(j["excluded_queries"] == 3);
}
