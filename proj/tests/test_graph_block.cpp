#include <cmath>
#include <numeric>
#include <stdexcept>

#include "doctest.h"
#include "dsamgn/errors.hpp"
#include "dsamgn/graph_block.hpp"
#include "support.hpp"

using namespace dsamgn;
using dsamgn::test::check_gradients;
using dsamgn::test::probe;
using dsamgn::test::random_tensor;

namespace {

// Randomizes every parameter (biases included) so that no path is trivially zero.
BlockParams random_block(std::size_t n, std::size_t c, Rng& rng) {
  BlockParams p = BlockParams::init(n, c, 0, rng);
  for (auto& [name, t] : p.named_parameters("")) {
    Tensor m = t;
    for (double& v : m.data()) v = rng.uniform(-1.0, 1.0);
  }
  return p;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  const std::size_t c = x.dim(1);
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t k = 0; k < c; ++k) out.at(i, k) = x.at(perm[i], k);
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("add_positional examples") {
  Rng rng(1);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor p = random_tensor({3, 4}, rng);
  CHECK(max_abs_diff(add_positional(x, Tensor::zeros({3, 4})).x, x) == 0.0);
  CHECK(max_abs_diff(add_positional(Tensor::zeros({3, 4}), p).x, p) == 0.0);
  CHECK_THROWS_AS(add_positional(x, Tensor::zeros({4, 4})), DimensionError);

  Tensor pos = random_tensor({3, 4}, rng, -1, 1, true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(add_positional(x, pos).x));
  }
  for (double g : pos.grad()) CHECK(g == 1.0);
}

TEST_CASE("graph_propagate examples") {
  const Tensor single = graph_propagate(Tensor::matrix({{1, -2}}), Tensor::matrix({{1}}),
                                        Tensor::matrix({{1, 0}, {0, 1}}));
  CHECK(single.data()[0] == 1.0);
  CHECK(single.data()[1] == 0.0);

  Rng rng(2);
  const Tensor h = random_tensor({4, 3}, rng);
  const Tensor eye3 = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  Tensor eye4({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye4.at(i, i) = 1.0;
  CHECK(max_abs_diff(graph_propagate(h, eye4, eye3), relu(h)) == 0.0);
  CHECK_THROWS_AS(graph_propagate(h, Tensor({3, 3}), eye3), DimensionError);
}

TEST_CASE("graph_propagate matches an explicit neighbor-loop oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(8);
    const std::size_t cb = 1 + rng.index(4);
    Tensor a = random_tensor({n, n}, rng, 0.0, 1.0);
    for (double& v : a.data())
      if (rng.uniform() < 0.4) v = 0.0;
    const Tensor h = random_tensor({n, cb}, rng, -2, 2);
    const Tensor w = random_tensor({cb, cb}, rng, -1, 1);
    const Tensor dense = graph_propagate(h, a, w);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> neighbors;
      for (std::size_t j = 0; j < n; ++j)
        if (a.at(i, j) != 0.0) neighbors.push_back(j);
      for (std::size_t r = 0; r < cb; ++r) {
        double acc = 0.0;
        for (std::size_t j : neighbors) {
          double wh = 0.0;
          for (std::size_t c = 0; c < cb; ++c) wh += w.at(r, c) * h.at(j, c);
          acc += a.at(i, j) * wh;
        }
        CHECK(std::abs(dense.at(i, r) - std::max(0.0, acc)) < 1e-12);
      }
    }
  }
}

TEST_CASE("block with zero input and zero FFD biases outputs zeros") {
  Rng rng(4);
  BlockParams p = BlockParams::init(4, 4, 0, rng);
  for (double& v : p.p_pos.data()) v = 0.0;
  const Tensor y = dsamgn_block(Tensor::zeros({4, 4}), p, 95);
  for (double v : y.data()) CHECK(v == 0.0);
  CHECK(y.shape() == Shape{4, 4});
}

TEST_CASE("block rejects odd channel counts") {
  Rng rng(5);
  CHECK_THROWS_AS(BlockParams::init(4, 3, 0, rng), DimensionError);
  BlockParams p = BlockParams::init(4, 4, 0, rng);
  CHECK_THROWS_AS(dsamgn_block(Tensor({4, 3}), p, 95), DimensionError);
}

TEST_CASE("property: block preserves shape") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(9);
    const std::size_t c = 2 * (1 + rng.index(4));
    BlockParams p = random_block(n, c, rng);
    CHECK(dsamgn_block(random_tensor({n, c}, rng), p, 95).shape() == Shape{n, c});
  }
}

TEST_CASE("property: permutation equivariance holds only with p_pos permuted alongside") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng.index(6);
    BlockParams p = random_block(n, 4, rng);
    const Tensor x = random_tensor({n, 4}, rng, -2, 2);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    do rng.shuffle(perm);
    while (std::is_sorted(perm.begin(), perm.end()));

    const Tensor y = dsamgn_block(x, p, 75);
    const Tensor x_perm = permute_rows(x, perm);

    BlockParams moved = p;
    moved.p_pos = permute_rows(p.p_pos, perm);
    CHECK(max_abs_diff(dsamgn_block(x_perm, moved, 75), permute_rows(y, perm)) < 1e-12);

    const Tensor unmoved = dsamgn_block(x_perm, p, 75);
    CHECK(max_abs_diff(unmoved, permute_rows(y, perm)) > 1e-6);
  }
}

TEST_CASE("beta = 100 leaves only the feed-forward bias path") {
  Rng rng(8);
  BlockParams p = random_block(5, 4, rng);
  BlockTrace trace;
  const Tensor y = dsamgn_block(random_tensor({5, 4}, rng), p, 100, false, &trace);
  for (const auto& br : trace.branches) {
    for (double v : br.output.data()) CHECK(v == 0.0);
    CHECK(br.sasamg.adjacency.retained() == 0);
  }
  const Tensor bias_only = feed_forward(Tensor::zeros({5, 4}), p.ffd);
  CHECK(max_abs_diff(y, bias_only) == 0.0);
}

TEST_CASE("two stacked blocks equal two block calls") {
  Rng rng(9);
  std::vector<BlockParams> blocks{random_block(4, 4, rng), random_block(4, 4, rng)};
  const Tensor x = random_tensor({4, 4}, rng);
  std::vector<BlockTrace> traces;
  const Tensor y = stack_blocks(x, blocks, 95, false, &traces);
  const Tensor mid = dsamgn_block(x, blocks[0], 95);
  CHECK(max_abs_diff(traces[0].output, mid) == 0.0);
  CHECK(max_abs_diff(y, dsamgn_block(mid, blocks[1], 95)) == 0.0);
  CHECK(max_abs_diff(stack_blocks(x, std::span(blocks).first(1), 95), mid) == 0.0);
  CHECK_THROWS_AS(stack_blocks(x, std::span<const BlockParams>(), 95), std::invalid_argument);
}

TEST_CASE("block gradients over every parameter") {
  Rng rng(10);
  BlockParams p = random_block(4, 4, rng);
  Tensor x = random_tensor({4, 4}, rng, -1, 1, true);
  for (double beta : {0.0, 95.0}) {
    CAPTURE(beta);
    auto named = p.named_parameters("");
    named.emplace_back("x", x);
    auto r = check_gradients([&] { return probe(dsamgn_block(x, p, beta)); }, named);
    CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
  }
}

TEST_CASE("two-block stack gradients") {
  Rng rng(11);
  std::vector<BlockParams> blocks{random_block(4, 4, rng), random_block(4, 4, rng)};
  Tensor x = random_tensor({4, 4}, rng, -1, 1, true);
  auto named = blocks[0].named_parameters("b0.");
  auto second = blocks[1].named_parameters("b1.");
  named.insert(named.end(), second.begin(), second.end());
  named.emplace_back("x", x);
  auto r = check_gradients([&] { return probe(stack_blocks(x, blocks, 75)); }, named);
  CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
}
