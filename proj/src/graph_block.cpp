#include "dsamgn/graph_block.hpp"

#include "dsamgn/errors.hpp"
#include "dsamgn/init.hpp"
#include "dsamgn/ops.hpp"

namespace dsamgn {

FeedForwardParams FeedForwardParams::init(std::size_t channels, std::size_t hidden, Rng& rng) {
  FeedForwardParams p;
  p.w1 = glorot_uniform({hidden, channels}, channels, hidden, rng);
  p.b1 = zeros_param({hidden});
  p.w2 = glorot_uniform({channels, hidden}, hidden, channels, rng);
  p.b2 = zeros_param({channels});
  return p;
}

BlockParams BlockParams::init(std::size_t n_patches, std::size_t channels, std::size_t hidden,
                              Rng& rng) {
  if (channels == 0 || channels % 2 != 0) {
    throw DimensionError("DSAM-GN block needs an even channel count, got " +
                         std::to_string(channels));
  }
  if (hidden == 0) hidden = 2 * channels;
  const std::size_t half = channels / 2;
  BlockParams p;
  p.p_pos = normal_init({n_patches, channels}, 0.02, rng);
  p.branch_a = SasamgParams::init(half, rng);
  p.branch_b = SasamgParams::init(half, rng);
  p.w_gn_a = glorot_uniform({half, half}, half, half, rng);
  p.w_gn_b = glorot_uniform({half, half}, half, half, rng);
  p.ffd = FeedForwardParams::init(channels, hidden, rng);
  return p;
}

NamedTensors BlockParams::named_parameters(const std::string& prefix) const {
  return {
      {prefix + "p_pos", p_pos},
      {prefix + "branch_a.w_q", branch_a.w_q},
      {prefix + "branch_a.w_k", branch_a.w_k},
      {prefix + "branch_b.w_q", branch_b.w_q},
      {prefix + "branch_b.w_k", branch_b.w_k},
      {prefix + "w_gn_a", w_gn_a},
      {prefix + "w_gn_b", w_gn_b},
      {prefix + "ffd.w1", ffd.w1},
      {prefix + "ffd.b1", ffd.b1},
      {prefix + "ffd.w2", ffd.w2},
      {prefix + "ffd.b2", ffd.b2},
  };
}

PatchSequence add_positional(const Tensor& x, const Tensor& p_pos) {
  if (x.shape() != p_pos.shape()) {
    throw DimensionError("add_positional: patches " + shape_string(x.shape()) +
                         " vs positional encoding " + shape_string(p_pos.shape()));
  }
  return {add(x, p_pos)};
}

Tensor graph_propagate(const Tensor& h, const Tensor& adjacency, const Tensor& w) {
  if (adjacency.rank() != 2 || h.rank() != 2 || adjacency.dim(0) != adjacency.dim(1) ||
      adjacency.dim(1) != h.dim(0)) {
    throw DimensionError("graph_propagate: adjacency " + shape_string(adjacency.shape()) +
                         " vs features " + shape_string(h.shape()));
  }
  if (w.rank() != 2 || w.dim(0) != w.dim(1) || w.dim(1) != h.dim(1)) {
    throw DimensionError("graph_propagate: weight " + shape_string(w.shape()) +
                         " vs features " + shape_string(h.shape()));
  }
  return relu(matmul(matmul(adjacency, h), transpose(w)));
}

Tensor graph_propagate(const Tensor& h, const SimilarityAdjacency& a, const Tensor& w) {
  return graph_propagate(h, a.a, w);
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
  const Tensor hidden = relu(add_row_vector(matmul(x, transpose(p.w1)), p.b1));
  return add_row_vector(matmul(hidden, transpose(p.w2)), p.b2);
}

Tensor dsamgn_block(const Tensor& x, const BlockParams& params, double beta, bool residual,
                    BlockTrace* trace) {
  if (x.rank() != 2 || x.dim(1) % 2 != 0) {
    throw DimensionError("dsamgn_block: input " + shape_string(x.shape()) +
                         " needs an even channel count");
  }
  const PatchSequence seq = add_positional(x, params.p_pos);
  const auto halves = split_channels(seq.x, 2);

  const SasamgParams* sas[2] = {&params.branch_a, &params.branch_b};
  const Tensor* gn[2] = {&params.w_gn_a, &params.w_gn_b};
  Tensor branch_out[2];
  for (std::size_t b = 0; b < 2; ++b) {
    SasamgOutput adj = sasamg_forward(halves[b], *sas[b], beta);
    branch_out[b] = graph_propagate(halves[b], adj.adjacency, *gn[b]);
    if (trace) trace->branches[b] = {std::move(adj), branch_out[b]};
  }
  Tensor y = feed_forward(concat_channels(branch_out[0], branch_out[1]), params.ffd);
  if (residual) y = add(y, x);
  if (trace) trace->output = y;
  return y;
}

Tensor stack_blocks(const Tensor& x, std::span<const BlockParams> blocks, double beta,
                    bool residual, std::vector<BlockTrace>* traces) {
  if (blocks.empty()) throw std::invalid_argument("stack_blocks: no blocks given");
  if (traces) traces->assign(blocks.size(), BlockTrace{});
  Tensor h = x;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    h = dsamgn_block(h, blocks[i], beta, residual, traces ? &(*traces)[i] : nullptr);
  }
  return h;
}

}  // namespace dsamgn
