#include "dsamgn/model.hpp"

#include <algorithm>

#include "dsamgn/errors.hpp"
#include "dsamgn/init.hpp"
#include "dsamgn/ops.hpp"

namespace dsamgn {

namespace {

constexpr std::size_t kToyConvLayers = 3;
constexpr std::size_t kToyConvScale = 8;  // 2^kToyConvLayers
constexpr const char* kCheckpointFormat = "dsamgn-checkpoint";

Backbone parse_backbone(const std::string& s) {
  if (s == "toy_conv") return Backbone::ToyConv;
  if (s == "passthrough") return Backbone::Passthrough;
  throw ConfigError("backbone must be toy_conv or passthrough, got '" + s + "'");
}

RetrievalPoint parse_retrieval(const std::string& s) {
  if (s == "gap") return RetrievalPoint::Gap;
  if (s == "bn") return RetrievalPoint::Bn;
  throw ConfigError("retrieval_embedding must be gap or bn, got '" + s + "'");
}

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw IoError("checkpoint tensor '" + name + "' has shape " + shape_string(src.shape()) +
                  ", model expects " + shape_string(dst.shape()));
  }
  std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

}  // namespace

std::string to_string(Backbone b) { return b == Backbone::ToyConv ? "toy_conv" : "passthrough"; }
std::string to_string(RetrievalPoint r) { return r == RetrievalPoint::Gap ? "gap" : "bn"; }

Shape ModelConfig::sample_shape() const {
  if (backbone == Backbone::ToyConv) {
    return {image_channels, grid_h * kToyConvScale, grid_w * kToyConvScale};
  }
  return {channels, grid_h, grid_w};
}

void ModelConfig::validate() const {
  if (channels == 0 || channels % 2 != 0) {
    throw ConfigError("channels must be even and positive, got " + std::to_string(channels));
  }
  if (n_patches() == 0) throw ConfigError("grid_h·grid_w must be at least 1");
  if (n_identities < 2) throw ConfigError("n_identities must be at least 2");
  if (!(beta >= 0.0 && beta <= 100.0)) {
    throw ConfigError("beta must lie in [0, 100], got " + format_double(beta));
  }
  if (n_blocks == 0) throw ConfigError("n_blocks must be at least 1");
  if (backbone == Backbone::ToyConv && image_channels == 0) {
    throw ConfigError("image_channels must be positive for toy_conv");
  }
}

ModelConfig ModelConfig::read(KeyValueConfig& kv) {
  ModelConfig c;
  c.grid_h = kv.get_size("grid_h", c.grid_h);
  c.grid_w = kv.get_size("grid_w", c.grid_w);
  c.channels = kv.get_size("channels", c.channels);
  c.n_blocks = kv.get_size("n_blocks", c.n_blocks);
  c.beta = kv.get_double("beta", c.beta);
  c.ffd_hidden = kv.get_size("ffd_hidden", c.ffd_hidden);
  c.n_identities = kv.get_size("n_identities", c.n_identities);
  c.backbone = parse_backbone(kv.get_string("backbone", to_string(c.backbone)));
  c.residual = kv.get_bool("residual", c.residual);
  c.retrieval_embedding =
      parse_retrieval(kv.get_string("retrieval_embedding", to_string(c.retrieval_embedding)));
  c.image_channels = kv.get_size("image_channels", c.image_channels);
  c.model_seed = kv.get_u64("model_seed", c.model_seed);
  c.validate();
  return c;
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_pairs() const {
  return {
      {"grid_h", std::to_string(grid_h)},
      {"grid_w", std::to_string(grid_w)},
      {"channels", std::to_string(channels)},
      {"n_blocks", std::to_string(n_blocks)},
      {"beta", format_double(beta)},
      {"ffd_hidden", std::to_string(ffd_hidden)},
      {"n_identities", std::to_string(n_identities)},
      {"backbone", to_string(backbone)},
      {"residual", residual ? "true" : "false"},
      {"retrieval_embedding", to_string(retrieval_embedding)},
      {"image_channels", std::to_string(image_channels)},
      {"model_seed", std::to_string(model_seed)},
  };
}

Model::Model(ModelConfig config) : config_(std::move(config)), bn_(config_.channels) {
  config_.validate();
  Rng rng(config_.model_seed);
  const std::size_t c = config_.channels;
  if (config_.backbone == Backbone::ToyConv) {
    std::size_t cin = config_.image_channels;
    for (std::size_t l = 0; l < kToyConvLayers; ++l) {
      toy_conv_.weights.push_back(glorot_uniform({c, cin, 3, 3}, cin * 9, c * 9, rng));
      toy_conv_.biases.push_back(zeros_param({c}));
      cin = c;
    }
  }
  for (std::size_t b = 0; b < config_.n_blocks; ++b) {
    blocks_.push_back(BlockParams::init(config_.n_patches(), c, config_.hidden_width(), rng));
  }
  classifier_ = glorot_uniform({config_.n_identities, c}, c, config_.n_identities, rng);
}

void Model::set_beta(double beta) {
  config_.beta = beta;
  config_.validate();
}

Tensor Model::backbone_forward(const Tensor& batch) const {
  Shape expected = config_.sample_shape();
  if (batch.rank() != 4 || !std::equal(expected.begin(), expected.end(), batch.shape().begin() + 1)) {
    throw DimensionError("backbone (" + to_string(config_.backbone) + ") expects B×" +
                         shape_string(expected) + " input, got " + shape_string(batch.shape()));
  }
  if (config_.backbone == Backbone::Passthrough) return batch;
  Tensor h = batch;
  for (std::size_t l = 0; l < toy_conv_.weights.size(); ++l) {
    h = relu(conv2d(h, toy_conv_.weights[l], toy_conv_.biases[l], 2, 1));
  }
  return h;
}

ForwardOutputs Model::forward(const Tensor& batch, bool training,
                              std::vector<std::vector<BlockTrace>>* traces) {
  const Tensor features = backbone_forward(batch);
  ForwardOutputs out;
  out.backbone_vec = spatial_mean(features);

  const Tensor patches = reshape_to_patches(features);
  const std::size_t b = patches.dim(0);
  if (traces) traces->assign(b, {});
  std::vector<Tensor> pooled;
  pooled.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor y = stack_blocks(select(patches, i), blocks_, config_.beta, config_.residual,
                                  traces ? &(*traces)[i] : nullptr);
    pooled.push_back(mean_over_axis(y, 0));
  }
  out.gap_vec = stack(pooled);
  out.bn_vec = batch_norm_1d(out.gap_vec, bn_, training);
  out.logits = matmul(out.bn_vec, transpose(classifier_));
  return out;
}

Tensor Model::embed(const Tensor& batch) {
  return forward(batch, false).embedding(config_.retrieval_embedding).detach();
}

NamedTensors Model::parameters() const {
  NamedTensors p;
  for (std::size_t l = 0; l < toy_conv_.weights.size(); ++l) {
    p.emplace_back("backbone.conv" + std::to_string(l) + ".w", toy_conv_.weights[l]);
    p.emplace_back("backbone.conv" + std::to_string(l) + ".b", toy_conv_.biases[l]);
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    auto named = blocks_[b].named_parameters("block" + std::to_string(b) + ".");
    p.insert(p.end(), named.begin(), named.end());
  }
  p.emplace_back("bn.gamma", bn_.gamma);
  p.emplace_back("bn.beta", bn_.beta);
  p.emplace_back("classifier.w", classifier_);
  return p;
}

NamedTensors Model::buffers() const {
  return {
      {"bn.running_mean", Tensor::vector(bn_.running_mean)},
      {"bn.running_var", Tensor::vector(bn_.running_var)},
  };
}

Container Model::to_checkpoint() const {
  Container c;
  c.set_meta("format", kCheckpointFormat);
  for (const auto& [k, v] : config_.to_pairs()) c.set_meta(k, v);
  for (const auto& [name, t] : parameters()) c.add(name, t);
  for (const auto& [name, t] : buffers()) c.add(name, t);
  return c;
}

Model Model::from_checkpoint(const Container& c) {
  if (c.meta_value("format") != kCheckpointFormat) {
    throw IoError("not a checkpoint container (missing format tag)");
  }
  KeyValueConfig kv;
  for (const auto& [k, v] : c.meta) {
    if (k != "format") kv.set(k, v);
  }
  Model model(ModelConfig::read(kv));
  for (auto& [name, t] : model.parameters()) {
    Tensor dst = t;
    copy_into(dst, c.tensor(name), name);
  }
  const Tensor& rm = c.tensor("bn.running_mean");
  const Tensor& rv = c.tensor("bn.running_var");
  if (rm.numel() != model.bn_.channels() || rv.numel() != model.bn_.channels()) {
    throw IoError("checkpoint batch-norm statistics do not match the channel count");
  }
  model.bn_.running_mean.assign(rm.data().begin(), rm.data().end());
  model.bn_.running_var.assign(rv.data().begin(), rv.data().end());
  return model;
}

void Model::save(const std::filesystem::path& path) const { save_container(path, to_checkpoint()); }

Model Model::load(const std::filesystem::path& path) { return from_checkpoint(load_container(path)); }

}  // namespace dsamgn
