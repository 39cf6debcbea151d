#include "dsamgn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsamgn/errors.hpp"
#include "dsamgn/rng.hpp"

namespace dsamgn {

namespace {

constexpr const char* kDatasetFormat = "dsamgn-dataset";
constexpr std::size_t kImageScale = 8;

Tensor ids_tensor(const std::vector<int>& ids) {
  std::vector<double> v(ids.begin(), ids.end());
  return Tensor::vector(v);
}

std::vector<int> tensor_ids(const Tensor& t) {
  std::vector<int> ids;
  for (double v : t.data()) ids.push_back(static_cast<int>(v));
  return ids;
}

struct Generator {
  const SyntheticSpec& spec;
  Rng rng;
  std::vector<std::uint8_t> is_signal;
  std::vector<std::vector<double>> prototypes;  // per identity, N·C patch-major
  std::vector<double> background;               // N·C
  std::vector<double> projection;               // image_channels × C

  explicit Generator(const SyntheticSpec& s) : spec(s), rng(s.data_seed) {}

  // Draws one sample into a patch-major N×C buffer and its noise mask.
  void draw(int id, std::vector<double>& patches, std::vector<double>& noise) {
    const std::size_t n = spec.n_patches(), c = spec.channels;
    const auto& proto = prototypes[static_cast<std::size_t>(id)];
    patches.assign(n * c, 0.0);
    noise.assign(n, 0.0);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t k = 0; k < c; ++k) {
        patches[p * c + k] = is_signal[p]
                                 ? proto[p * c + k] + spec.intra_class_jitter * rng.normal()
                                 : background[p * c + k];
      }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < spec.noise_patch_count; ++i) {
      std::swap(order[i], order[i + rng.index(n - i)]);
      const std::size_t p = order[i];
      noise[p] = 1.0;
      for (std::size_t k = 0; k < c; ++k) patches[p * c + k] = spec.noise_scale * rng.normal();
    }
  }

  // Appends the sample in the configured storage layout.
  void emit(const std::vector<double>& patches, std::vector<double>& out) const {
    const std::size_t h = spec.grid_h, w = spec.grid_w, c = spec.channels;
    if (spec.sample_format == SampleFormat::Features) {
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t p = 0; p < h * w; ++p) out.push_back(patches[p * c + k]);
      return;
    }
    const std::size_t ih = h * kImageScale, iw = w * kImageScale;
    for (std::size_t ch = 0; ch < spec.image_channels; ++ch)
      for (std::size_t y = 0; y < ih; ++y)
        for (std::size_t x = 0; x < iw; ++x) {
          const std::size_t p = (y / kImageScale) * w + x / kImageScale;
          double v = 0.0;
          for (std::size_t k = 0; k < c; ++k) v += projection[ch * c + k] * patches[p * c + k];
          out.push_back(v);
        }
  }

  SampleSet make_set(const std::vector<int>& ids) {
    SampleSet set;
    set.ids = ids;
    std::vector<double> xs, masks, patches, noise;
    for (int id : ids) {
      draw(id, patches, noise);
      emit(patches, xs);
      masks.insert(masks.end(), noise.begin(), noise.end());
    }
    Shape shape{ids.size()};
    if (spec.sample_format == SampleFormat::Features) {
      shape.insert(shape.end(), {spec.channels, spec.grid_h, spec.grid_w});
    } else {
      shape.insert(shape.end(),
                   {spec.image_channels, spec.grid_h * kImageScale, spec.grid_w * kImageScale});
    }
    set.x = Tensor(shape, std::move(xs));
    set.noise_mask = Tensor({ids.size(), spec.n_patches()}, std::move(masks));
    return set;
  }
};

}  // namespace

void SyntheticSpec::validate() const {
  if (n_identities < 2) throw ConfigError("n_identities must be at least 2");
  if (samples_per_identity < 2) {
    throw ConfigError("samples_per_identity must be at least 2 (one query plus gallery)");
  }
  if (n_patches() == 0 || channels == 0) throw ConfigError("grid and channels must be positive");
  if (signal_patch_count + noise_patch_count > n_patches()) {
    throw ConfigError("signal_patch_count + noise_patch_count exceeds the " +
                      std::to_string(n_patches()) + " patches of the grid");
  }
  if (noise_scale < 0 || intra_class_jitter < 0) {
    throw ConfigError("noise_scale and intra_class_jitter must be non-negative");
  }
  if (sample_format == SampleFormat::Images && image_channels == 0) {
    throw ConfigError("image_channels must be positive for the images format");
  }
}

SyntheticSpec SyntheticSpec::read(KeyValueConfig& kv) {
  SyntheticSpec s;
  s.n_identities = kv.get_size("n_identities", s.n_identities);
  s.samples_per_identity = kv.get_size("samples_per_identity", s.samples_per_identity);
  s.grid_h = kv.get_size("grid_h", s.grid_h);
  s.grid_w = kv.get_size("grid_w", s.grid_w);
  s.channels = kv.get_size("channels", s.channels);
  s.signal_patch_count = kv.get_size("signal_patch_count", s.signal_patch_count);
  s.noise_patch_count = kv.get_size("noise_patch_count", s.noise_patch_count);
  s.noise_scale = kv.get_double("noise_scale", s.noise_scale);
  s.intra_class_jitter = kv.get_double("intra_class_jitter", s.intra_class_jitter);
  s.foreground_offset = kv.get_double("foreground_offset", s.foreground_offset);
  const std::string fmt = kv.get_string("sample_format", "features");
  if (fmt == "features") {
    s.sample_format = SampleFormat::Features;
  } else if (fmt == "images") {
    s.sample_format = SampleFormat::Images;
  } else {
    throw ConfigError("sample_format must be features or images, got '" + fmt + "'");
  }
  s.image_channels = kv.get_size("image_channels", s.image_channels);
  s.data_seed = kv.get_u64("data_seed", s.data_seed);
  s.validate();
  return s;
}

std::vector<std::pair<std::string, std::string>> SyntheticSpec::to_pairs() const {
  return {
      {"n_identities", std::to_string(n_identities)},
      {"samples_per_identity", std::to_string(samples_per_identity)},
      {"grid_h", std::to_string(grid_h)},
      {"grid_w", std::to_string(grid_w)},
      {"channels", std::to_string(channels)},
      {"signal_patch_count", std::to_string(signal_patch_count)},
      {"noise_patch_count", std::to_string(noise_patch_count)},
      {"noise_scale", format_double(noise_scale)},
      {"intra_class_jitter", format_double(intra_class_jitter)},
      {"foreground_offset", format_double(foreground_offset)},
      {"sample_format", sample_format == SampleFormat::Features ? "features" : "images"},
      {"image_channels", std::to_string(image_channels)},
      {"data_seed", std::to_string(data_seed)},
  };
}

Tensor SampleSet::gather(std::span<const std::size_t> indices) const {
  Shape shape = x.shape();
  const std::size_t stride = shape_numel(Shape(shape.begin() + 1, shape.end()));
  shape[0] = indices.size();
  std::vector<double> values;
  values.reserve(indices.size() * stride);
  auto d = x.data();
  for (auto i : indices) {
    if (i >= size()) throw DimensionError("sample index out of range");
    values.insert(values.end(), d.begin() + i * stride, d.begin() + (i + 1) * stride);
  }
  return Tensor(shape, std::move(values));
}

Dataset generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Generator gen(spec);
  const std::size_t n = spec.n_patches(), c = spec.channels;

  // Signal region: a seeded subset of patch positions shared by all identities.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  gen.rng.shuffle(order);
  std::vector<std::size_t> signal(order.begin(), order.begin() + spec.signal_patch_count);
  std::sort(signal.begin(), signal.end());
  gen.is_signal.assign(n, 0);
  for (auto p : signal) gen.is_signal[p] = 1;

  std::vector<double> direction(c);
  double norm = 0.0;
  for (auto& v : direction) {
    v = gen.rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : direction) v *= spec.foreground_offset / (norm > 0 ? norm : 1.0);

  gen.background.resize(n * c);
  for (auto& v : gen.background) v = gen.rng.normal();
  gen.prototypes.assign(spec.n_identities, std::vector<double>(n * c, 0.0));
  for (auto& proto : gen.prototypes)
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t k = 0; k < c; ++k) proto[p * c + k] = direction[k] + gen.rng.normal();
  if (spec.sample_format == SampleFormat::Images) {
    gen.projection.resize(spec.image_channels * c);
    for (auto& v : gen.projection) v = gen.rng.normal() / std::sqrt(static_cast<double>(c));
  }

  std::vector<int> ids;
  for (std::size_t id = 0; id < spec.n_identities; ++id)
    ids.insert(ids.end(), spec.samples_per_identity, static_cast<int>(id));

  Dataset ds;
  ds.spec = spec;
  ds.signal_patches = signal;
  ds.train = gen.make_set(ids);
  // Independent draw of the same identities; first sample per identity is the query.
  const SampleSet test = gen.make_set(ids);
  std::vector<std::size_t> query_idx, gallery_idx;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    (i % spec.samples_per_identity == 0 ? query_idx : gallery_idx).push_back(i);
  }
  auto subset = [&](const std::vector<std::size_t>& idx) {
    SampleSet out;
    out.x = test.gather(idx);
    std::vector<double> masks;
    for (auto i : idx) {
      out.ids.push_back(test.ids[i]);
      auto row = test.noise_mask.data().subspan(i * n, n);
      masks.insert(masks.end(), row.begin(), row.end());
    }
    out.noise_mask = Tensor({idx.size(), n}, std::move(masks));
    return out;
  };
  ds.query = subset(query_idx);
  ds.gallery = subset(gallery_idx);
  return ds;
}

Container Dataset::to_container() const {
  Container c;
  c.set_meta("format", kDatasetFormat);
  for (const auto& [k, v] : spec.to_pairs()) c.set_meta(k, v);
  std::vector<double> sig(signal_patches.begin(), signal_patches.end());
  c.add("signal_patches", Tensor::vector(sig));
  const std::pair<const char*, const SampleSet*> sets[] = {
      {"train", &train}, {"query", &query}, {"gallery", &gallery}};
  for (const auto& [name, set] : sets) {
    c.add(std::string(name) + ".x", set->x);
    c.add(std::string(name) + ".ids", ids_tensor(set->ids));
    c.add(std::string(name) + ".noise_mask", set->noise_mask);
  }
  return c;
}

Dataset Dataset::from_container(const Container& c) {
  if (c.meta_value("format") != kDatasetFormat) {
    throw IoError("not a dataset container (missing format tag)");
  }
  KeyValueConfig kv;
  for (const auto& [k, v] : c.meta)
    if (k != "format") kv.set(k, v);
  Dataset ds;
  ds.spec = SyntheticSpec::read(kv);
  for (double v : c.tensor("signal_patches").data())
    ds.signal_patches.push_back(static_cast<std::size_t>(v));
  const std::pair<const char*, SampleSet*> sets[] = {
      {"train", &ds.train}, {"query", &ds.query}, {"gallery", &ds.gallery}};
  for (const auto& [name, set] : sets) {
    set->x = c.tensor(std::string(name) + ".x");
    set->ids = tensor_ids(c.tensor(std::string(name) + ".ids"));
    set->noise_mask = c.tensor(std::string(name) + ".noise_mask");
    if (set->x.rank() == 0 || set->x.dim(0) != set->ids.size()) {
      throw IoError(std::string("dataset split '") + name + "' is inconsistent");
    }
  }
  return ds;
}

void Dataset::save(const std::filesystem::path& path) const { save_container(path, to_container()); }

Dataset Dataset::load(const std::filesystem::path& path) {
  return from_container(load_container(path));
}

}  // namespace dsamgn
