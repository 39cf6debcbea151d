#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsamgn/config.hpp"
#include "dsamgn/serialize.hpp"
#include "dsamgn/tensor.hpp"

namespace dsamgn {

enum class SampleFormat { Features, Images };

/// Synthetic re-identification data on a patch grid.
///
/// Every identity owns a prototype on a fixed set of signal patches; the
/// remaining patches carry a background pattern shared by all identities.
/// A sample is the prototype plus jitter on the signal patches, after which
/// `noise_patch_count` uniformly chosen patches are overwritten by fresh,
/// identity-independent noise.
struct SyntheticSpec {
  std::size_t n_identities = 20;
  std::size_t samples_per_identity = 8;
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  std::size_t channels = 16;
  std::size_t signal_patch_count = 8;
  std::size_t noise_patch_count = 4;
  double noise_scale = 3.0;
  double intra_class_jitter = 0.3;
  /// Length of the direction shared by every identity's signal patches.
  double foreground_offset = 1.5;
  SampleFormat sample_format = SampleFormat::Features;
  std::size_t image_channels = 3;  // Images format only
  std::uint64_t data_seed = 7;

  std::size_t n_patches() const { return grid_h * grid_w; }
  void validate() const;
  static SyntheticSpec read(KeyValueConfig& kv);
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
};

/// One split of samples. x is S×C×H×W (features) or S×I×8H×8W (images);
/// noise_mask is S×N with 1 where a patch was overwritten by noise.
struct SampleSet {
  Tensor x;
  std::vector<int> ids;
  Tensor noise_mask;

  std::size_t size() const { return ids.size(); }
  /// Samples at `indices`, stacked.
  Tensor gather(std::span<const std::size_t> indices) const;
};

/// Training draws plus an independent draw of the same identities split into
/// query (first sample per identity) and gallery (the rest).
struct Dataset {
  SyntheticSpec spec;
  std::vector<std::size_t> signal_patches;
  SampleSet train;
  SampleSet query;
  SampleSet gallery;

  Container to_container() const;
  static Dataset from_container(const Container& c);
  void save(const std::filesystem::path& path) const;
  static Dataset load(const std::filesystem::path& path);
};

Dataset generate_dataset(const SyntheticSpec& spec);

}  // namespace dsamgn
