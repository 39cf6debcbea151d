#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsamgn/tensor.hpp"

// Portable little-endian tensor files.
//
// Single tensor ("DSGT"):
//   magic "DSGT" | u32 version | u32 rank | u64 extent × rank | f64 payload
//
// Container ("DSGC"), used for datasets and checkpoints:
//   magic "DSGC" | u32 version
//   u32 meta_count  | { u32 len, key bytes, u32 len, value bytes } × meta_count
//   u32 tensor_count | manifest { u32 len, name bytes, u32 rank, u64 extent × rank } × tensor_count
//   f64 payloads of every tensor, in manifest order
namespace dsamgn {

inline constexpr std::uint32_t kFormatVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

struct Container {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void set_meta(const std::string& key, std::string value);
  std::optional<std::string> meta_value(const std::string& key) const;
  void add(const std::string& name, const Tensor& t);
  bool contains(const std::string& name) const;
  /// Throws IoError when absent.
  const Tensor& tensor(const std::string& name) const;
  /// name -> shape, in storage order.
  std::vector<std::pair<std::string, Shape>> manifest() const;
};

void write_container(std::ostream& os, const Container& c);
Container read_container(std::istream& is);
void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

/// Human-readable dump. Rank ≤ 1 is one line; higher ranks are flattened to
/// rows of the last extent. Values use 17 significant digits.
std::string to_csv(const Tensor& t);
void save_csv(const std::filesystem::path& path, const Tensor& t);

}  // namespace dsamgn
