#include "dsamgn/serialize.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dsamgn/errors.hpp"

namespace dsamgn {

namespace {

constexpr std::array<char, 4> kTensorMagic = {'D', 'S', 'G', 'T'};
constexpr std::array<char, 4> kContainerMagic = {'D', 'S', 'G', 'C'};
constexpr std::uint32_t kMaxRank = 16;

template <class U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!is) throw IoError("unexpected end of tensor stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto len = get_le<std::uint32_t>(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw IoError("unexpected end of tensor stream");
  return s;
}

void put_shape(std::ostream& os, const Shape& shape) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_le<std::uint64_t>(os, d);
}

Shape get_shape(std::istream& is) {
  const auto rank = get_le<std::uint32_t>(is);
  if (rank > kMaxRank) throw IoError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_le<std::uint64_t>(is);
  return shape;
}

void put_payload(std::ostream& os, const Tensor& t) {
  for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}

Tensor get_payload(std::istream& is, Shape shape) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
  return Tensor(std::move(shape), std::move(values));
}

void check_magic(std::istream& is, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  is.read(got.data(), got.size());
  if (!is || got != magic) {
    throw IoError(std::string("bad magic, expected ") + std::string(magic.data(), 4));
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kFormatVersion) throw IoError("unsupported format version " + std::to_string(version));
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic.data(), kTensorMagic.size());
  put_le<std::uint32_t>(os, kFormatVersion);
  put_shape(os, t.shape());
  put_payload(os, t);
}

Tensor read_tensor(std::istream& is) {
  check_magic(is, kTensorMagic);
  return get_payload(is, get_shape(is));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
  if (!os) throw IoError("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

void Container::set_meta(const std::string& key, std::string value) {
  for (auto& [k, v] : meta) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  meta.emplace_back(key, std::move(value));
}

std::optional<std::string> Container::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  return std::nullopt;
}

void Container::add(const std::string& name, const Tensor& t) {
  for (auto& [n, existing] : tensors) {
    if (n == name) {
      existing = t;
      return;
    }
  }
  tensors.emplace_back(name, t);
}

bool Container::contains(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IoError("container has no tensor named '" + name + "'");
}

std::vector<std::pair<std::string, Shape>> Container::manifest() const {
  std::vector<std::pair<std::string, Shape>> m;
  for (const auto& [n, t] : tensors) m.emplace_back(n, t.shape());
  return m;
}

void write_container(std::ostream& os, const Container& c) {
  os.write(kContainerMagic.data(), kContainerMagic.size());
  put_le<std::uint32_t>(os, kFormatVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    put_string(os, k);
    put_string(os, v);
  }
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [n, t] : c.tensors) {
    put_string(os, n);
    put_shape(os, t.shape());
  }
  for (const auto& [n, t] : c.tensors) put_payload(os, t);
}

Container read_container(std::istream& is) {
  check_magic(is, kContainerMagic);
  Container c;
  const auto n_meta = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = get_string(is);
    auto v = get_string(is);
    c.meta.emplace_back(std::move(k), std::move(v));
  }
  const auto n_tensors = get_le<std::uint32_t>(is);
  std::vector<std::pair<std::string, Shape>> manifest;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = get_string(is);
    manifest.emplace_back(std::move(name), get_shape(is));
  }
  for (auto& [name, shape] : manifest) c.tensors.emplace_back(name, get_payload(is, shape));
  return c;
}

void save_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_container(os, c);
  if (!os) throw IoError("write failed: " + path.string());
}

Container load_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_container(is);
}

std::string to_csv(const Tensor& t) {
  const std::size_t cols = t.rank() <= 1 ? t.numel() : t.shape().back();
  const std::size_t rows = cols == 0 ? 0 : t.numel() / cols;
  std::string out;
  char buf[32];
  auto d = t.data();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) out += ',';
      std::snprintf(buf, sizeof buf, "%.17g", d[i * cols + j]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void save_csv(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << to_csv(t);
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace dsamgn
