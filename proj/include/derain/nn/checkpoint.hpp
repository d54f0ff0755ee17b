#pragma once

// Checkpoint container, all integers and floats little-endian:
//
//   "DRKT"  u32 version
//   u32 n_meta   { u32 len, key bytes, u32 len, value bytes } * n_meta
//   u32 n_arrays { u32 len, name bytes, u32 ndim, u32 dims[ndim], f32 data[prod(dims)] } * n_arrays
//
// Architecture hyperparameters live in the metadata; weights and optimizer
// moments are named arrays.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace derain::nn {

inline constexpr char kCheckpointMagic[4] = {'D', 'R', 'K', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, NamedArray>> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& [n, a] : arrays)
      if (n == name) return &a;
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 20)) throw CheckpointError("corrupt checkpoint string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw CheckpointError("truncated checkpoint");
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os.write(kCheckpointMagic, 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    detail::put_str(os, k);
    detail::put_str(os, v);
  }
  detail::put_u32(os, static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& [name, arr] : ck.arrays) {
    detail::put_str(os, name);
    detail::put_u32(os, static_cast<std::uint32_t>(arr.dims.size()));
    std::size_t count = 1;
    for (auto d : arr.dims) {
      detail::put_u32(os, d);
      count *= d;
    }
    if (count != arr.data.size()) throw CheckpointError("array " + name + " dims/data mismatch");
    for (float f : arr.data) detail::put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw CheckpointError("failed writing checkpoint");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const std::uint32_t n_meta = detail::get_u32(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = detail::get_str(is);
    ck.meta[k] = detail::get_str(is);
  }
  const std::uint32_t n_arrays = detail::get_u32(is);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    std::string name = detail::get_str(is);
    NamedArray arr;
    const std::uint32_t ndim = detail::get_u32(is);
    if (ndim > 8) throw CheckpointError("corrupt checkpoint rank for " + name);
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      arr.dims.push_back(detail::get_u32(is));
      count *= arr.dims.back();
    }
    if (count > (std::size_t{1} << 30)) throw CheckpointError("corrupt checkpoint size for " + name);
    arr.data.resize(count);
    for (auto& f : arr.data) f = std::bit_cast<float>(detail::get_u32(is));
    ck.arrays.emplace_back(std::move(name), std::move(arr));
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write " + path.string());
  write_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace derain::nn
