#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "evmatch/tensor.hpp"

namespace evmatch {

// Named-tensor container, on-disk layout (little-endian):
//   magic "EVC1" | u32 version | u64 config_len | config bytes (utf-8 text)
//   u64 tensor_count
//   repeated: u32 name_len | name bytes | u32 rank | u64 dims[rank] | f64 data[numel]
// The embedded config is the fully resolved run configuration, so every
// checkpoint is self-describing.
struct Checkpoint {
  std::string config_text;
  std::map<std::string, Tensor> tensors;  // ordered -> deterministic writes
};

namespace detail {

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f, const std::string& path) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(f.good(), "checkpoint: truncated read in " + path);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "checkpoint: cannot open for write: " + path);
  f.write("EVC1", 4);
  detail::write_pod<uint32_t>(f, 1);
  detail::write_pod<uint64_t>(f, ck.config_text.size());
  f.write(ck.config_text.data(), static_cast<std::streamsize>(ck.config_text.size()));
  detail::write_pod<uint64_t>(f, ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    detail::write_pod<uint32_t>(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<uint32_t>(f, static_cast<uint32_t>(t.rank()));
    for (int64_t d = 0; d < t.rank(); ++d) detail::write_pod<uint64_t>(f, static_cast<uint64_t>(t.dim(d)));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(double))));
  }
  require(f.good(), "checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "checkpoint: cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  require(f.good() && std::memcmp(magic, "EVC1", 4) == 0, "checkpoint: bad magic in " + path);
  uint32_t version = detail::read_pod<uint32_t>(f, path);
  require(version == 1, "checkpoint: unsupported version in " + path);
  Checkpoint ck;
  uint64_t cfg_len = detail::read_pod<uint64_t>(f, path);
  ck.config_text.resize(cfg_len);
  f.read(ck.config_text.data(), static_cast<std::streamsize>(cfg_len));
  require(f.good(), "checkpoint: truncated config in " + path);
  uint64_t count = detail::read_pod<uint64_t>(f, path);
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t name_len = detail::read_pod<uint32_t>(f, path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    require(f.good(), "checkpoint: truncated name in " + path);
    uint32_t rank = detail::read_pod<uint32_t>(f, path);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d)
      shape[d] = static_cast<int64_t>(detail::read_pod<uint64_t>(f, path));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(double))));
    require(f.good(), "checkpoint: truncated payload for tensor '" + name + "' in " + path);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

}  // namespace evmatch
