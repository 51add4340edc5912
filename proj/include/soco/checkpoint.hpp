#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "soco/errors.hpp"
#include "soco/tensor.hpp"

namespace soco {

// Binary tensor container:
//   magic "SOCO" | version u32 | count u32
//   per entry: name_len u32 | name bytes | dtype u8 (0 = f64) | rank u32 |
//              dims u64 x rank | payload f64, little-endian
inline constexpr uint32_t kContainerVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("tensor container: truncated file");
  return v;
}

}  // namespace detail

inline void write_tensors_stream(std::ostream& os,
                                 const std::vector<std::pair<std::string, const Tensor*>>& entries) {
  os.write("SOCO", 4);
  detail::write_pod<uint32_t>(os, kContainerVersion);
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<uint8_t>(os, 0);  // f64
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t->shape.size()));
    for (int64_t d : t->shape) detail::write_pod<uint64_t>(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t->data.data()),
             static_cast<std::streamsize>(t->data.size() * sizeof(double)));
  }
}

// Atomic write: spill to <path>.tmp, then rename over the destination.
inline void write_tensors(const std::string& path,
                          const std::vector<std::pair<std::string, const Tensor*>>& entries) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("write_tensors: cannot open " + tmp);
    write_tensors_stream(f, entries);
    if (!f) throw FormatError("write_tensors: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("write_tensors: cannot rename " + tmp + " -> " + path);
}

inline std::map<std::string, Tensor> read_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("read_tensors: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "SOCO", 4) != 0)
    throw FormatError("read_tensors: bad magic in " + path);
  uint32_t version = detail::read_pod<uint32_t>(f);
  if (version != kContainerVersion)
    throw FormatError("read_tensors: unsupported version " + std::to_string(version));
  uint32_t count = detail::read_pod<uint32_t>(f);
  std::map<std::string, Tensor> out;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = detail::read_pod<uint32_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f) throw FormatError("read_tensors: truncated name");
    uint8_t dtype = detail::read_pod<uint8_t>(f);
    if (dtype != 0) throw FormatError("read_tensors: unknown dtype tag");
    uint32_t rank = detail::read_pod<uint32_t>(f);
    std::vector<int64_t> shape;
    for (uint32_t r = 0; r < rank; ++r)
      shape.push_back(static_cast<int64_t>(detail::read_pod<uint64_t>(f)));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) throw FormatError("read_tensors: truncated payload for " + name);
    if (out.count(name)) throw FormatError("read_tensors: duplicate entry " + name);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace soco
