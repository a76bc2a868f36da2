#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ifs/codec.hpp"
#include "ifs/error.hpp"

namespace ifs {

// One named float array of a checkpoint file.
struct NamedArray {
  std::string name;
  std::vector<int> shape;  // empty shape = scalar (one value)
  std::vector<float> data;

  static NamedArray scalar(std::string name, float v) {
    NamedArray a;
    a.name = std::move(name);
    a.data = {v};
    return a;
  }
};

// Checkpoint format: magic "IFSCKPT1", u32 LE entry count, then per entry:
// u32 name length, UTF-8 name, u32 rank, u32 extents, raw 32-bit LE reals.
inline void write_checkpoint(const std::string& path,
                             const std::vector<NamedArray>& arrays) {
  detail::AtomicFile file(path);
  auto& os = file.stream();
  os.write("IFSCKPT1", 8);
  detail::write_u32(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    detail::write_u32(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(a.shape.size()));
    std::size_t numel = 1;
    for (int e : a.shape) {
      detail::write_u32(os, static_cast<std::uint32_t>(e));
      numel *= static_cast<std::size_t>(e);
    }
    if (numel != a.data.size()) {
      throw ContractError("checkpoint: array '" + a.name + "' shape/data mismatch");
    }
    os.write(reinterpret_cast<const char*>(a.data.data()),
             static_cast<std::streamsize>(a.data.size() * sizeof(float)));
  }
  file.commit();
}

inline std::vector<NamedArray> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint: " + path);
  detail::check_magic(is, "IFSCKPT1", "checkpoint");
  const std::uint32_t count = detail::read_u32(is, "entry count");
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const std::uint32_t name_len = detail::read_u32(is, "name length");
    if (name_len > 4096) throw FormatError("checkpoint: implausible name length");
    a.name.resize(name_len);
    detail::read_exact(is, a.name.data(), name_len, "name");
    const std::uint32_t rank = detail::read_u32(is, "rank");
    if (rank > 8) throw FormatError("checkpoint: implausible rank for '" + a.name + "'");
    std::uint64_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint32_t e = detail::read_u32(is, "extent");
      a.shape.push_back(static_cast<int>(e));
      numel *= e;
      if (numel > (1ull << 31)) {
        throw FormatError("checkpoint: implausible extent for '" + a.name + "'");
      }
    }
    a.data.resize(numel);
    detail::read_exact(is, a.data.data(), numel * sizeof(float), "data of '" + a.name + "'");
    arrays.push_back(std::move(a));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint: trailing bytes after last entry");
  }
  return arrays;
}

// Name-keyed view over the entries; duplicate names are a format error.
class CheckpointIndex {
 public:
  explicit CheckpointIndex(std::vector<NamedArray> arrays) : arrays_(std::move(arrays)) {
    for (std::size_t i = 0; i < arrays_.size(); ++i) {
      if (!by_name_.emplace(arrays_[i].name, i).second) {
        throw FormatError("checkpoint: duplicate entry '" + arrays_[i].name + "'");
      }
    }
  }
  const NamedArray* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : &arrays_[it->second];
  }
  const NamedArray& require(const std::string& name) const {
    const auto* a = find(name);
    if (!a) throw FormatError("checkpoint: missing entry '" + name + "'");
    return *a;
  }
  float scalar(const std::string& name) const {
    const auto& a = require(name);
    if (a.data.size() != 1) {
      throw FormatError("checkpoint: entry '" + name + "' is not a scalar");
    }
    return a.data[0];
  }
  const std::vector<NamedArray>& arrays() const { return arrays_; }

 private:
  std::vector<NamedArray> arrays_;
  std::map<std::string, std::size_t> by_name_;
};

}  // namespace ifs
