#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "aleatoric/tensor.hpp"

namespace aleatoric {

/// Self-describing binary tensor table shared by checkpoints and matrix caches.
///
/// Layout (all integers little-endian):
///
///   magic      8 bytes  "ALEATBL\0"
///   version    u32      1
///   meta_len   u64      byte length of the metadata string
///   meta       bytes    UTF-8 JSON
///   count      u64      number of tensors
///   per tensor:
///     name_len u32, name bytes
///     rank     u32, dims u64[rank]
///     payload  f64[prod(dims)], IEEE-754 binary64, little-endian, row-major
struct TensorTable {
  std::string metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

inline constexpr char kTableMagic[8] = {'A', 'L', 'E', 'A', 'T', 'B', 'L', '\0'};
inline constexpr std::uint32_t kTableVersion = 1;

void write_table(std::ostream& out, const TensorTable& table);
TensorTable read_table(std::istream& in);

void save_table(const std::filesystem::path& path, const TensorTable& table);
TensorTable load_table(const std::filesystem::path& path);

}  // namespace aleatoric
