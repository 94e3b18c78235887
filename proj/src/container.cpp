#include "aleatoric/container.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace aleatoric {

namespace {

template <typename UInt>
void put_le(std::ostream& out, UInt v) {
  std::array<char, sizeof(UInt)> bytes{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt get_le(std::istream& in) {
  std::array<unsigned char, sizeof(UInt)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw IoError("tensor table: truncated input");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n) {
  constexpr std::uint64_t kLimit = 1ULL << 32;
  if (n > kLimit) throw IoError("tensor table: implausible length field");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError("tensor table: truncated input");
  return s;
}

}  // namespace

const Tensor& TensorTable::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw IoError("tensor table: no tensor named '" + name + "'");
}

bool TensorTable::contains(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == name; });
}

void write_table(std::ostream& out, const TensorTable& table) {
  out.write(kTableMagic, sizeof(kTableMagic));
  put_le<std::uint32_t>(out, kTableVersion);
  put_le<std::uint64_t>(out, table.metadata.size());
  out.write(table.metadata.data(), static_cast<std::streamsize>(table.metadata.size()));
  put_le<std::uint64_t>(out, table.tensors.size());
  for (const auto& [name, t] : table.tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError("tensor table: write failed");
}

TensorTable read_table(std::istream& in) {
  char magic[sizeof(kTableMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTableMagic, sizeof(magic)) != 0) throw IoError("tensor table: bad magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kTableVersion) throw IoError("tensor table: unsupported version " + std::to_string(version));
  TensorTable table;
  table.metadata = get_bytes(in, get_le<std::uint64_t>(in));
  const auto count = get_le<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = get_bytes(in, get_le<std::uint32_t>(in));
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > 8) throw IoError("tensor table: implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint64_t>(in);
    Tensor t(shape);
    for (auto& v : t.values()) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
    table.tensors.emplace_back(std::move(name), std::move(t));
  }
  return table;
}

void save_table(const std::filesystem::path& path, const TensorTable& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_table(out, table);
}

TensorTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_table(in);
}

}  // namespace aleatoric
