#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "isnet/tensor.hpp"

namespace isnet {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
  bool operator==(const NamedTensor&) const = default;
};

// ISNC: "ISNC", u8 version 1, then records until end of file:
// u16 name length, UTF-8 name, u8 rank, rank x u32 extents, float32 payload,
// all little endian. Record order is preserved.
std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& records);
// FormatError (with byte offset) on bad magic/version, truncation inside a
// record, zero extents or duplicate names.
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

// Lookup helpers over a decoded record list.
const NamedTensor* find_record(const std::vector<NamedTensor>& records, std::string_view name);
// FormatError when the record is missing (a file cut at a record boundary
// loses whole records).
const Tensor<float>& require_record(const std::vector<NamedTensor>& records, std::string_view name);

// Exact float32 encoding of a 64-bit integer as four 16-bit chunks.
Tensor<float> pack_u64(std::uint64_t v);
std::uint64_t unpack_u64(const Tensor<float>& t);

}  // namespace isnet
