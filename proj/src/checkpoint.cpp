#include "isnet/checkpoint.hpp"

#include <unordered_set>

#include "byteio.hpp"
#include "isnet/error.hpp"

namespace isnet {

namespace {
constexpr std::string_view kMagic = "ISNC";
constexpr std::uint8_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& records) {
  io::Writer out;
  out.bytes(kMagic);
  out.u8(kVersion);
  for (const NamedTensor& r : records) {
    if (r.name.empty() || r.name.size() > 0xFFFF) throw UsageError("checkpoint record name must be 1..65535 bytes");
    if (r.value.rank() > 255) throw UsageError("checkpoint record rank exceeds 255");
    out.u16(static_cast<std::uint16_t>(r.name.size()));
    out.bytes(r.name);
    out.u8(static_cast<std::uint8_t>(r.value.rank()));
    for (std::size_t d : r.value.shape()) {
      if (d > 0xFFFFFFFFu) throw UsageError("checkpoint extent exceeds u32");
      out.u32(static_cast<std::uint32_t>(d));
    }
    for (float v : r.value.storage()) out.f32(v);
  }
  return std::move(out.buffer());
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::Reader in(bytes, "ISNC");
  if (bytes.size() < kMagic.size() ||
      std::string_view(reinterpret_cast<const char*>(bytes.data()), kMagic.size()) != kMagic)
    in.fail("bad magic");
  in.string(kMagic.size());
  const std::uint8_t version = in.u8();
  if (version != kVersion) in.fail("unsupported version " + std::to_string(version));
  std::vector<NamedTensor> out;
  std::unordered_set<std::string> seen;
  while (!in.done()) {
    const std::uint16_t len = in.u16();
    if (len == 0) in.fail("empty record name");
    std::string name = in.string(len);
    if (!seen.insert(name).second) in.fail("duplicate record '" + name + "'");
    const std::uint8_t rank = in.u8();
    Shape shape(rank);
    for (auto& d : shape) {
      d = in.u32();
      if (d == 0) in.fail("zero extent in record '" + name + "'");
    }
    const std::size_t n = numel(shape);
    in.need(4 * n);
    std::vector<float> data(n);
    for (float& v : data) v = in.f32();
    out.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
  io::write_file(path, encode_checkpoint(records));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

const NamedTensor* find_record(const std::vector<NamedTensor>& records, std::string_view name) {
  for (const NamedTensor& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const Tensor<float>& require_record(const std::vector<NamedTensor>& records, std::string_view name) {
  const NamedTensor* r = find_record(records, name);
  if (!r) throw FormatError("ISNC: missing record '" + std::string(name) + "' (file truncated or incompatible)");
  return r->value;
}

Tensor<float> pack_u64(std::uint64_t v) {
  std::vector<float> chunks(4);
  for (int i = 0; i < 4; ++i) chunks[i] = static_cast<float>((v >> (16 * i)) & 0xFFFF);
  return Tensor<float>({4}, std::move(chunks));
}

std::uint64_t unpack_u64(const Tensor<float>& t) {
  if (t.shape() != Shape{4}) throw FormatError("ISNC: packed integer must have shape [4]");
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const float c = t[i];
    if (!(c >= 0 && c <= 65535 && c == static_cast<float>(static_cast<std::uint32_t>(c))))
      throw FormatError("ISNC: malformed packed integer");
    v |= static_cast<std::uint64_t>(c) << (16 * i);
  }
  return v;
}

}  // namespace isnet
