#include "vmrn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "vmrn/error.hpp"

namespace vmrn {

namespace {

constexpr char kMagic[4] = {'V', 'M', 'R', 'N'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParseError(path + ": truncated checkpoint");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is, const std::string& path) {
  const uint32_t bits = get_u32(is, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const NamedTensors& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  for (const auto& [name, tensor] : entries) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(tensor.rank()));
    for (int64_t d : tensor.shape()) put_u32(os, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < tensor.numel(); ++i) put_f32(os, static_cast<float>(tensor[i]));
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

NamedTensors read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError(path + ": not a VMRN checkpoint");
  }
  const uint32_t version = get_u32(is, path);
  if (version != kVersion) {
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  NamedTensors entries;
  while (is.peek() != std::char_traits<char>::eof()) {
    const uint32_t name_len = get_u32(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw ParseError(path + ": truncated checkpoint");
    const uint32_t rank = get_u32(is, path);
    std::vector<int64_t> shape(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = get_u32(is, path);
      numel *= shape[i];
    }
    Tensor t(shape);
    for (int64_t i = 0; i < numel; ++i) t[i] = static_cast<double>(get_f32(is, path));
    entries.emplace_back(std::move(name), std::move(t));
  }
  return entries;
}

}  // namespace vmrn
