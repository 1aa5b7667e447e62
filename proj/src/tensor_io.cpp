#include "agegan/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "agegan/errors.hpp"

namespace agegan {
namespace {

void put_u32(std::vector<char>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const torch::Tensor& t) {
  if (t.dim() > kMaxTensorRank) throw ArgumentError("AGT1 files hold tensors of rank <= 4");
  auto data = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();

  std::vector<char> bytes(kTensorMagic, kTensorMagic + 4);
  put_u32(bytes, static_cast<uint32_t>(data.dim()));
  for (int64_t d : data.sizes()) put_u32(bytes, static_cast<uint32_t>(d));
  const auto* values = data.data_ptr<float>();
  for (int64_t i = 0; i < data.numel(); ++i) put_u32(bytes, std::bit_cast<uint32_t>(values[i]));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

torch::Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 8 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0) {
    throw FormatError(path.string() + ": not an AGT1 tensor file");
  }
  const uint32_t rank = get_u32(bytes.data() + 4);
  if (rank > kMaxTensorRank) throw FormatError(path.string() + ": rank exceeds 4");
  const size_t header = 8 + 4 * static_cast<size_t>(rank);
  if (bytes.size() < header) throw FormatError(path.string() + ": truncated header");

  std::vector<int64_t> dims;
  size_t count = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    dims.push_back(get_u32(bytes.data() + 8 + 4 * i));
    count *= static_cast<size_t>(dims.back());
  }
  if (bytes.size() != header + 4 * count) {
    throw FormatError(path.string() + ": payload size does not match dims");
  }
  auto t = torch::empty(dims, torch::kFloat32);
  auto* values = t.data_ptr<float>();
  for (size_t i = 0; i < count; ++i) values[i] = std::bit_cast<float>(get_u32(bytes.data() + header + 4 * i));
  return t;
}

}  // namespace agegan
