#pragma once

// "AGT1" tensor files: 4-byte magic, u32 rank, rank x u32 dims, then the
// row-major float32 payload. All integers and floats little-endian.

#include <torch/torch.h>

#include <filesystem>

namespace agegan {

inline constexpr char kTensorMagic[4] = {'A', 'G', 'T', '1'};
inline constexpr int64_t kMaxTensorRank = 4;

// Writes a float32 copy of `t`. Throws ArgumentError for rank > 4, IoError on
// write failure.
void save_tensor(const std::filesystem::path& path, const torch::Tensor& t);

// Throws FormatError on bad magic, bad rank, or truncated payload; IoError if
// the file cannot be opened.
torch::Tensor load_tensor(const std::filesystem::path& path);

}  // namespace agegan
